//! IDX (MNIST container) images and labels, plus a dataset cache built on it.

use std::fs;
use std::path::Path;

use dign_core::datasets::Dataset;
use dign_core::Tensor;
use thiserror::Error;

use crate::error::{CliError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdxError {
    #[error("bad magic 0x{found:08x} at byte {offset}, expected 0x{expected:08x}")]
    BadMagic { offset: usize, expected: u32, found: u32 },
    #[error("truncated at byte {offset}: need {needed} bytes, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("{extra} trailing bytes after byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("zero extent in header at byte {offset}")]
    ZeroExtent { offset: usize },
    #[error("count mismatch: {images} images vs {labels} labels (count field at byte 4)")]
    CountMismatch { images: usize, labels: usize },
}

fn be_u32(bytes: &[u8], offset: usize) -> std::result::Result<u32, IdxError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            offset,
            needed: offset + 4,
            len: bytes.len(),
        })
}

fn header(bytes: &[u8], magic: u32, dims: usize) -> std::result::Result<Vec<usize>, IdxError> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(IdxError::BadMagic {
            offset: 0,
            expected: magic,
            found,
        });
    }
    let mut extents = Vec::with_capacity(dims);
    for d in 0..dims {
        let offset = 4 + 4 * d;
        let e = be_u32(bytes, offset)? as usize;
        if e == 0 {
            return Err(IdxError::ZeroExtent { offset });
        }
        extents.push(e);
    }
    Ok(extents)
}

fn payload(bytes: &[u8], start: usize, n: usize) -> std::result::Result<&[u8], IdxError> {
    let end = start + n;
    if bytes.len() < end {
        return Err(IdxError::Truncated {
            offset: bytes.len(),
            needed: end,
            len: bytes.len(),
        });
    }
    if bytes.len() > end {
        return Err(IdxError::TrailingBytes {
            offset: end,
            extra: bytes.len() - end,
        });
    }
    Ok(&bytes[start..end])
}

/// Images as `[N, 1, rows, cols]` with bytes scaled by 1/255.
pub fn parse_images(bytes: &[u8]) -> std::result::Result<Tensor, IdxError> {
    let e = header(bytes, IMAGES_MAGIC, 3)?;
    let data = payload(bytes, 16, e[0] * e[1] * e[2])?;
    let values = data.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Tensor::new(vec![e[0], 1, e[1], e[2]], values).expect("extents are positive"))
}

pub fn parse_labels(bytes: &[u8]) -> std::result::Result<Vec<usize>, IdxError> {
    let e = header(bytes, LABELS_MAGIC, 1)?;
    Ok(payload(bytes, 8, e[0])?.iter().map(|&b| usize::from(b)).collect())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Single-channel images, pixels rounded to the nearest 8-bit level.
pub fn encode_images(images: &Tensor) -> Result<Vec<u8>> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(CliError::Validation(format!(
            "IDX images must be [N, 1, H, W], got {s:?}"
        )));
    }
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for &e in [s[0], s[2], s[3]].iter() {
        out.extend_from_slice(&(e as u32).to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn encode_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| CliError::Validation(format!("label {l} does not fit in a byte")))?;
        out.push(b);
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn idx_err(path: &Path) -> impl FnOnce(IdxError) -> CliError + '_ {
    move |source| CliError::Idx {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads an image/label pair; the class count is one past the largest label (at least 2).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_images(&read(images_path)?).map_err(idx_err(images_path))?;
    let labels = parse_labels(&read(labels_path)?).map_err(idx_err(labels_path))?;
    if images.batch() != labels.len() {
        return Err(CliError::Idx {
            path: labels_path.to_path_buf(),
            source: IdxError::CountMismatch {
                images: images.batch(),
                labels: labels.len(),
            },
        });
    }
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    let id = images_path
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Dataset::new(images, labels, classes, id)?)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    write(images_path, &encode_images(&dataset.images)?)?;
    write(labels_path, &encode_labels(&dataset.labels)?)
}

/// Writes `{name}-images.idx`, `{name}-labels.idx` and a `{name}.meta` sidecar.
pub fn save_cache(dir: &Path, name: &str, dataset: &Dataset, meta: &[(&str, String)]) -> Result<()> {
    write_idx(
        dataset,
        &dir.join(format!("{name}-images.idx")),
        &dir.join(format!("{name}-labels.idx")),
    )?;
    let mut text = format!("id {}\nclasses {}\n", dataset.id, dataset.num_classes);
    for (k, v) in meta {
        text.push_str(&format!("{k} {v}\n"));
    }
    write(&dir.join(format!("{name}.meta")), text.as_bytes())
}

/// Reads a cache written by [`save_cache`], restoring id and class count from the sidecar.
pub fn load_cache(dir: &Path, name: &str) -> Result<Dataset> {
    let mut d = load_idx(
        &dir.join(format!("{name}-images.idx")),
        &dir.join(format!("{name}-labels.idx")),
    )?;
    let meta_path = dir.join(format!("{name}.meta"));
    let meta = fs::read_to_string(&meta_path).map_err(|e| CliError::io(&meta_path, e))?;
    let mut classes = d.num_classes;
    for line in meta.lines() {
        match line.split_once(' ') {
            Some(("id", v)) => d.id = v.to_string(),
            Some(("classes", v)) => {
                classes = v.parse().map_err(|_| CliError::Parse {
                    path: meta_path.clone(),
                    message: format!("bad class count {v:?}"),
                })?
            }
            _ => {}
        }
    }
    Ok(Dataset::new(d.images, d.labels, classes, d.id)?)
}
