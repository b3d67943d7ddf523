//! In-memory labelled image sets and the seeded sinusoidal-texture benchmark.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::autodiff::check_labels;
use crate::error::{config_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

const TEMPLATE_STREAM: u64 = 0x7E3A;
const SPLIT_STREAMS: [u64; 3] = [0x5171, 0x5172, 0x5173];
const MAX_FREQUENCY_DRAWS: usize = 1000;

/// Images `[B, C, H, W]` in `[0, 1]` with labels in `[0, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub id: String,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize, id: impl Into<String>) -> Result<Self> {
        if images.shape().len() != 4 || images.batch() != labels.len() {
            return Err(Error::DimensionMismatch {
                op: "dataset",
                left: images.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if num_classes < 2 {
            return Err(config_err(format!("need at least 2 classes, got {num_classes}")));
        }
        check_labels(&labels, num_classes)?;
        check_pixels(&images)?;
        Ok(Self {
            images,
            labels,
            num_classes,
            id: id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn subset(&self, idx: &[usize], id: impl Into<String>) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Empty("dataset subset"));
        }
        Ok(Self {
            images: self.images.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            id: id.into(),
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

pub(crate) fn check_pixels(images: &Tensor) -> Result<()> {
    match images
        .data()
        .iter()
        .position(|v| !(0.0..=1.0).contains(v))
    {
        Some(index) => Err(Error::PixelOutOfRange {
            index,
            value: images.data()[index],
        }),
        None => Ok(()),
    }
}

/// Parameters of the sinusoidal texture benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Half-width of the uniform per-pixel jitter.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            height: 16,
            width: 16,
            train_per_class: 500,
            val_per_class: 100,
            test_per_class: 250,
            jitter: 0.08,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(config_err("synthetic set needs at least 2 classes"));
        }
        if self.classes > 16 {
            return Err(config_err("at most 16 distinct frequency pairs exist"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(config_err("image extent must be positive"));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(config_err("jitter must be a finite value >= 0"));
        }
        if self.train_per_class == 0 || self.val_per_class == 0 || self.test_per_class == 0 {
            return Err(config_err("every split needs at least one sample per class"));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        format!(
            "synth-k{}-{}x{}-j{}-s{}",
            self.classes, self.height, self.width, self.jitter, self.seed
        )
    }
}

/// One class template `0.5 + 0.35 sin(2 pi (fx i + fy j) / H + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texture {
    pub fx: usize,
    pub fy: usize,
    pub phase: f64,
}

/// Draws per-class templates with distinct frequency pairs.
pub fn texture_classes(spec: &SynthSpec) -> Result<Vec<Texture>> {
    spec.validate()?;
    let mut rng = Rng::stream(spec.seed, &[TEMPLATE_STREAM]);
    let mut out: Vec<Texture> = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        let mut drawn = None;
        for _ in 0..MAX_FREQUENCY_DRAWS {
            let (fx, fy) = (1 + rng.below(4), 1 + rng.below(4));
            if out.iter().all(|t| (t.fx, t.fy) != (fx, fy)) {
                drawn = Some((fx, fy));
                break;
            }
        }
        let (fx, fy) = drawn.ok_or_else(|| {
            Error::Generation(format!(
                "no distinct frequency pair after {MAX_FREQUENCY_DRAWS} draws"
            ))
        })?;
        let phase = rng.uniform_range(0.0, 2.0 * PI);
        out.push(Texture { fx, fy, phase });
    }
    Ok(out)
}

/// Noise-free template image of one class, `[H * W]` row-major.
pub fn render_template(t: &Texture, height: usize, width: usize) -> Vec<f64> {
    let mut img = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            let arg = 2.0 * PI * (t.fx * i + t.fy * j) as f64 / height as f64 + t.phase;
            img.push(0.5 + 0.35 * libm::sin(arg));
        }
    }
    img
}

/// Generates (train, val, test) with class-balanced, interleaved labels.
pub fn generate_synth(spec: &SynthSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let textures = texture_classes(spec)?;
    let templates: Vec<Vec<f64>> = textures
        .iter()
        .map(|t| render_template(t, spec.height, spec.width))
        .collect();
    let make = |per_class: usize, stream: u64, name: &str| -> Result<Dataset> {
        let mut rng = Rng::stream(spec.seed, &[stream]);
        let n = per_class * spec.classes;
        let hw = spec.height * spec.width;
        let mut data = Vec::with_capacity(n * hw);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % spec.classes;
            labels.push(c);
            for &v in &templates[c] {
                let jittered = v + spec.jitter * rng.uniform_range(-1.0, 1.0);
                data.push(jittered.clamp(0.0, 1.0));
            }
        }
        let images = Tensor::new(vec![n, 1, spec.height, spec.width], data)?;
        Dataset::new(images, labels, spec.classes, format!("{}/{name}", spec.id()))
    };
    Ok((
        make(spec.train_per_class, SPLIT_STREAMS[0], "train")?,
        make(spec.val_per_class, SPLIT_STREAMS[1], "val")?,
        make(spec.test_per_class, SPLIT_STREAMS[2], "test")?,
    ))
}

/// Seeded split into `fractions.len()` disjoint parts of size `floor(f * n)`.
///
/// With `stratified`, each class is permuted and sliced on its own so every
/// part keeps class counts within one of proportional.
pub fn split(dataset: &Dataset, fractions: &[f64], seed: u64, stratified: bool) -> Result<Vec<Dataset>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(config_err("split fractions must be positive"));
    }
    let total: f64 = fractions.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(config_err(format!("split fractions sum to {total} > 1")));
    }
    let mut rng = Rng::stream(seed, &[0x5B11]);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
    let groups: Vec<Vec<usize>> = if stratified {
        (0..dataset.num_classes)
            .map(|c| (0..dataset.len()).filter(|&i| dataset.labels[i] == c).collect())
            .collect()
    } else {
        vec![(0..dataset.len()).collect()]
    };
    for group in groups {
        let perm = rng.permutation(group.len());
        let mut start = 0;
        for (part, &f) in parts.iter_mut().zip(fractions) {
            let take = libm::floor(f * group.len() as f64 + 1e-9) as usize;
            let take = take.min(group.len() - start);
            part.extend(perm[start..start + take].iter().map(|&p| group[p]));
            start += take;
        }
    }
    if stratified {
        // Interleave classes again so parts are not label-sorted.
        for part in parts.iter_mut() {
            let perm = rng.permutation(part.len());
            *part = perm.into_iter().map(|p| part[p]).collect();
        }
    }
    parts
        .iter()
        .enumerate()
        .map(|(k, idx)| dataset.subset(idx, format!("{}/split{k}", dataset.id)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            train_per_class: 20,
            val_per_class: 5,
            test_per_class: 10,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let a = generate_synth(&small()).unwrap();
        let b = generate_synth(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.class_counts(), vec![20; 4]);
        assert_eq!(a.1.class_counts(), vec![5; 4]);
        assert_eq!(a.2.class_counts(), vec![10; 4]);
        assert_ne!(a.0.images.row(0), a.2.images.row(0));
        for d in [&a.0, &a.1, &a.2] {
            assert!(d.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn templates_are_well_separated_for_default_seed() {
        let spec = SynthSpec::default();
        let tex = texture_classes(&spec).unwrap();
        let imgs: Vec<Vec<f64>> = tex.iter().map(|t| render_template(t, 16, 16)).collect();
        let mut min = f64::MAX;
        for i in 0..imgs.len() {
            for j in i + 1..imgs.len() {
                let d: f64 = imgs[i].iter().zip(&imgs[j]).map(|(a, b)| (a - b).powi(2)).sum();
                min = min.min(d.sqrt());
            }
            assert!(tex.iter().filter(|t| (t.fx, t.fy) == (tex[i].fx, tex[i].fy)).count() == 1);
        }
        assert!(min > 0.5, "min template distance {min}");
    }

    #[test]
    fn too_many_classes_is_rejected() {
        let spec = SynthSpec {
            classes: 17,
            ..small()
        };
        assert!(generate_synth(&spec).is_err());
    }

    #[test]
    fn split_properties() {
        let (train, _, _) = generate_synth(&small()).unwrap();
        let whole = split(&train, &[1.0], 3, false).unwrap();
        let mut a = whole[0].labels.clone();
        let mut b = train.labels.clone();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);

        assert!(split(&train, &[0.7, 0.5], 0, false).is_err());
        assert!(split(&train, &[0.0], 0, false).is_err());
    }

    #[test]
    fn split_parts_are_disjoint() {
        // Tag every image with a unique first pixel to recover indices.
        let n = 30;
        let data: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let ds = Dataset::new(
            Tensor::new(vec![n, 1, 1, 1], data).unwrap(),
            (0..n).map(|i| i % 3).collect(),
            3,
            "tagged",
        )
        .unwrap();
        let parts = split(&ds, &[0.5, 0.3, 0.2], 9, false).unwrap();
        let mut seen: Vec<u64> = parts
            .iter()
            .flat_map(|p| p.images.data().iter().map(|v| v.to_bits()))
            .collect();
        let total = seen.len();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), total);
        assert_eq!(total, 15 + 9 + 6);
    }

    #[test]
    fn stratified_split_stays_balanced() {
        let (train, _, _) = generate_synth(&small()).unwrap();
        let parts = split(&train, &[0.6, 0.25], 4, true).unwrap();
        for (part, f) in parts.iter().zip([0.6, 0.25]) {
            for count in part.class_counts() {
                let expected = f * 20.0;
                assert!((count as f64 - expected).abs() <= 1.0, "{count} vs {expected}");
            }
        }
    }
}
