//! Embedding datasets: the `PHE1` binary format, a synthetic generator with a
//! two-level class/subcluster hierarchy, and feature-level augmentation.
//!
//! ```text
//! magic          4 bytes  "PHE1"
//! version        u32 LE   1
//! n              u32 LE
//! d_in           u32 LE
//! has_aug        u8       0 or 1
//! has_sub        u8       0 or 1
//! labels         n bytes  0 = bonafide, 1 = spoof
//! features       n·d_in   f32 LE, row-major
//! aug_features   n·d_in   f32 LE, present iff has_aug = 1
//! subcluster_ids n        u32 LE, present iff has_sub = 1
//! ```

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::prototypes::Label;
use crate::rng::{stream, Stream};

pub const DATASET_MAGIC: &[u8; 4] = b"PHE1";
pub const DATASET_VERSION: u32 = 1;
/// Size of a file holding zero samples.
pub const DATASET_HEADER_LEN: usize = 18;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    pub d_in: usize,
    /// `n × d_in`, row-major.
    pub features: Vec<f32>,
    pub aug_features: Option<Vec<f32>>,
    pub labels: Vec<Label>,
    /// Ground-truth subcluster of each sample, when known.
    pub subcluster_ids: Option<Vec<u32>>,
}

impl EmbeddingDataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.d_in == 0 {
            return Err(Error::InvalidDataset("d_in must be positive".into()));
        }
        if self.features.len() != n * self.d_in {
            return Err(Error::InvalidDataset(format!(
                "{} feature values for {n} samples of dimension {}",
                self.features.len(),
                self.d_in
            )));
        }
        if let Some(aug) = &self.aug_features {
            if aug.len() != self.features.len() {
                return Err(Error::InvalidDataset(
                    "augmented block shape differs from features".into(),
                ));
            }
        }
        if let Some(sub) = &self.subcluster_ids {
            if sub.len() != n {
                return Err(Error::InvalidDataset(
                    "subcluster ids length differs from n".into(),
                ));
            }
        }
        if u32::try_from(n).is_err() || u32::try_from(self.d_in).is_err() {
            return Err(Error::InvalidDataset("dimensions exceed 32 bits".into()));
        }
        let finite = |m: &[f32]| m.iter().all(|v| v.is_finite());
        if !finite(&self.features) || !self.aug_features.as_deref().is_none_or(finite) {
            return Err(Error::InvalidDataset("features must be finite".into()));
        }
        Ok(())
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.d_in..(i + 1) * self.d_in]
    }

    pub fn aug_feature(&self, i: usize) -> Option<&[f32]> {
        self.aug_features
            .as_ref()
            .map(|a| &a[i * self.d_in..(i + 1) * self.d_in])
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let gather = |m: &[f32]| -> Vec<f32> {
            indices
                .iter()
                .flat_map(|&i| m[i * self.d_in..(i + 1) * self.d_in].iter().copied())
                .collect()
        };
        Self {
            d_in: self.d_in,
            features: gather(&self.features),
            aug_features: self.aug_features.as_deref().map(gather),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subcluster_ids: self
                .subcluster_ids
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
        }
    }

    /// Stratified random split. Each class contributes
    /// `round(holdout · count)` samples to the second part; both parts keep
    /// dataset order.
    pub fn split(&self, holdout: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..=1.0).contains(&holdout) {
            return Err(Error::InvalidInput(format!(
                "holdout fraction {holdout} outside [0, 1]"
            )));
        }
        let mut rng = stream(seed, Stream::Split);
        let mut held = vec![false; self.n()];
        for label in [Label::Bonafide, Label::Spoof] {
            let mut idx: Vec<usize> = (0..self.n()).filter(|&i| self.labels[i] == label).collect();
            idx.shuffle(&mut rng);
            let take = (holdout * idx.len() as f64).round() as usize;
            for &i in &idx[..take] {
                held[i] = true;
            }
        }
        let train: Vec<usize> = (0..self.n()).filter(|&i| !held[i]).collect();
        let test: Vec<usize> = (0..self.n()).filter(|&i| held[i]).collect();
        Ok((self.subset(&train), self.subset(&test)))
    }
}

pub fn dataset_to_bytes(ds: &EmbeddingDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let n = ds.n();
    let blocks = 1 + usize::from(ds.aug_features.is_some());
    let mut out =
        Vec::with_capacity(DATASET_HEADER_LEN + n + blocks * 4 * ds.features.len() + 4 * n);
    out.extend_from_slice(DATASET_MAGIC);
    for v in [DATASET_VERSION, n as u32, ds.d_in as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(u8::from(ds.aug_features.is_some()));
    out.push(u8::from(ds.subcluster_ids.is_some()));
    out.extend(ds.labels.iter().map(|l| l.as_u8()));
    for block in std::iter::once(&ds.features).chain(&ds.aug_features) {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(sub) = &ds.subcluster_ids {
        for v in sub {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn format(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn read_flag(byte: u8, name: &str) -> Result<bool> {
    match byte {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(format(format!("{name} flag must be 0 or 1, found {b}"))),
    }
}

/// Parses a `PHE1` image. The payload length implied by the header is checked
/// against the input before any sample storage is allocated.
pub fn dataset_from_bytes(bytes: &[u8]) -> Result<EmbeddingDataset> {
    if bytes.len() < DATASET_HEADER_LEN {
        return Err(format(format!(
            "file is {} bytes, shorter than the {DATASET_HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(format("bad magic, expected PHE1"));
    }
    let version = read_u32(bytes, 4);
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            expected: DATASET_VERSION,
            found: version,
        });
    }
    let n = read_u32(bytes, 8) as usize;
    let d_in = read_u32(bytes, 12) as usize;
    let has_aug = read_flag(bytes[16], "has_aug")?;
    let has_sub = read_flag(bytes[17], "has_subclusters")?;
    if d_in == 0 {
        return Err(format("d_in is zero"));
    }

    let block = n
        .checked_mul(d_in)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| format("header sizes overflow"))?;
    let expected = [
        n,
        block,
        if has_aug { block } else { 0 },
        if has_sub { 4 * n } else { 0 },
    ]
    .iter()
    .try_fold(DATASET_HEADER_LEN, |acc, v| acc.checked_add(*v))
    .ok_or_else(|| format("header sizes overflow"))?;
    if bytes.len() != expected {
        return Err(format(format!(
            "header declares {expected} bytes, file has {}",
            bytes.len()
        )));
    }

    let mut at = DATASET_HEADER_LEN;
    let labels = bytes[at..at + n]
        .iter()
        .enumerate()
        .map(|(i, b)| {
            Label::from_u8(*b)
                .ok_or_else(|| format(format!("label {b} at sample {i} is not 0 or 1")))
        })
        .collect::<Result<Vec<_>>>()?;
    at += n;
    let floats = |at: &mut usize| -> Vec<f32> {
        let out = bytes[*at..*at + block]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        *at += block;
        out
    };
    let features = floats(&mut at);
    let aug_features = has_aug.then(|| floats(&mut at));
    let subcluster_ids = has_sub.then(|| (0..n).map(|i| read_u32(bytes, at + 4 * i)).collect());
    Ok(EmbeddingDataset {
        d_in,
        features,
        aug_features,
        labels,
        subcluster_ids,
    })
}

pub fn write_dataset(ds: &EmbeddingDataset, path: &Path) -> Result<()> {
    write_atomic(path, &dataset_to_bytes(ds)?)
}

pub fn read_dataset(path: &Path) -> Result<EmbeddingDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    dataset_from_bytes(&bytes)
}

/// Parameters of the synthetic generator. Each class has a center; each
/// subcluster sits at a fixed distance from its class center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_per_subcluster: usize,
    pub subclusters_per_class: usize,
    pub d_in: usize,
    /// Distance between the two class centers.
    pub class_separation: f64,
    /// Distance from a class center to each of its subcluster centers.
    pub subcluster_spread: f64,
    pub noise_sigma: f64,
    pub aug_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_subcluster: 250,
            subclusters_per_class: 4,
            d_in: 32,
            class_separation: 6.0,
            subcluster_spread: 2.0,
            noise_sigma: 0.5,
            aug_sigma: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_subcluster == 0 || self.subclusters_per_class == 0 || self.d_in == 0 {
            return Err(Error::Config(
                "synthetic counts and d_in must be positive".into(),
            ));
        }
        let n = 2 * self.subclusters_per_class * self.n_per_subcluster;
        if u32::try_from(n).is_err() || u32::try_from(self.d_in).is_err() {
            return Err(Error::Config(
                "synthetic dataset exceeds 32-bit sizes".into(),
            ));
        }
        for (name, v) in [
            ("class_separation", self.class_separation),
            ("subcluster_spread", self.subcluster_spread),
            ("noise_sigma", self.noise_sigma),
            ("aug_sigma", self.aug_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        2 * self.subclusters_per_class * self.n_per_subcluster
    }
}

fn unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn noisy<R: Rng + ?Sized>(center: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    center
        .iter()
        .map(|c| c + sigma * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect()
}

/// Draws a labelled two-class dataset with subclusters. Samples are grouped
/// by class, then by subcluster; subcluster ids are
/// `class · subclusters_per_class + s`. A pure function of `cfg`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<EmbeddingDataset> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Stream::Synthetic);
    let d = cfg.d_in;
    let axis = unit_vector(d, &mut rng);
    let n = cfg.num_samples();
    let mut features = Vec::with_capacity(n * d);
    let mut aug = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut subs = Vec::with_capacity(n);

    for (class, label) in [Label::Bonafide, Label::Spoof].into_iter().enumerate() {
        let sign = if class == 0 { -0.5 } else { 0.5 };
        let center: Vec<f64> = axis
            .iter()
            .map(|a| sign * cfg.class_separation * a)
            .collect();
        for s in 0..cfg.subclusters_per_class {
            let dir = unit_vector(d, &mut rng);
            let sub_center: Vec<f64> = center
                .iter()
                .zip(&dir)
                .map(|(c, u)| c + cfg.subcluster_spread * u)
                .collect();
            let id = (class * cfg.subclusters_per_class + s) as u32;
            for _ in 0..cfg.n_per_subcluster {
                let x = noisy(&sub_center, cfg.noise_sigma, &mut rng);
                let xa = noisy(&x, cfg.aug_sigma, &mut rng);
                features.extend(x.iter().map(|v| *v as f32));
                aug.extend(xa.iter().map(|v| *v as f32));
                labels.push(label);
                subs.push(id);
            }
        }
    }
    Ok(EmbeddingDataset {
        d_in: d,
        features,
        aug_features: Some(aug),
        labels,
        subcluster_ids: Some(subs),
    })
}

/// Adds `aug_features = features + N(0, aug_sigma²)`, drawn from the
/// augmentation stream of `seed`.
pub fn augment_pair(
    mut ds: EmbeddingDataset,
    aug_sigma: f64,
    seed: u64,
) -> Result<EmbeddingDataset> {
    if ds.aug_features.is_some() {
        return Err(Error::InvalidInput(
            "dataset already has augmented views".into(),
        ));
    }
    if !(aug_sigma.is_finite() && aug_sigma >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "aug_sigma must be >= 0, got {aug_sigma}"
        )));
    }
    ds.validate()?;
    let mut rng = stream(seed, Stream::Augmentation);
    let normal = Normal::new(0.0, aug_sigma).expect("valid sigma");
    let aug = ds
        .features
        .iter()
        .map(|x| (f64::from(*x) + normal.sample(&mut rng)) as f32)
        .collect();
    ds.aug_features = Some(aug);
    Ok(ds)
}
