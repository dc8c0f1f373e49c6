//! Synthetic datasets.
//!
//! Finite datasets (`blobs`) are materialized tables. The `noisy_quadratic`
//! dataset is an unbounded i.i.d. noise stream: sample `i` is generated on
//! demand from `(seed, i)`, so any number of fresh samples exist. Its nominal
//! size only defines how many samples make up one epoch.

use std::borrow::Cow;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Generator parameters for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Gaussian class clusters with centers evenly spaced on a circle.
    Blobs {
        #[serde(default = "default_two")]
        dim: usize,
        #[serde(default = "default_two")]
        classes: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_spread")]
        spread: f64,
        /// Fraction of labels replaced by a uniformly drawn class.
        #[serde(default)]
        label_noise: f64,
    },
    /// Isotropic Gaussian offsets with total variance `sigma2` (trace of the
    /// covariance), for use with the quadratic model.
    NoisyQuadratic { dim: usize, sigma2: f64 },
}

fn default_two() -> usize {
    2
}
fn default_separation() -> f64 {
    4.0
}
fn default_spread() -> f64 {
    1.0
}

impl SyntheticKind {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::Blobs { .. } => "blobs",
            SyntheticKind::NoisyQuadratic { .. } => "noisy_quadratic",
        }
    }

    pub fn blobs() -> Self {
        SyntheticKind::Blobs {
            dim: 2,
            classes: 2,
            separation: default_separation(),
            spread: default_spread(),
            label_noise: 0.0,
        }
    }

    pub fn noisy_quadratic(dim: usize, sigma2: f64) -> Self {
        SyntheticKind::NoisyQuadratic { dim, sigma2 }
    }

    /// Looks up a kind by name with default parameters.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "blobs" => Ok(Self::blobs()),
            "noisy_quadratic" => Ok(Self::noisy_quadratic(10, 1.0)),
            other => Err(Error::Unknown {
                what: "dataset kind",
                name: other.to_string(),
            }),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match *self {
            SyntheticKind::Blobs { dim, .. } | SyntheticKind::NoisyQuadratic { dim, .. } => dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Table { features: Vec<f64>, labels: Vec<u32> },
    NoiseStream { sigma2: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    seed: u64,
    len: usize,
    dim: usize,
    storage: Storage,
}

/// A single sample: a feature vector and a class label (0 for streams).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<'a> {
    pub features: Cow<'a, [f64]>,
    pub label: u32,
}

pub fn make_synthetic(kind: &SyntheticKind, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    match *kind {
        SyntheticKind::Blobs {
            dim,
            classes,
            separation,
            spread,
            label_noise,
        } => {
            if dim == 0 || classes < 2 {
                return Err(Error::invalid("blobs need dim >= 1 and classes >= 2"));
            }
            if !(0.0..=1.0).contains(&label_noise) || spread < 0.0 {
                return Err(Error::invalid("label_noise must be in [0, 1] and spread >= 0"));
            }
            let mut rng = SplitMix64::new(seed);
            let mut features = Vec::with_capacity(n * dim);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let class = (i % classes) as u32;
                let angle = std::f64::consts::TAU * class as f64 / classes as f64;
                let radius = separation / 2.0;
                for d in 0..dim {
                    let center = match d {
                        0 => radius * angle.cos(),
                        1 => radius * angle.sin(),
                        _ => 0.0,
                    };
                    let z: f64 = rng.sample(StandardNormal);
                    features.push(center + spread * z);
                }
                let u: f64 = rng.random();
                let label = if u < label_noise {
                    rng.uniform_inclusive(0, classes as u64 - 1) as u32
                } else {
                    class
                };
                labels.push(label);
            }
            Ok(Dataset {
                seed,
                len: n,
                dim,
                storage: Storage::Table { features, labels },
            })
        }
        SyntheticKind::NoisyQuadratic { dim, sigma2 } => {
            if dim == 0 || !(sigma2 >= 0.0 && sigma2.is_finite()) {
                return Err(Error::invalid("noisy_quadratic needs dim >= 1 and finite sigma2 >= 0"));
            }
            Ok(Dataset {
                seed,
                len: n,
                dim,
                storage: Storage::NoiseStream { sigma2 },
            })
        }
    }
}

impl Dataset {
    /// A finite dataset from explicit rows.
    pub fn from_rows(features: Vec<Vec<f64>>, labels: Vec<u32>) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::invalid("need at least one row and one label per row"));
        }
        let dim = features[0].len();
        if features.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("ragged feature rows"));
        }
        Ok(Dataset {
            seed: 0,
            len: labels.len(),
            dim,
            storage: Storage::Table {
                features: features.concat(),
                labels,
            },
        })
    }

    /// Number of samples per epoch.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// True for the unbounded noise stream, where every index is valid.
    pub fn is_stream(&self) -> bool {
        matches!(self.storage, Storage::NoiseStream { .. })
    }

    /// Per-sample noise variance (trace) of a noise stream.
    pub fn stream_sigma2(&self) -> Option<f64> {
        match self.storage {
            Storage::NoiseStream { sigma2 } => Some(sigma2),
            Storage::Table { .. } => None,
        }
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if self.is_stream() || index < self.len {
            Ok(())
        } else {
            Err(Error::InvalidIndex {
                index,
                len: self.len,
            })
        }
    }

    pub fn sample(&self, index: usize) -> Result<Sample<'_>> {
        self.check_index(index)?;
        Ok(self.sample_unchecked(index))
    }

    pub(crate) fn sample_unchecked(&self, index: usize) -> Sample<'_> {
        match &self.storage {
            Storage::Table { features, labels } => Sample {
                features: Cow::Borrowed(&features[index * self.dim..(index + 1) * self.dim]),
                label: labels[index],
            },
            Storage::NoiseStream { sigma2 } => {
                let mut rng = SplitMix64::derive(self.seed, index as u64);
                let scale = (sigma2 / self.dim as f64).sqrt();
                let features = (0..self.dim)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Sample {
                    features: Cow::Owned(features),
                    label: 0,
                }
            }
        }
    }

    /// Sample id of the `position`-th sample of `epoch`. Finite datasets are
    /// shuffled per epoch by `(run_seed, epoch)`; streams hand out fresh indices.
    pub fn epoch_order(&self, run_seed: u64, epoch: usize) -> Vec<usize> {
        match self.storage {
            Storage::Table { .. } => {
                use rand::seq::SliceRandom;
                let mut order: Vec<usize> = (0..self.len).collect();
                let mut rng = SplitMix64::derive(run_seed, epoch as u64);
                order.shuffle(&mut rng);
                order
            }
            Storage::NoiseStream { .. } => {
                let base = epoch * self.len;
                (base..base + self.len).collect()
            }
        }
    }

    /// CSV with a header row of feature columns followed by `label`. Streams
    /// export their first `len` samples.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim).map(|d| format!("x{d}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for i in 0..self.len {
            let s = self.sample_unchecked(i);
            let mut row: Vec<String> = s.features.iter().map(|v| format!("{v:?}")).collect();
            row.push(s.label.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        if headers.len() < 2 || headers.get(headers.len() - 1) != Some("label") {
            return Err(Error::invalid("csv header must end with a `label` column"));
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let n = rec.len();
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad number {s:?}: {e}")))
            };
            rows.push(rec.iter().take(n - 1).map(parse).collect::<Result<Vec<_>>>()?);
            labels.push(
                rec[n - 1]
                    .trim()
                    .parse::<u32>()
                    .map_err(|e| Error::invalid(format!("bad label: {e}")))?,
            );
        }
        Dataset::from_rows(rows, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic() {
        let a = make_synthetic(&SyntheticKind::blobs(), 1000, 42).unwrap();
        let b = make_synthetic(&SyntheticKind::blobs(), 1000, 42).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic(&SyntheticKind::blobs(), 1000, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(make_synthetic(&SyntheticKind::blobs(), 0, 1).is_err());
        assert!(SyntheticKind::by_name("imagenet").is_err());
    }

    #[test]
    fn stream_sample_variance_matches_sigma2() {
        let ds = make_synthetic(&SyntheticKind::noisy_quadratic(10, 1.0), 10_000, 7).unwrap();
        let n = ds.len();
        let mut mean = [0.0; 10];
        let mut sq = [0.0; 10];
        for i in 0..n {
            let s = ds.sample(i).unwrap();
            for (d, x) in s.features.iter().enumerate() {
                mean[d] += x;
                sq[d] += x * x;
            }
        }
        let trace: f64 = (0..10)
            .map(|d| {
                let m = mean[d] / n as f64;
                (sq[d] - n as f64 * m * m) / (n as f64 - 1.0)
            })
            .sum();
        assert!((0.95..=1.05).contains(&trace), "trace {trace}");
    }

    #[test]
    fn stream_indices_are_unbounded_but_tables_are_not() {
        let stream = make_synthetic(&SyntheticKind::noisy_quadratic(3, 1.0), 5, 1).unwrap();
        assert!(stream.sample(1_000_000).is_ok());
        assert_eq!(stream.sample(3).unwrap(), stream.sample(3).unwrap());
        let table = make_synthetic(&SyntheticKind::blobs(), 5, 1).unwrap();
        assert!(matches!(table.sample(5), Err(Error::InvalidIndex { .. })));
    }

    #[test]
    fn epoch_order_is_a_permutation() {
        let ds = make_synthetic(&SyntheticKind::blobs(), 257, 3).unwrap();
        let mut order = ds.epoch_order(11, 4);
        assert_eq!(order, ds.epoch_order(11, 4));
        assert_ne!(order, ds.epoch_order(11, 5));
        order.sort_unstable();
        assert_eq!(order, (0..257).collect::<Vec<_>>());
    }

    #[test]
    fn csv_round_trip() {
        let ds = make_synthetic(&SyntheticKind::blobs(), 50, 5).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,label\n"));
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 50);
        for i in 0..50 {
            assert_eq!(back.sample(i).unwrap(), ds.sample(i).unwrap());
        }
    }
}
