use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Symmetric positive semi-definite curvature `A = Q diag(λ) Qᵀ`.
#[derive(Debug, Clone)]
pub struct Curvature {
    eigenvalues: Vec<f64>,
    /// Row-major dense `A`; `None` when diagonal.
    dense: Option<Vec<f64>>,
    lambda_max: f64,
}

impl Curvature {
    pub fn new(eigenvalues: &[f64], rotation_seed: Option<u64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::invalid("quadratic needs at least one eigenvalue"));
        }
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::invalid("curvature eigenvalues must be finite and >= 0"));
        }
        let lambda_max = eigenvalues.iter().copied().fold(0.0, f64::max);
        let d = eigenvalues.len();
        let dense = rotation_seed.map(|seed| {
            let q = random_orthogonal(d, seed);
            let mut a = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..=i {
                    let v: f64 = (0..d).map(|k| q[i * d + k] * eigenvalues[k] * q[j * d + k]).sum();
                    a[i * d + j] = v;
                    a[j * d + i] = v;
                }
            }
            a
        });
        Ok(Self {
            eigenvalues: eigenvalues.to_vec(),
            dense,
            lambda_max,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `A w`
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        match &self.dense {
            None => w.iter().zip(&self.eigenvalues).map(|(x, l)| l * x).collect(),
            Some(a) => {
                let d = self.dim();
                (0..d)
                    .map(|i| a[i * d..(i + 1) * d].iter().zip(w).map(|(x, y)| x * y).sum())
                    .collect()
            }
        }
    }

    /// `½ wᵀAw`, the noise-free objective.
    pub fn objective(&self, w: &[f64]) -> f64 {
        0.5 * self.apply(w).iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    }

    pub(super) fn sample_loss_grad(&self, w: &[f64], offset: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let aw = self.apply(w);
        let quad: f64 = aw.iter().zip(w).map(|(a, b)| a * b).sum();
        let lin: f64 = offset.iter().zip(w).map(|(a, b)| a * b).sum();
        if let Some(g) = grad {
            for ((g, a), e) in g.iter_mut().zip(&aw).zip(offset) {
                *g += a + e;
            }
        }
        0.5 * quad + lin
    }
}

/// Row-major orthogonal matrix from Gram-Schmidt on a seeded Gaussian matrix.
fn random_orthogonal(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for r in &rows {
            let p: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            rows.push(v);
        }
    }
    rows.concat()
}
