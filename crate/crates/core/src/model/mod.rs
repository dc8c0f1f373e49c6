//! Desk-scale differentiable models with exact loss and gradient.
//!
//! Every model is a per-sample loss `l(w, x)`; batch quantities average it over
//! the batch and add coupled L2 weight decay on the parameters tagged as
//! decayed. Reductions run over the batch in ascending sample-index order.

mod logistic;
mod mlp;
mod quadratic;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::params::ParamVector;

pub use quadratic::Curvature;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// `l(w, x) = ½ wᵀAw + xᵀw`, where `x` is the sample's noise offset.
    Quadratic {
        /// Spectrum of the curvature matrix `A`.
        eigenvalues: Vec<f64>,
        /// Rotates the spectrum by a seeded random orthogonal basis; diagonal
        /// when absent.
        #[serde(default)]
        rotation_seed: Option<u64>,
    },
    LogisticRegression { input_dim: usize },
    /// Two-layer tanh network with a softmax cross-entropy head.
    Mlp {
        input_dim: usize,
        hidden: usize,
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    #[serde(default)]
    pub weight_decay: f64,
    /// Also decay bias parameters.
    #[serde(default)]
    pub decay_all_params: bool,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            weight_decay: 0.0,
            decay_all_params: false,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn build(&self) -> Result<Model> {
        Model::new(self.clone())
    }
}

#[derive(Debug, Clone)]
enum Arch {
    Quadratic(Curvature),
    Logistic { input_dim: usize },
    Mlp(mlp::Shape),
}

/// A validated model ready for evaluation. Immutable and `Sync`.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    arch: Arch,
    decay_mask: Vec<bool>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if !(spec.weight_decay >= 0.0 && spec.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be finite and non-negative"));
        }
        let arch = match &spec.kind {
            ModelKind::Quadratic {
                eigenvalues,
                rotation_seed,
            } => Arch::Quadratic(Curvature::new(eigenvalues, *rotation_seed)?),
            &ModelKind::LogisticRegression { input_dim } => {
                if input_dim == 0 {
                    return Err(Error::invalid("input_dim must be positive"));
                }
                Arch::Logistic { input_dim }
            }
            &ModelKind::Mlp {
                input_dim,
                hidden,
                classes,
            } => Arch::Mlp(mlp::Shape::new(input_dim, hidden, classes)?),
        };
        let decay_mask = match &arch {
            Arch::Quadratic(c) => vec![true; c.dim()],
            Arch::Logistic { input_dim } => {
                let mut m = vec![true; input_dim + 1];
                m[*input_dim] = spec.decay_all_params;
                m
            }
            Arch::Mlp(shape) => shape.decay_mask(spec.decay_all_params),
        };
        Ok(Self {
            spec,
            arch,
            decay_mask,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.decay_mask.len()
    }

    /// Per-parameter weight-decay tags.
    pub fn decay_mask(&self) -> &[bool] {
        &self.decay_mask
    }

    /// Feature dimension the model consumes.
    pub fn input_dim(&self) -> usize {
        match &self.arch {
            Arch::Quadratic(c) => c.dim(),
            Arch::Logistic { input_dim } => *input_dim,
            Arch::Mlp(s) => s.input,
        }
    }

    /// `λ_max` of the curvature, for the quadratic model.
    pub fn lambda_max(&self) -> Option<f64> {
        match &self.arch {
            Arch::Quadratic(c) => Some(c.lambda_max()),
            _ => None,
        }
    }

    pub fn curvature(&self) -> Option<&Curvature> {
        match &self.arch {
            Arch::Quadratic(c) => Some(c),
            _ => None,
        }
    }

    /// Seeded initial parameters. The quadratic starts from the all-ones vector.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        match &self.arch {
            Arch::Quadratic(c) => ParamVector::new(vec![1.0; c.dim()]),
            Arch::Logistic { input_dim } => ParamVector::zeros(input_dim + 1),
            Arch::Mlp(shape) => shape.init(seed),
        }
    }

    /// Loss of one sample; adds its gradient into `grad` when given.
    pub fn sample_loss_grad(&self, w: &[f64], sample: &Sample<'_>, grad: Option<&mut [f64]>) -> f64 {
        match &self.arch {
            Arch::Quadratic(c) => c.sample_loss_grad(w, &sample.features, grad),
            Arch::Logistic { .. } => logistic::sample_loss_grad(w, sample, grad),
            Arch::Mlp(shape) => shape.sample_loss_grad(w, sample, grad),
        }
    }

    fn check(&self, w: &ParamVector, data: &Dataset, batch: &Batch) -> Result<()> {
        w.check_dim(self.param_count())?;
        if data.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: data.dim(),
            });
        }
        batch.indices().iter().try_for_each(|&i| data.check_index(i))
    }

    /// Unnormalized `(Σ l, Σ ∇l)` over `indices` in the given order, without
    /// weight decay. This is what one worker contributes to a synchronous step.
    pub fn batch_sums(&self, w: &ParamVector, data: &Dataset, indices: &[usize]) -> Result<(f64, ParamVector)> {
        w.check_dim(self.param_count())?;
        indices.iter().try_for_each(|&i| data.check_index(i))?;
        let mut grad = vec![0.0; w.dim()];
        let mut loss = 0.0;
        for &i in indices {
            loss += self.sample_loss_grad(w.as_slice(), &data.sample_unchecked(i), Some(&mut grad));
        }
        Ok((loss, ParamVector::new(grad)))
    }

    /// Unnormalized loss sum over `indices`, without weight decay.
    pub fn loss_sum(&self, w: &ParamVector, data: &Dataset, indices: &[usize]) -> Result<f64> {
        w.check_dim(self.param_count())?;
        indices.iter().try_for_each(|&i| data.check_index(i))?;
        Ok(indices
            .iter()
            .map(|&i| self.sample_loss_grad(w.as_slice(), &data.sample_unchecked(i), None))
            .sum())
    }

    /// `(wd/2)·‖w_decayed‖²`
    pub fn decay_loss(&self, w: &ParamVector) -> f64 {
        let sq: f64 = w
            .as_slice()
            .iter()
            .zip(&self.decay_mask)
            .filter(|(_, &m)| m)
            .map(|(x, _)| x * x)
            .sum();
        0.5 * self.spec.weight_decay * sq
    }

    /// `grad += wd·w_decayed`
    pub fn add_decay_grad(&self, w: &ParamVector, grad: &mut ParamVector) {
        if self.spec.weight_decay == 0.0 {
            return;
        }
        let wd = self.spec.weight_decay;
        for ((g, x), &m) in grad.as_mut_slice().iter_mut().zip(w.as_slice()).zip(&self.decay_mask) {
            if m {
                *g += wd * x;
            }
        }
    }

    pub fn loss(&self, w: &ParamVector, data: &Dataset, batch: &Batch) -> Result<f64> {
        self.check(w, data, batch)?;
        let sum = self.loss_sum(w, data, batch.indices())?;
        let out = sum / batch.len() as f64 + self.decay_loss(w);
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::NonFinite("loss"))
        }
    }

    pub fn grad(&self, w: &ParamVector, data: &Dataset, batch: &Batch) -> Result<ParamVector> {
        self.check(w, data, batch)?;
        let (_, mut g) = self.batch_sums(w, data, batch.indices())?;
        g.scale(1.0 / batch.len() as f64);
        self.add_decay_grad(w, &mut g);
        g.finite("gradient")
    }

    /// One gradient per sample, without weight decay.
    pub fn per_sample_grads(&self, w: &ParamVector, data: &Dataset, batch: &Batch) -> Result<Vec<ParamVector>> {
        self.check(w, data, batch)?;
        batch
            .indices()
            .iter()
            .map(|&i| {
                let mut g = vec![0.0; w.dim()];
                self.sample_loss_grad(w.as_slice(), &data.sample_unchecked(i), Some(&mut g));
                ParamVector::new(g).finite("per-sample gradient")
            })
            .collect()
    }
}

/// Sample indices of one mini-batch, kept in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch(Vec<usize>);

impl Batch {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("batch must hold at least one sample"));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::invalid("batch indices must be unique"));
        }
        Ok(Self(indices))
    }

    /// `0..n`
    pub fn range(start: usize, n: usize) -> Result<Self> {
        Self::new((start..start + n).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
