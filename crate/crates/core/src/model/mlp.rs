use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng::SplitMix64;

/// Layout `[W1 (hidden×input), b1, W2 (classes×hidden), b2]`, row-major.
#[derive(Debug, Clone, Copy)]
pub(super) struct Shape {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Shape {
    pub fn new(input: usize, hidden: usize, classes: usize) -> Result<Self> {
        if input == 0 || hidden == 0 || classes < 2 {
            return Err(Error::invalid("mlp needs input >= 1, hidden >= 1, classes >= 2"));
        }
        Ok(Self {
            input,
            hidden,
            classes,
        })
    }

    fn b1(&self) -> usize {
        self.hidden * self.input
    }
    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }
    fn b2(&self) -> usize {
        self.w2() + self.classes * self.hidden
    }
    fn len(&self) -> usize {
        self.b2() + self.classes
    }

    pub fn decay_mask(&self, decay_biases: bool) -> Vec<bool> {
        let mut m = vec![true; self.len()];
        m[self.b1()..self.w2()].fill(decay_biases);
        m[self.b2()..].fill(decay_biases);
        m
    }

    /// Gaussian weights with variance `1/fan_in`, zero biases.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = SplitMix64::new(seed);
        let mut w = vec![0.0; self.len()];
        let s1 = (1.0 / self.input as f64).sqrt();
        for x in &mut w[..self.b1()] {
            *x = s1 * rng.sample::<f64, _>(StandardNormal);
        }
        let s2 = (1.0 / self.hidden as f64).sqrt();
        let (w2, b2) = (self.w2(), self.b2());
        for x in &mut w[w2..b2] {
            *x = s2 * rng.sample::<f64, _>(StandardNormal);
        }
        ParamVector::new(w)
    }

    pub fn sample_loss_grad(&self, w: &[f64], sample: &Sample<'_>, grad: Option<&mut [f64]>) -> f64 {
        let (h, c) = (self.hidden, self.classes);
        let x = &sample.features[..];
        let y = sample.label as usize;
        let w1 = &w[..self.b1()];
        let b1 = &w[self.b1()..self.w2()];
        let w2 = &w[self.w2()..self.b2()];
        let b2 = &w[self.b2()..];

        let mut act = vec![0.0; h];
        for (j, a) in act.iter_mut().enumerate() {
            let row = &w1[j * self.input..(j + 1) * self.input];
            let z: f64 = row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + b1[j];
            *a = z.tanh();
        }
        let mut logits = vec![0.0; c];
        for (k, l) in logits.iter_mut().enumerate() {
            let row = &w2[k * h..(k + 1) * h];
            *l = row.iter().zip(&act).map(|(p, q)| p * q).sum::<f64>() + b2[k];
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        let loss = log_z - logits[y.min(c - 1)];

        if let Some(g) = grad {
            // dL/dlogits = softmax - onehot
            let dlogits: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(k, l)| (l - log_z).exp() - if k == y { 1.0 } else { 0.0 })
                .collect();
            let (w2_off, b2_off, b1_off) = (self.w2(), self.b2(), self.b1());
            let mut dact = vec![0.0; h];
            for (k, dl) in dlogits.iter().enumerate() {
                for j in 0..h {
                    g[w2_off + k * h + j] += dl * act[j];
                    dact[j] += dl * w2[k * h + j];
                }
                g[b2_off + k] += dl;
            }
            for j in 0..h {
                let dz = dact[j] * (1.0 - act[j] * act[j]);
                for (i, xi) in x.iter().enumerate() {
                    g[j * self.input + i] += dz * xi;
                }
                g[b1_off + j] += dz;
            }
        }
        loss
    }
}
