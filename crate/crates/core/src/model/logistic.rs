use crate::data::Sample;

/// Binary logistic regression, parameters `[w..., b]`, label in {0, 1}.
pub(super) fn sample_loss_grad(w: &[f64], sample: &Sample<'_>, grad: Option<&mut [f64]>) -> f64 {
    let x = &sample.features;
    let d = x.len();
    let y = if sample.label > 0 { 1.0 } else { 0.0 };
    let z = w[..d].iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() + w[d];
    if let Some(g) = grad {
        let r = sigmoid(z) - y;
        for (g, xi) in g[..d].iter_mut().zip(x.iter()) {
            *g += r * xi;
        }
        g[d] += r;
    }
    softplus(z) - y * z
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
