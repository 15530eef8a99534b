//! Dense-layer primitives on row-major slices. Weights are `[out, in]`.

/// `W x + b`.
pub fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    debug_assert_eq!(w.len(), b.len() * cols);
    w.chunks_exact(cols)
        .zip(b)
        .map(|(row, bias)| bias + crate::dsp::dot(row, x))
        .collect()
}

/// `dx += W^T dy`.
pub fn affine_input_grad(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (row, g) in w.chunks_exact(cols).zip(dy) {
        if *g != 0.0 {
            for (d, wv) in dx.iter_mut().zip(row) {
                *d += g * wv;
            }
        }
    }
}

/// `dW += dy x^T`, `db += dy`.
pub fn affine_param_grad(dw: &mut [f64], db: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for ((row, g), bias) in dw.chunks_exact_mut(cols).zip(dy).zip(db.iter_mut()) {
        *bias += g;
        if *g != 0.0 {
            for (d, xv) in row.iter_mut().zip(x) {
                *d += g * xv;
            }
        }
    }
}

pub fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Gradient through softmax: `ds_i = p_i (dp_i - sum_j p_j dp_j)`.
pub fn softmax_grad(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, dpi)| pi * (dpi - inner)).collect()
}

/// `log softmax(logits)[target]`, computed stably.
pub fn log_prob(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits[target] - lse
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalised input and inverse standard deviation of one layer-norm call.
#[derive(Debug, Clone)]
pub struct NormTrace {
    pub normed: Vec<f64>,
    pub inv_std: f64,
}

pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64]) -> (Vec<f64>, NormTrace) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    let normed: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let y = normed
        .iter()
        .zip(gamma.iter().zip(beta))
        .map(|(h, (g, b))| g * h + b)
        .collect();
    (y, NormTrace { normed, inv_std })
}

/// Accumulates `dgamma`, `dbeta` and returns the input gradient.
pub fn layer_norm_grad(trace: &NormTrace, gamma: &[f64], dy: &[f64], dgamma: &mut [f64], dbeta: &mut [f64]) -> Vec<f64> {
    let n = dy.len() as f64;
    let mut dnormed = Vec::with_capacity(dy.len());
    for i in 0..dy.len() {
        dgamma[i] += dy[i] * trace.normed[i];
        dbeta[i] += dy[i];
        dnormed.push(dy[i] * gamma[i]);
    }
    let mean_d = dnormed.iter().sum::<f64>() / n;
    let mean_dx = dnormed.iter().zip(&trace.normed).map(|(d, h)| d * h).sum::<f64>() / n;
    dnormed
        .iter()
        .zip(&trace.normed)
        .map(|(d, h)| trace.inv_std * (d - mean_d - h * mean_dx))
        .collect()
}
