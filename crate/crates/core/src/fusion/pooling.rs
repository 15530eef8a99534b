//! Fusions that pool band functionals into one vector before the shared
//! linear head: mean pool, gated pool and the hybrid gate.

use super::nn::{affine, affine_input_grad, affine_param_grad, relu, softmax, softmax_grad};
use super::params::ParamSet;
use super::BandFeatureSet;

pub(super) fn mean_pool(features: &BandFeatureSet) -> Vec<f64> {
    let b = features.functionals.len() as f64;
    let mut x = vec![0.0; features.dim()];
    for f in &features.functionals {
        x.iter_mut().zip(f).for_each(|(a, v)| *a += v);
    }
    x.iter_mut().for_each(|a| *a /= b);
    x
}

/// `sum_b w_b f_b`. Uniform weights take the mean-pool path so a constant
/// gate reproduces it bit for bit.
pub(super) fn weighted_sum(weights: &[f64], features: &BandFeatureSet) -> Vec<f64> {
    if weights.windows(2).all(|w| w[0] == w[1]) {
        return mean_pool(features);
    }
    let mut x = vec![0.0; features.dim()];
    for (w, f) in weights.iter().zip(&features.functionals) {
        x.iter_mut().zip(f).for_each(|(a, v)| *a += w * v);
    }
    x
}

/// Gradient of a loss w.r.t. the softmax scores of `x = sum_b w_b f_b`.
pub(super) fn score_grad(weights: &[f64], features: &BandFeatureSet, dx: &[f64]) -> Vec<f64> {
    let dw: Vec<f64> = features
        .functionals
        .iter()
        .map(|f| f.iter().zip(dx).map(|(a, b)| a * b).sum())
        .collect();
    softmax_grad(weights, &dw)
}

#[derive(Debug, Clone)]
pub(super) struct GatedTrace {
    pub weights: Vec<f64>,
}

pub(super) fn gated_weights(params: &ParamSet, features: &BandFeatureSet) -> GatedTrace {
    let g = params.get("gate.weight");
    let g0 = params.get("gate.bias")[0];
    let scores: Vec<f64> = features
        .functionals
        .iter()
        .map(|f| g0 + crate::dsp::dot(g, f))
        .collect();
    GatedTrace {
        weights: softmax(&scores),
    }
}

pub(super) fn gated_backward(
    trace: &GatedTrace,
    features: &BandFeatureSet,
    dx: &[f64],
    grads: &mut ParamSet,
) {
    let ds = score_grad(&trace.weights, features, dx);
    let dg = grads.get_mut("gate.weight");
    for (s, f) in ds.iter().zip(&features.functionals) {
        dg.iter_mut().zip(f).for_each(|(d, v)| *d += s * v);
    }
    grads.get_mut("gate.bias")[0] += ds.iter().sum::<f64>();
}

#[derive(Debug, Clone)]
pub(super) struct HybridTrace {
    pub inputs: Vec<Vec<f64>>,
    pub hidden1: Vec<Vec<f64>>,
    pub hidden2: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Gate input `[f_b, entropy_b, flux_b]`.
fn hybrid_input(features: &BandFeatureSet, b: usize) -> Vec<f64> {
    let mut u = features.functionals[b].clone();
    let hc = features
        .handcrafted
        .as_ref()
        .expect("hybrid inputs validated before the forward pass");
    u.extend_from_slice(&hc[b]);
    u
}

pub(super) fn hybrid_weights(params: &ParamSet, features: &BandFeatureSet) -> HybridTrace {
    let n = features.functionals.len();
    let mut trace = HybridTrace {
        inputs: Vec::with_capacity(n),
        hidden1: Vec::with_capacity(n),
        hidden2: Vec::with_capacity(n),
        weights: Vec::new(),
    };
    let mut scores = Vec::with_capacity(n);
    for b in 0..n {
        let u = hybrid_input(features, b);
        let mut h1 = affine(params.get("gate.w1"), params.get("gate.b1"), &u);
        relu(&mut h1);
        let mut h2 = affine(params.get("gate.w2"), params.get("gate.b2"), &h1);
        relu(&mut h2);
        scores.push(affine(params.get("gate.w3"), params.get("gate.b3"), &h2)[0]);
        trace.inputs.push(u);
        trace.hidden1.push(h1);
        trace.hidden2.push(h2);
    }
    trace.weights = softmax(&scores);
    trace
}

pub(super) fn hybrid_backward(
    params: &ParamSet,
    trace: &HybridTrace,
    features: &BandFeatureSet,
    dx: &[f64],
    grads: &mut ParamSet,
) {
    let ds = score_grad(&trace.weights, features, dx);
    let (w2, w3) = (params.get("gate.w2"), params.get("gate.w3"));
    for (b, s) in ds.iter().enumerate() {
        let (u, h1, h2) = (&trace.inputs[b], &trace.hidden1[b], &trace.hidden2[b]);
        {
            let (dw3, db3) = split_pair(grads, "gate.w3", "gate.b3");
            affine_param_grad(dw3, db3, &[*s], h2);
        }
        let mut dh2 = vec![0.0; h2.len()];
        affine_input_grad(w3, &[*s], &mut dh2);
        mask_relu(&mut dh2, h2);
        {
            let (dw2, db2) = split_pair(grads, "gate.w2", "gate.b2");
            affine_param_grad(dw2, db2, &dh2, h1);
        }
        let mut dh1 = vec![0.0; h1.len()];
        affine_input_grad(w2, &dh2, &mut dh1);
        mask_relu(&mut dh1, h1);
        let (dw1, db1) = split_pair(grads, "gate.w1", "gate.b1");
        affine_param_grad(dw1, db1, &dh1, u);
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub(super) fn mask_relu(grad: &mut [f64], activation: &[f64]) {
    grad.iter_mut().zip(activation).for_each(|(g, a)| {
        if *a <= 0.0 {
            *g = 0.0
        }
    });
}

/// Mutable borrows of two distinct tensors.
pub(super) fn split_pair<'a>(grads: &'a mut ParamSet, first: &str, second: &str) -> (&'a mut [f64], &'a mut [f64]) {
    let i = grads.tensors.iter().position(|t| t.name == first).expect("tensor");
    let j = grads.tensors.iter().position(|t| t.name == second).expect("tensor");
    assert_ne!(i, j);
    if i < j {
        let (a, b) = grads.tensors.split_at_mut(j);
        (&mut a[i].data, &mut b[0].data)
    } else {
        let (a, b) = grads.tensors.split_at_mut(i);
        (&mut b[0].data, &mut a[j].data)
    }
}
