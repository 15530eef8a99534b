//! Mixture of experts: one linear head per band, mixed in logit space by a
//! per-band `D -> H -> 1` gate.

use super::nn::{affine, affine_input_grad, affine_param_grad, relu, softmax, softmax_grad};
use super::params::ParamSet;
use super::pooling::{mask_relu, split_pair};
use super::BandFeatureSet;

#[derive(Debug, Clone)]
pub(super) struct MoeTrace {
    pub expert_logits: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

fn expert(params: &ParamSet, b: usize, classes: usize, dim: usize) -> (&[f64], &[f64]) {
    let w = &params.get("experts.weight")[b * classes * dim..(b + 1) * classes * dim];
    let c = &params.get("experts.bias")[b * classes..(b + 1) * classes];
    (w, c)
}

pub(super) fn forward(params: &ParamSet, features: &BandFeatureSet, classes: usize) -> (Vec<f64>, MoeTrace) {
    let dim = features.dim();
    let mut trace = MoeTrace {
        expert_logits: Vec::new(),
        hidden: Vec::new(),
        weights: Vec::new(),
    };
    let mut scores = Vec::new();
    for (b, f) in features.functionals.iter().enumerate() {
        let (w, c) = expert(params, b, classes, dim);
        trace.expert_logits.push(affine(w, c, f));
        let mut h = affine(params.get("gate.w1"), params.get("gate.b1"), f);
        relu(&mut h);
        scores.push(affine(params.get("gate.w2"), params.get("gate.b2"), &h)[0]);
        trace.hidden.push(h);
    }
    trace.weights = softmax(&scores);
    let mut logits = vec![0.0; classes];
    for (w, z) in trace.weights.iter().zip(&trace.expert_logits) {
        logits.iter_mut().zip(z).for_each(|(y, v)| *y += w * v);
    }
    (logits, trace)
}

pub(super) fn backward(
    params: &ParamSet,
    trace: &MoeTrace,
    features: &BandFeatureSet,
    dlogits: &[f64],
    grads: &mut ParamSet,
) {
    let classes = dlogits.len();
    let dim = features.dim();
    {
        let (dw, dc) = split_pair(grads, "experts.weight", "experts.bias");
        for (b, f) in features.functionals.iter().enumerate() {
            let dz: Vec<f64> = dlogits.iter().map(|g| g * trace.weights[b]).collect();
            affine_param_grad(
                &mut dw[b * classes * dim..(b + 1) * classes * dim],
                &mut dc[b * classes..(b + 1) * classes],
                &dz,
                f,
            );
        }
    }
    let dw: Vec<f64> = trace
        .expert_logits
        .iter()
        .map(|z| z.iter().zip(dlogits).map(|(a, b)| a * b).sum())
        .collect();
    let ds = softmax_grad(&trace.weights, &dw);
    let w2 = params.get("gate.w2");
    for (b, s) in ds.iter().enumerate() {
        let h = &trace.hidden[b];
        {
            let (dw2, db2) = split_pair(grads, "gate.w2", "gate.b2");
            affine_param_grad(dw2, db2, &[*s], h);
        }
        let mut dh = vec![0.0; h.len()];
        affine_input_grad(w2, &[*s], &mut dh);
        mask_relu(&mut dh, h);
        let (dw1, db1) = split_pair(grads, "gate.w1", "gate.b1");
        affine_param_grad(dw1, db1, &dh, &features.functionals[b]);
    }
}
