//! Single pre-norm transformer encoder layer over `[CLS, f_1, ..., f_B]`
//! with learned positional embeddings. Only the CLS row feeds the output, so
//! queries, the residual stream and the feed-forward block are evaluated for
//! that row alone; keys and values cover every token.

use super::nn::{
    affine, affine_input_grad, affine_param_grad, layer_norm, layer_norm_grad, relu, softmax, softmax_grad, NormTrace,
};
use super::params::ParamSet;
use super::pooling::{mask_relu, split_pair};
use super::BandFeatureSet;

#[derive(Debug, Clone)]
pub(super) struct AttentionTrace {
    /// LayerNorm-1 outputs for every token.
    normed: Vec<Vec<f64>>,
    norm1: Vec<NormTrace>,
    query: Vec<f64>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    /// Attention probabilities per head over all tokens.
    probs: Vec<Vec<f64>>,
    mixed: Vec<f64>,
    norm2_out: Vec<f64>,
    norm2: NormTrace,
    ff_hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl AttentionTrace {
    pub fn attention(&self) -> &[Vec<f64>] {
        &self.probs
    }

    /// Inputs of the feed-forward ReLU.
    pub fn relu_inputs(&self, params: &ParamSet) -> Vec<f64> {
        affine(params.get("ff.w1"), params.get("ff.b1"), &self.norm2_out)
    }
}

fn tokens(params: &ParamSet, features: &BandFeatureSet) -> Vec<Vec<f64>> {
    let dim = features.dim();
    let pos = params.get("pos");
    let mut out = Vec::with_capacity(features.functionals.len() + 1);
    let row = |i: usize, base: &[f64]| -> Vec<f64> {
        base.iter().zip(&pos[i * dim..(i + 1) * dim]).map(|(a, p)| a + p).collect()
    };
    out.push(row(0, params.get("cls")));
    for (b, f) in features.functionals.iter().enumerate() {
        out.push(row(b + 1, f));
    }
    out
}

pub(super) fn forward(params: &ParamSet, features: &BandFeatureSet, heads: usize) -> AttentionTrace {
    let dim = features.dim();
    let head_dim = dim / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let toks = tokens(params, features);

    let (g1, b1) = (params.get("ln1.gamma"), params.get("ln1.beta"));
    let (normed, norm1): (Vec<Vec<f64>>, Vec<NormTrace>) = toks.iter().map(|t| layer_norm(t, g1, b1)).unzip();

    let query = affine(params.get("attn.wq"), params.get("attn.bq"), &normed[0]);
    let keys: Vec<Vec<f64>> = normed
        .iter()
        .map(|a| affine(params.get("attn.wk"), params.get("attn.bk"), a))
        .collect();
    let values: Vec<Vec<f64>> = normed
        .iter()
        .map(|a| affine(params.get("attn.wv"), params.get("attn.bv"), a))
        .collect();

    let mut probs = Vec::with_capacity(heads);
    let mut mixed = vec![0.0; dim];
    for h in 0..heads {
        let span = h * head_dim..(h + 1) * head_dim;
        let q = &query[span.clone()];
        let scores: Vec<f64> = keys
            .iter()
            .map(|k| scale * q.iter().zip(&k[span.clone()]).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let p = softmax(&scores);
        for (pi, v) in p.iter().zip(&values) {
            mixed[span.clone()]
                .iter_mut()
                .zip(&v[span.clone()])
                .for_each(|(m, x)| *m += pi * x);
        }
        probs.push(p);
    }

    let attn_out = affine(params.get("attn.wo"), params.get("attn.bo"), &mixed);
    let residual: Vec<f64> = toks[0].iter().zip(&attn_out).map(|(a, b)| a + b).collect();
    let (norm2_out, norm2) = layer_norm(&residual, params.get("ln2.gamma"), params.get("ln2.beta"));
    let mut ff_hidden = affine(params.get("ff.w1"), params.get("ff.b1"), &norm2_out);
    relu(&mut ff_hidden);
    let ff_out = affine(params.get("ff.w2"), params.get("ff.b2"), &ff_hidden);
    let output = residual.iter().zip(&ff_out).map(|(a, b)| a + b).collect();

    AttentionTrace {
        normed,
        norm1,
        query,
        keys,
        values,
        probs,
        mixed,
        norm2_out,
        norm2,
        ff_hidden,
        output,
    }
}

/// Back-propagates `dx` (gradient w.r.t. the CLS output) into the layer's
/// parameters.
pub(super) fn backward(params: &ParamSet, trace: &AttentionTrace, heads: usize, dx: &[f64], grads: &mut ParamSet) {
    let dim = dx.len();
    let head_dim = dim / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let n_tok = trace.keys.len();

    // feed-forward branch
    {
        let (dw2, db2) = split_pair(grads, "ff.w2", "ff.b2");
        affine_param_grad(dw2, db2, dx, &trace.ff_hidden);
    }
    let mut dhidden = vec![0.0; trace.ff_hidden.len()];
    affine_input_grad(params.get("ff.w2"), dx, &mut dhidden);
    mask_relu(&mut dhidden, &trace.ff_hidden);
    {
        let (dw1, db1) = split_pair(grads, "ff.w1", "ff.b1");
        affine_param_grad(dw1, db1, &dhidden, &trace.norm2_out);
    }
    let mut dnorm2 = vec![0.0; dim];
    affine_input_grad(params.get("ff.w1"), &dhidden, &mut dnorm2);
    let dres_ln = {
        let (dg, db) = split_pair(grads, "ln2.gamma", "ln2.beta");
        layer_norm_grad(&trace.norm2, params.get("ln2.gamma"), &dnorm2, dg, db)
    };
    let dresidual: Vec<f64> = dx.iter().zip(&dres_ln).map(|(a, b)| a + b).collect();

    // attention branch
    {
        let (dwo, dbo) = split_pair(grads, "attn.wo", "attn.bo");
        affine_param_grad(dwo, dbo, &dresidual, &trace.mixed);
    }
    let mut dmixed = vec![0.0; dim];
    affine_input_grad(params.get("attn.wo"), &dresidual, &mut dmixed);

    let mut dquery = vec![0.0; dim];
    let mut dkeys = vec![vec![0.0; dim]; n_tok];
    let mut dvalues = vec![vec![0.0; dim]; n_tok];
    for h in 0..heads {
        let span = h * head_dim..(h + 1) * head_dim;
        let p = &trace.probs[h];
        let dm = &dmixed[span.clone()];
        let dp: Vec<f64> = trace
            .values
            .iter()
            .map(|v| v[span.clone()].iter().zip(dm).map(|(a, b)| a * b).sum())
            .collect();
        for (i, pi) in p.iter().enumerate() {
            dvalues[i][span.clone()].iter_mut().zip(dm).for_each(|(d, g)| *d += pi * g);
        }
        let ds = softmax_grad(p, &dp);
        let q = &trace.query[span.clone()];
        for (i, s) in ds.iter().enumerate() {
            let k = &trace.keys[i][span.clone()];
            dquery[span.clone()].iter_mut().zip(k).for_each(|(d, kv)| *d += s * scale * kv);
            dkeys[i][span.clone()].iter_mut().zip(q).for_each(|(d, qv)| *d += s * scale * qv);
        }
    }

    let mut dnormed = vec![vec![0.0; dim]; n_tok];
    {
        let (dwq, dbq) = split_pair(grads, "attn.wq", "attn.bq");
        affine_param_grad(dwq, dbq, &dquery, &trace.normed[0]);
    }
    affine_input_grad(params.get("attn.wq"), &dquery, &mut dnormed[0]);
    for i in 0..n_tok {
        {
            let (dwk, dbk) = split_pair(grads, "attn.wk", "attn.bk");
            affine_param_grad(dwk, dbk, &dkeys[i], &trace.normed[i]);
        }
        affine_input_grad(params.get("attn.wk"), &dkeys[i], &mut dnormed[i]);
        {
            let (dwv, dbv) = split_pair(grads, "attn.wv", "attn.bv");
            affine_param_grad(dwv, dbv, &dvalues[i], &trace.normed[i]);
        }
        affine_input_grad(params.get("attn.wv"), &dvalues[i], &mut dnormed[i]);
    }

    let mut dtokens: Vec<Vec<f64>> = Vec::with_capacity(n_tok);
    {
        let gamma = params.get("ln1.gamma").to_vec();
        let (dg, db) = split_pair(grads, "ln1.gamma", "ln1.beta");
        for i in 0..n_tok {
            dtokens.push(layer_norm_grad(&trace.norm1[i], &gamma, &dnormed[i], dg, db));
        }
    }
    // the CLS token also feeds the residual directly
    dtokens[0].iter_mut().zip(&dresidual).for_each(|(d, r)| *d += r);

    grads
        .get_mut("cls")
        .iter_mut()
        .zip(&dtokens[0])
        .for_each(|(g, d)| *g += d);
    let dpos = grads.get_mut("pos");
    for (i, dt) in dtokens.iter().enumerate() {
        dpos[i * dim..(i + 1) * dim].iter_mut().zip(dt).for_each(|(g, d)| *g += d);
    }
}
