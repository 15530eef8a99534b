#![allow(dead_code)]

use multiband::fusion::{BandFeatureSet, FusionConfig, FusionModel, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOLERANCE: f64 = 1e-3;
/// Smallest allowed |ReLU input| in a gradient-check instance, so that a
/// finite-difference step never crosses a kink.
pub const KINK_MARGIN: f64 = 1e-2;

/// Like [`draw_instance`], redrawing until no ReLU input is within
/// [`KINK_MARGIN`] of zero.
pub fn random_instance(strategy: Strategy, seed: u64) -> (FusionModel, Vec<BandFeatureSet>) {
    (0..)
        .map(|k| draw_instance(strategy, seed.wrapping_mul(1_000).wrapping_add(k)))
        .find(|(model, batch)| {
            batch
                .iter()
                .all(|f| model.relu_inputs(f).unwrap().iter().all(|z| z.abs() > KINK_MARGIN))
        })
        .unwrap()
}

/// Random small model with every parameter perturbed away from its
/// initialization, plus a labelled batch.
pub fn draw_instance(strategy: Strategy, seed: u64) -> (FusionModel, Vec<BandFeatureSet>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bands = rng.random_range(1..=4);
    let dim = if strategy == Strategy::SelfAttention {
        2 * rng.random_range(1..=4)
    } else {
        rng.random_range(1..=8)
    };
    let classes = rng.random_range(2..=3);
    let mut cfg = FusionConfig::new(strategy, bands, dim, classes);
    cfg.seed = seed;
    cfg.hidden = 5;
    cfg.heads = if dim % 4 == 0 { 4 } else { 2.min(dim) };
    let mut model = FusionModel::init(cfg).unwrap();
    for t in &mut model.params.tensors {
        let base = if t.name.ends_with("gamma") { 1.0 } else { 0.0 };
        t.data.iter_mut().for_each(|v| *v = base + rng.random_range(-0.6..0.6));
    }
    let batch = (0..3)
        .map(|_| {
            let rows = (0..bands)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
                .collect();
            let hc = (0..bands)
                .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..0.1)])
                .collect();
            BandFeatureSet::new(rows)
                .with_handcrafted(hc)
                .with_label(rng.random_range(0..classes))
        })
        .collect();
    (model, batch)
}

/// Per-tensor `|analytic - numeric| / max(|analytic|, |numeric|)` using
/// central differences. Tensors whose gradients are both below `1e-7` in
/// norm count as matching.
pub fn gradient_errors(model: &FusionModel, batch: &[BandFeatureSet]) -> Vec<(String, f64)> {
    let refs: Vec<&BandFeatureSet> = batch.iter().collect();
    let (_, analytic) = model.loss_and_gradients(&refs).unwrap();
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (ti, t) in model.params.tensors.iter().enumerate() {
        let mut diff = 0.0;
        let mut norm_a = 0.0;
        let mut norm_n = 0.0;
        for i in 0..t.data.len() {
            let orig = t.data[i];
            probe.params.tensors[ti].data[i] = orig + FD_STEP;
            let up = probe.loss(&refs).unwrap();
            probe.params.tensors[ti].data[i] = orig - FD_STEP;
            let down = probe.loss(&refs).unwrap();
            probe.params.tensors[ti].data[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.tensors[ti].data[i];
            diff += (a - numeric).powi(2);
            norm_a += a * a;
            norm_n += numeric * numeric;
        }
        let scale = norm_a.sqrt().max(norm_n.sqrt());
        let err = if scale < 1e-7 { 0.0 } else { diff.sqrt() / scale };
        out.push((t.name.clone(), err));
    }
    out
}
