//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

mod common;

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use multiband::analysis::{band_similarity, class_separation, cosine};
use multiband::band::{compute_band_plan, time_expand, Decomposer};
use multiband::fusion::{self, BandFeatureSet, FusionConfig, FusionModel, Strategy};
use multiband::harness::synthetic::{write_chirp_dataset, ChirpDatasetSpec};
use multiband::harness::{run_experiment, ExperimentReport, ExperimentSpec, FeatureExtractor, Method, Stage};
use multiband::signal_io::{AudioClip, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn hann_spectrum(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, v)| Complex::new(v * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

fn peak_bin(x: &[f64]) -> usize {
    let s = hann_spectrum(x);
    (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap()
}

fn tone(freq: f64, fs: u32, seconds: f64, amp: f64, phase: f64) -> AudioClip {
    let n = (seconds * fs as f64).round() as usize;
    let samples = (0..n)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / fs as f64 + phase).sin())
        .collect();
    AudioClip::new(samples, fs, "tone").unwrap()
}

fn a1_band_plan() -> Check {
    let bats = compute_band_plan(250_000, 16_000).map_err(|e| e.to_string())?.band_count();
    let general = compute_band_plan(44_100, 16_000).map_err(|e| e.to_string())?.band_count();
    ensure(bats == 16 && general == 3, || format!("got B = {bats} and {general}"))?;
    Ok(format!("B(250k,16k) = {bats}, B(44.1k,16k) = {general}"))
}

fn a2_frequency_mapping() -> Check {
    let (fs, fm) = (250_000u32, 16_000u32);
    let dec = Decomposer::for_rates(fs, fm).map_err(|e| e.to_string())?;
    let plan = dec.plan().clone();
    let width = plan.band_width_hz();
    let guard = 0.05 * width;
    let nyquist = fs as f64 / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_in, mut worst_far, mut worst_bin) = (1.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let b = rng.random_range(1..=plan.band_count());
        let band = *plan.band(b).unwrap();
        let hi = band.high_hz.min(nyquist) - guard;
        let f = rng.random_range(band.low_hz + guard..hi);
        let clip = tone(f, fs, 0.2, 0.5, rng.random_range(0.0..2.0 * PI));
        let bands = dec.decompose(&clip).map_err(|e| e.to_string())?;
        let energy: Vec<f64> = bands.iter().map(|s| s.samples.iter().map(|v| v * v).sum()).collect();
        let total: f64 = energy.iter().sum();
        let share = energy[b - 1] / total;
        let far = energy
            .iter()
            .enumerate()
            .filter(|(i, _)| (*i as isize - (b as isize - 1)).abs() > 1)
            .map(|(_, e)| e / total)
            .fold(0.0, f64::max);
        let x = &bands[b - 1].samples;
        let expected = (f - band.shift_hz) / fm as f64 * x.len() as f64;
        let bin_err = (peak_bin(x) as f64 - expected).abs();
        worst_in = worst_in.min(share);
        worst_far = worst_far.max(far);
        worst_bin = worst_bin.max(bin_err);
        ensure(share >= 0.9 && far <= 0.01 && bin_err <= 1.0, || {
            format!("tone {f:.0} Hz in band {b}: share {share:.4}, far {far:.2e}, bin error {bin_err:.2}")
        })?;
    }
    Ok(format!(
        "50 tones: min in-band share {worst_in:.4}, max non-adjacent share {worst_far:.1e}, max bin error {worst_bin:.2}"
    ))
}

fn a3_time_expansion() -> Check {
    let clip = tone(100_000.0, 250_000, 0.2, 0.5, 0.0);
    let te = time_expand(&clip, 16_000).map_err(|e| e.to_string())?;
    let n = te.samples.len();
    let bin_hz = te.sample_rate_hz as f64 / n as f64;
    let peak = peak_bin(&te.samples) as f64 * bin_hz;
    ensure((peak - 6_400.0).abs() <= bin_hz, || format!("peak at {peak:.2} Hz"))?;
    Ok(format!("peak at {peak:.2} Hz (bin {bin_hz:.2} Hz)"))
}

fn a4_gradients() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for strategy in Strategy::ALL {
        for i in 0..10 {
            let (model, batch) = common::random_instance(strategy, 100 + i);
            for (name, err) in common::gradient_errors(&model, &batch) {
                worst = worst.max(err);
                ensure(err < common::GRAD_TOLERANCE, || {
                    format!("{strategy} instance {i}: {name} relative error {err:.2e}")
                })?;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("5 strategies x 10 instances, worst relative error {worst:.1e}, {secs:.1} s"))
}

fn random_sets(rng: &mut ChaCha8Rng, n: usize, bands: usize, dim: usize, classes: usize) -> Vec<BandFeatureSet> {
    (0..n)
        .map(|_| {
            let rows = (0..bands)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let hc = (0..bands).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..0.1)]).collect();
            BandFeatureSet::new(rows).with_handcrafted(hc).with_label(rng.random_range(0..classes))
        })
        .collect()
}

fn a5_degeneracies() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // zero gate
    let mp = FusionModel::init(FusionConfig::new(Strategy::MeanPool, 3, 5, 3)).unwrap();
    let gp = FusionModel::init(FusionConfig::new(Strategy::GatedPool, 3, 5, 3)).unwrap();
    for f in random_sets(&mut rng, 20, 3, 5, 3) {
        let (a, b) = (mp.logits(&f).unwrap(), gp.logits(&f).unwrap());
        ensure(a == b, || format!("zero-gate GP logits {b:?} differ from MP {a:?}"))?;
    }

    // one band: every pooled strategy trains to the plain linear probe
    let train = random_sets(&mut rng, 64, 1, 6, 2);
    let test = random_sets(&mut rng, 32, 1, 6, 2);
    let probe = fusion::train(FusionConfig::new(Strategy::MeanPool, 1, 6, 2), &train, &[]).unwrap();
    for f in &test {
        let w = probe.params.get("head.weight");
        let b = probe.params.get("head.bias");
        let direct: Vec<f64> = (0..2)
            .map(|c| b[c] + (0..6).map(|d| w[c * 6 + d] * f.functionals[0][d]).sum::<f64>())
            .collect();
        let got = probe.logits(f).unwrap();
        ensure(direct.iter().zip(&got).all(|(a, b)| (a - b).abs() < 1e-12), || {
            "B=1 probe is not the linear head".into()
        })?;
    }
    for s in [Strategy::GatedPool, Strategy::Hybrid, Strategy::MixtureOfExperts] {
        let m = fusion::train(FusionConfig::new(s, 1, 6, 2), &train, &[]).unwrap();
        for f in &test {
            let (p, q) = (probe.predict(f).unwrap(), m.predict(f).unwrap());
            ensure(p.class == q.class && probe.logits(f).unwrap() == m.logits(f).unwrap(), || {
                format!("B=1 {s} differs from the linear probe")
            })?;
        }
    }

    // gates are convex weights
    let mut worst = 0.0f64;
    for s in [Strategy::GatedPool, Strategy::Hybrid, Strategy::MixtureOfExperts] {
        for i in 0..20 {
            let (model, batch) = common::random_instance(s, 500 + i);
            for f in &batch {
                let w = model.gate_weights(f).unwrap().unwrap();
                worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    ensure(worst <= 1e-9, || format!("gate weights sum off by {worst:.1e}"))?;
    Ok(format!(
        "zero-gate GP == MP bitwise; B=1 GP/HYB/MoE == linear probe on 32 clips; max |sum w - 1| = {worst:.1e}"
    ))
}

struct SyntheticRun {
    _dir: tempfile::TempDir,
    spec: ExperimentSpec,
    report: ExperimentReport,
}

fn synthetic_spec(root: &std::path::Path, seed: u64) -> ExperimentSpec {
    let data = root.join("data");
    let manifest = write_chirp_dataset(
        &data,
        &ChirpDatasetSpec {
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    let mut spec = ExperimentSpec::new(manifest, Method::ALL.to_vec(), root.join("out"));
    spec.seed = seed;
    spec
}

fn accuracy_of(report: &ExperimentReport, m: Method) -> Option<f64> {
    report.rows.iter().find(|r| r.method == m).map(|r| r.test_accuracy)
}

fn a6_synthetic(runs: &mut Vec<SyntheticRun>) -> Check {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for rep in 0..3u64 {
        let dir = tempfile::tempdir().unwrap();
        let spec = synthetic_spec(dir.path(), rep);
        let report = run_experiment(&spec).map_err(|e| e.to_string())?;
        for f in &report.failures {
            failures.push(format!("rep {rep}: {} failed: {}", f.method, f.error));
        }
        let acc = |m| accuracy_of(&report, m).unwrap_or(f64::NAN);
        let mut line = format!("rep {rep}:");
        for m in Method::ALL {
            line.push_str(&format!(" {m} {:.1}", acc(m)));
        }
        lines.push(line);
        if !(acc(Method::Baseband) <= 60.0) {
            failures.push(format!("rep {rep}: BB {:.1}% > 60%", acc(Method::Baseband)));
        }
        if !(acc(Method::TimeExpansion) >= 80.0) {
            failures.push(format!("rep {rep}: TE {:.1}% < 80%", acc(Method::TimeExpansion)));
        }
        for m in [
            Method::MeanPool,
            Method::GatedPool,
            Method::MixtureOfExperts,
            Method::SelfAttention,
        ] {
            if !(acc(m) >= 90.0) {
                failures.push(format!("rep {rep}: {m} {:.1}% < 90%", acc(m)));
            }
        }
        runs.push(SyntheticRun {
            _dir: dir,
            spec,
            report,
        });
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 600.0 {
        failures.push(format!("took {secs:.0} s"));
    }
    let summary = format!("{} ({secs:.0} s)", lines.join("; "));
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", failures.join("; ")))
    }
}

fn a7_analysis(runs: &[SyntheticRun]) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..10 {
        let n = rng.random_range(4..=20);
        let dim = rng.random_range(2..=8);
        let classes = rng.random_range(2..=4usize);
        let vectors: Vec<(Vec<f64>, usize)> = (0..n)
            .map(|j| {
                let v = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                // the first 2 * classes vectors cover every class twice
                let label = if j < 2 * classes { j % classes } else { rng.random_range(0..classes) };
                (v, label)
            })
            .collect();
        let got = class_separation(&vectors).map_err(|e| e.to_string())?;
        let mut same = Vec::new();
        let mut diff = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let c = cosine(&vectors[a].0, &vectors[b].0);
                if vectors[a].1 == vectors[b].1 {
                    same.push(c)
                } else {
                    diff.push(c)
                }
            }
        }
        let intra = same.iter().sum::<f64>() / same.len() as f64;
        let inter = diff.iter().sum::<f64>() / diff.len() as f64;
        ensure(
            got.intra == intra && got.inter == inter && got.separation == intra - inter,
            || format!("instance {i}: {got:?} vs brute force ({intra}, {inter})"),
        )?;
    }

    let run = runs.first().ok_or("no synthetic run available")?;
    let mut extractor = FeatureExtractor::new(run.spec.clone()).map_err(|e| e.to_string())?;
    let mb = extractor.extract(Stage::MultiBand).map_err(|e| e.to_string())?;
    let sim = band_similarity(&mb.split(Split::Train)).map_err(|e| e.to_string())?;
    let chirp_band = compute_band_plan(250_000, 16_000)
        .unwrap()
        .band_of(52_000.0)
        .unwrap()
        .index;
    let c = sim.per_band_mean_cosine[chirp_band - 1];
    ensure(sim.per_band_mean_cosine[0] == 1.0, || "band 1 self-similarity is not 1".into())?;
    ensure(c < 0.99, || format!("band {chirp_band} mean cosine {c:.4} >= 0.99"))?;
    Ok(format!(
        "10 separation instances match brute force exactly; band {chirp_band} mean cosine {c:.4} over {} clips",
        sim.sample_count
    ))
}

fn a8_determinism(runs: &[SyntheticRun]) -> Check {
    let run = runs.first().ok_or("no synthetic run available")?;
    let accuracies = |r: &ExperimentReport| -> Vec<(Method, u64, Option<u64>)> {
        r.rows
            .iter()
            .map(|row| (row.method, row.test_accuracy.to_bits(), row.val_accuracy.map(f64::to_bits)))
            .collect()
    };
    let cold = accuracies(&run.report);

    let mut warm_spec = run.spec.clone();
    warm_spec.output_dir = run.spec.output_dir.with_file_name("out_warm");
    warm_spec.cache_dir = Some(run.spec.cache_dir());
    let t = Instant::now();
    let warm = run_experiment(&warm_spec).map_err(|e| e.to_string())?;
    let warm_s = t.elapsed().as_secs_f64();
    ensure(accuracies(&warm) == cold, || "warm-cache rerun changed accuracies".into())?;

    let mut fresh_spec = run.spec.clone();
    fresh_spec.output_dir = run.spec.output_dir.with_file_name("out_cold");
    fresh_spec.methods = vec![Method::Baseband, Method::MeanPool, Method::GatedPool];
    fresh_spec.cache_dir = Some(fresh_spec.output_dir.join("cache"));
    let again = run_experiment(&fresh_spec).map_err(|e| e.to_string())?;
    let subset: Vec<_> = cold
        .iter()
        .filter(|(m, ..)| fresh_spec.methods.contains(m))
        .cloned()
        .collect();
    ensure(accuracies(&again) == subset, || "cold rerun changed accuracies".into())?;
    Ok(format!(
        "{} rows identical across cold, warm ({warm_s:.1} s) and second cold runs",
        cold.len()
    ))
}

fn main() -> ExitCode {
    let mut runs = Vec::new();
    let mut results: Vec<(&str, &str, Check)> = Vec::new();
    results.push(("A1", "band plan", a1_band_plan()));
    results.push(("A2", "frequency mapping", a2_frequency_mapping()));
    results.push(("A3", "time-expansion spectrum", a3_time_expansion()));
    results.push(("A4", "gradient suite", a4_gradients()));
    results.push(("A5", "fusion degeneracies", a5_degeneracies()));
    results.push(("A6", "synthetic high-band task", a6_synthetic(&mut runs)));
    results.push(("A7", "analysis oracles", a7_analysis(&runs)));
    results.push(("A8", "determinism and cache", a8_determinism(&runs)));

    let mut failed = 0;
    for (id, name, r) in &results {
        match r {
            Ok(detail) => println!("{id} PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL {name}: {detail}")
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
