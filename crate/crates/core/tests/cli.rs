use std::path::Path;
use std::process::{Command, Output};

fn multiband(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multiband"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn synthesize(dir: &Path) -> String {
    let out = multiband(&[
        "synthesize",
        "--out",
        dir.to_str().unwrap(),
        "--clips",
        "12",
        "--train",
        "6",
        "--val",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

#[test]
fn evaluate_analyze_and_decompose() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthesize(&dir.path().join("data"));
    let out_dir = dir.path().join("run");
    let out = out_dir.to_str().unwrap();

    let r = multiband(&["encode", "--manifest", &manifest, "--output-dir", out, "--methods", "BB,MP"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8_lossy(&r.stdout);
    assert!(text.contains("BB: 12 clips, 1 x 64") && text.contains("MB: 12 clips, 16 x 64"), "{text}");

    let r = multiband(&[
        "evaluate", "--manifest", &manifest, "--output-dir", out, "--methods", "BB,MP", "--epochs", "2",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out_dir.join("results.csv").exists());
    assert!(out_dir.join("gain_over_baseband.csv").exists());
    assert!(out_dir.join("checkpoints/MP.json").exists());

    let r = multiband(&["analyze", "--manifest", &manifest, "--output-dir", out, "--methods", "BB,MP"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out_dir.join("band_similarity.csv").exists());
    assert!(out_dir.join("class_separation.csv").exists());

    let clip = Path::new(&manifest).parent().unwrap().join("clip_0000.wav");
    let bands = dir.path().join("bands");
    let r = multiband(&["decompose", clip.to_str().unwrap(), "--out", bands.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(std::fs::read_dir(&bands).unwrap().count(), 16);
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthesize(&dir.path().join("data"));
    let config = dir.path().join("spec.json");
    std::fs::write(
        &config,
        format!(r#"{{"version": 1, "manifest": "{manifest}", "methods": ["BB"], "output_dir": "run"}}"#),
    )
    .unwrap();
    let r = multiband(&["train-fusion", "--config", config.to_str().unwrap(), "--methods", "TE", "--epochs", "1"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(dir.path().join("run/checkpoints/TE.json").exists());
    assert!(!dir.path().join("run/checkpoints/BB.json").exists());
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("spec.json");
    std::fs::write(&config, r#"{"version": 2, "manifest": "m.csv", "methods": ["BB"], "output_dir": "o"}"#).unwrap();
    assert_eq!(code(&multiband(&["evaluate", "--config", config.to_str().unwrap()])), 1);

    std::fs::write(&config, r#"{"manifest": "m.csv", "methods": ["BB"], "output_dir": "o", "extra": 1}"#).unwrap();
    assert_eq!(code(&multiband(&["evaluate", "--config", config.to_str().unwrap()])), 1);

    assert_eq!(code(&multiband(&["encode"])), 1);
    assert_eq!(code(&multiband(&["encode", "--manifest", "m.csv", "--output-dir", "o", "--epochs", "0"])), 1);
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthesize(&dir.path().join("data"));
    let out = dir.path().join("run");
    let r = multiband(&[
        "encode",
        "--manifest",
        &manifest,
        "--output-dir",
        out.to_str().unwrap(),
        "--encoder",
        "tcp://127.0.0.1:1",
    ]);
    assert_eq!(code(&r), 2, "{}", String::from_utf8_lossy(&r.stderr));
}
