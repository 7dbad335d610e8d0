use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tfrdisc::audio::{save_wav, synth_tone, ToneKind};
use tfrdisc::tfr::read_tfr1;

fn tfrdisc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfrdisc"))
        .args(args)
        .arg("--quiet")
        .env_remove("TFRDISC_CONFIG")
        .output()
        .expect("spawn tfrdisc")
}

fn ok(args: &[&str]) -> String {
    let out = tfrdisc(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tone(dir: &Path, name: &str, freq: f64, rate: u32) -> PathBuf {
    let p = dir.join(name);
    save_wav(&synth_tone(freq, 1.0, rate, ToneKind::Sawtooth).unwrap(), &p).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn transform_shapes_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let wav = tone(dir.path(), "a.wav", 440.0, 24000);
    let out = dir.path().join("a.tfr");
    let png = dir.path().join("a.png");

    let json = ok(&["transform", s(&wav), "--kind", "cqt", "--out", s(&out), "--plot", s(&png)]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["bins"], 216);
    assert_eq!(v["hop"], 256);
    let spec = read_tfr1(&out).unwrap();
    assert_eq!(spec.bins(), 216);
    assert_eq!(spec.frames(), v["frames"].as_u64().unwrap() as usize);
    assert!(fs::metadata(&png).unwrap().len() > 0);

    ok(&["transform", s(&wav), "--kind", "stft", "--out", s(&out)]);
    assert_eq!(read_tfr1(&out).unwrap().bins(), 513);

    let csv = dir.path().join("a.csv");
    ok(&["transform", s(&wav), "--kind", "cwt", "--max-scale", "128", "--out", s(&out), "--csv", s(&csv)]);
    let spec = read_tfr1(&out).unwrap();
    assert_eq!(spec.bins(), 128);
    assert_eq!(spec.frames(), 24000);
    assert!(fs::read_to_string(&csv).unwrap().lines().count() > 1);
}

#[test]
fn transform_flag_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let wav = tone(dir.path(), "a.wav", 440.0, 24000);
    let out = dir.path().join("a.tfr");
    let code = |args: &[&str]| tfrdisc(args).status.code();
    assert_eq!(code(&["transform", s(&wav), "--kind", "mdct", "--out", s(&out)]), Some(2));
    assert_eq!(code(&["transform", s(&wav), "--kind", "cwt", "--hop", "64", "--out", s(&out)]), Some(2));
    assert_eq!(code(&["transform", s(&wav), "--kind", "stft", "--n-fft", "0", "--out", s(&out)]), Some(2));
    assert_eq!(code(&["transform", s(&wav), "--kind", "cwt", "--basis", "haar", "--out", s(&out)]), Some(2));
    assert_eq!(code(&["--jobs", "0", "gradcheck"]), Some(2));
    assert!(!out.exists());
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let wav = tone(dir.path(), "a.wav", 440.0, 24000);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[stft]\nhop = 0\n").unwrap();
    let out = dir.path().join("a.tfr");
    let run = |extra: &[&str]| {
        let mut args = vec!["transform", s(&wav), "--kind", "stft", "--out", s(&out), "--config", s(&cfg)];
        args.extend_from_slice(extra);
        tfrdisc(&args).status.code()
    };
    assert_eq!(run(&[]), Some(2));
    fs::write(&cfg, "[stft]\nnfft = 512\n").unwrap();
    assert_eq!(run(&[]), Some(2));
    fs::write(&cfg, "[stft]\nn_fft = 512\nwin_len = 512\n").unwrap();
    assert_eq!(run(&[]), Some(0));
    assert_eq!(read_tfr1(&out).unwrap().bins(), 257);
}

#[test]
fn metrics_identical_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (r, d) = (dir.path().join("ref"), dir.path().join("deg"));
    fs::create_dir_all(&r).unwrap();
    fs::create_dir_all(&d).unwrap();
    for (name, f) in [("a.wav", 220.0), ("b.wav", 330.0)] {
        tone(&r, name, f, 24000);
        tone(&d, name, f, 24000);
    }
    tone(&r, "only_ref.wav", 440.0, 24000);
    let csv = dir.path().join("m.csv");
    ok(&["metrics", s(&r), s(&d), "--out", s(&csv)]);

    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 + 2, "{text}");
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    for row in &rows {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[col("f0rmse_cents")].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cells[col("mel_l1")].parse::<f64>().unwrap(), 0.0);
    }
    for stem in ["a", "b"] {
        let j: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(format!("{stem}.metrics.json"))).unwrap())
                .unwrap();
        assert_eq!(j["f0rmse_cents"], 0.0);
    }
}

#[test]
fn metrics_without_pairs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (r, d) = (dir.path().join("ref"), dir.path().join("deg"));
    fs::create_dir_all(&r).unwrap();
    fs::create_dir_all(&d).unwrap();
    tone(&r, "a.wav", 220.0, 24000);
    let out = tfrdisc(&["metrics", s(&r), s(&d), "--out", s(&dir.path().join("m.csv"))]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn disc_score_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let wav = tone(dir.path(), "a.wav", 440.0, 24000);
    let score = |discs: &str| -> serde_json::Value {
        serde_json::from_str(&ok(&["disc-score", s(&wav), "--disc", discs, "--seed", "3"])).unwrap()
    };
    let all = score("SCW");
    assert_eq!(all["subs"].as_array().unwrap().len(), 9);
    assert_eq!(all, score("SCW"));
    let cqt = score("C");
    let subs = cqt["subs"].as_array().unwrap();
    assert_eq!(subs.len(), 3);
    assert!(subs.iter().all(|s| s["kind"] == all["subs"][3]["kind"]));
}

#[test]
fn disc_score_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let wav = tone(dir.path(), "a.wav", 440.0, 24000);
    let ck = dir.path().join("d.ckpt");
    let score = |args: &[&str]| -> serde_json::Value {
        let mut all = vec!["disc-score", s(&wav), "--disc", "S"];
        all.extend_from_slice(args);
        serde_json::from_str(&ok(&all)).unwrap()
    };
    let first = score(&["--seed", "5", "--save-ckpt", s(&ck)]);
    // parameters are stored as f32, so reloads agree with each other exactly
    // and with the original to single precision
    let a = score(&["--seed", "9", "--ckpt", s(&ck)]);
    let b = score(&["--seed", "11", "--ckpt", s(&ck)]);
    assert_eq!(a["subs"], b["subs"]);
    for (x, y) in first["subs"].as_array().unwrap().iter().zip(a["subs"].as_array().unwrap()) {
        assert_eq!(x["feature_shapes"], y["feature_shapes"]);
        let (x, y) = (x["mean_logit"].as_f64().unwrap(), y["mean_logit"].as_f64().unwrap());
        assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-6), "{x} vs {y}");
    }
    assert_ne!(first["subs"], score(&["--seed", "9"])["subs"]);
    let mismatch = tfrdisc(&["disc-score", s(&wav), "--disc", "C", "--ckpt", s(&ck)]);
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_catches_faults() {
    let out = ok(&["gradcheck", "--only", "conv2d.input", "--only", "leaky_relu"]);
    assert!(out.contains("all 2 checks passed"), "{out}");
    let bad = tfrdisc(&["gradcheck", "--only", "tanh", "--fault", "tanh"]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(tfrdisc(&["gradcheck", "--only", "nope"]).status.code(), Some(2));
}

fn train(corpus: &Path, out: &Path, discs: &str) -> Vec<String> {
    ok(&["train-toy", s(corpus), "--steps", "3", "--crop", "2048", "--discs", discs, "--seed", "1", "--out", s(out)]);
    fs::read_to_string(out.join("losses.csv")).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn train_toy_writes_a_reproducible_run() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&["toy-corpus", s(&corpus)]);
    let run_a = dir.path().join("a");
    let first = train(&corpus, &run_a, "SCW");
    assert_eq!(first.len(), 1 + 3);
    assert_eq!(first, train(&corpus, &dir.path().join("b"), "SCW"));
    assert!(run_a.join("checkpoint.ckpt").exists());
    assert!(run_a.join("config.toml").exists());
    assert!(fs::read_dir(run_a.join("samples")).unwrap().count() > 0);

    let cqt_only = train(&corpus, &dir.path().join("c"), "C");
    let cols = |h: &str| h.split(',').count();
    // adv_g, adv_d and fm per sub-discriminator
    assert_eq!(cols(&first[0]), 8 + 3 * 9);
    assert_eq!(cols(&cqt_only[0]), 8 + 3 * 3);

    // the saved discriminator and config score a file without flags
    let wav = tone(dir.path(), "x.wav", 440.0, 24000);
    let cfg = run_a.join("config.toml");
    let ck = run_a.join("checkpoint.ckpt");
    ok(&["disc-score", s(&wav), "--config", s(&cfg), "--ckpt", s(&ck)]);
}
