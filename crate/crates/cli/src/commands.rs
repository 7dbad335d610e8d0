use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use tfrdisc::audio::{load_wav, save_wav};
use tfrdisc::config::Config;
use tfrdisc::disc::{DiscKind, Discriminator};
use tfrdisc::gradcheck::{run_gradchecks, GradcheckConfig};
use tfrdisc::metrics::{evaluate_pair_with, reports_csv, MetricReport};
use tfrdisc::nn::Checkpoint;
use tfrdisc::tfr::{write_csv, write_tfr1};
use tfrdisc::train::{load_corpus, run as run_training, write_toy_corpus, TrainReport, Trainer};
use tfrdisc::TransformKind;

use crate::{plot, Cli, Command, DiscScoreArgs, GradcheckArgs, MetricsArgs, TrainToyArgs, TransformArgs, UsageError};

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let mut cfg = Config::resolve(cli.config.as_deref())?;
    match &cli.command {
        Command::Transform(a) => transform(&mut cfg, a),
        Command::Metrics(a) => metrics(&mut cfg, a),
        Command::DiscScore(a) => disc_score(&cfg, a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::TrainToy(a) => train_toy(&mut cfg, a),
        Command::ToyCorpus { dir } => {
            for p in write_toy_corpus(dir)? {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn log_config(cfg: &Config) -> Result<()> {
    cfg.validate()?;
    info!("resolved config:\n{}", cfg.to_toml());
    Ok(())
}

fn transform(cfg: &mut Config, a: &TransformArgs) -> Result<ExitCode> {
    let kind: TransformKind = a.kind.parse()?;
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut cfg.stft.n_fft, a.n_fft);
    set(&mut cfg.stft.win_len, a.win_len.or(a.n_fft));
    set(&mut cfg.cqt.bins_per_octave, a.bins_per_octave);
    set(&mut cfg.cqt.n_octaves, a.octaves);
    set(&mut cfg.cwt.max_scale, a.max_scale);
    match kind {
        TransformKind::Stft => set(&mut cfg.stft.hop, a.hop),
        TransformKind::Cqt => set(&mut cfg.cqt.hop, a.hop),
        TransformKind::Cwt if a.hop.is_some() => {
            return Err(UsageError("--hop does not apply to the CWT".into()).into())
        }
        TransformKind::Cwt => {}
    }
    if let Some(f1) = a.f1 {
        cfg.cqt.f1 = f1;
    }
    if a.scales.is_some() {
        cfg.cwt.count = a.scales;
    }
    if let Some(b) = &a.basis {
        cfg.cwt.basis = b.parse()?;
    }
    log_config(cfg)?;

    let buf = load_wav(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let spec = cfg.transform(&buf, kind)?;
    write_tfr1(&spec, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.plot {
        plot::heatmap(&spec, p)?;
    }
    if let Some(p) = &a.csv {
        write_csv(&spec, p)?;
    }
    println!(
        "{{\"kind\":\"{kind}\",\"bins\":{},\"frames\":{},\"hop\":{},\"rate\":{}}}",
        spec.bins(),
        spec.frames(),
        spec.hop(),
        spec.source_rate()
    );
    Ok(ExitCode::SUCCESS)
}

fn wav_names(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            if let Some(name) = p.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string(), p.clone());
            }
        }
    }
    Ok(out)
}

fn metrics(cfg: &mut Config, a: &MetricsArgs) -> Result<ExitCode> {
    if let Some(f) = a.fmin {
        cfg.metrics.pitch.fmin = f;
    }
    if let Some(f) = a.fmax {
        cfg.metrics.pitch.fmax = f;
    }
    log_config(cfg)?;
    let refs = wav_names(&a.ref_dir)?;
    let degs = wav_names(&a.deg_dir)?;
    let mut skipped: Vec<String> = Vec::new();
    for name in refs.keys().filter(|n| !degs.contains_key(*n)) {
        skipped.push(format!("{name}: missing from {}", a.deg_dir.display()));
    }
    for name in degs.keys().filter(|n| !refs.contains_key(*n)) {
        skipped.push(format!("{name}: missing from {}", a.ref_dir.display()));
    }
    let pairs: Vec<(&String, &PathBuf, &PathBuf)> =
        refs.iter().filter_map(|(n, r)| degs.get(n).map(|d| (n, r, d))).collect();
    let mcfg = cfg.metrics;
    let results: Vec<(String, tfrdisc::Result<MetricReport>)> = pairs
        .par_iter()
        .map(|&(name, r, d)| {
            let rep = load_wav(r).and_then(|r| load_wav(d).and_then(|d| evaluate_pair_with(&r, &d, &mcfg)));
            (name.clone(), rep)
        })
        .collect();

    let json_dir = match &a.json_dir {
        Some(d) => d.clone(),
        None => a.out.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !json_dir.as_os_str().is_empty() {
        fs::create_dir_all(&json_dir)?;
    }
    let mut reports = Vec::new();
    for (name, res) in results {
        match res {
            Ok(mut rep) => {
                rep.file = name.clone();
                let stem = Path::new(&name).file_stem().and_then(|s| s.to_str()).unwrap_or(&name);
                fs::write(json_dir.join(format!("{stem}.metrics.json")), rep.to_json())?;
                reports.push(rep);
            }
            Err(e) => skipped.push(format!("{name}: {e}")),
        }
    }
    for s in &skipped {
        warn!("skipped {s}");
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, reports_csv(&reports))?;
    info!("{} pairs evaluated, {} skipped", reports.len(), skipped.len());
    if reports.is_empty() {
        warn!("no pair could be evaluated");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SubScore {
    name: String,
    kind: String,
    mean_logit: f64,
    feature_shapes: Vec<[usize; 4]>,
}

#[derive(Serialize)]
struct DiscScore {
    file: String,
    discs: String,
    seed: u64,
    checkpoint: Option<String>,
    subs: Vec<SubScore>,
}

fn disc_score(cfg: &Config, a: &DiscScoreArgs) -> Result<ExitCode> {
    log_config(cfg)?;
    let kinds = DiscKind::parse_set(&a.disc)?;
    let mut disc = Discriminator::new(cfg.disc.clone(), &kinds, a.seed)?;
    if let Some(p) = &a.ckpt {
        let ck = Checkpoint::load(p).with_context(|| format!("reading {}", p.display()))?;
        ck.load_module("disc", &mut disc).map_err(|e| {
            UsageError(format!("checkpoint {} does not fit the configured discriminator: {e}", p.display()))
        })?;
    }
    if let Some(p) = &a.save_ckpt {
        let mut ck = Checkpoint::new();
        ck.add_module("disc", &disc);
        ck.save(p)?;
    }
    let buf = load_wav(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let buf = if buf.sample_rate() == cfg.disc.sample_rate {
        buf
    } else {
        tfrdisc::audio::resample(&buf, cfg.disc.sample_rate)?
    };
    let outs = disc.forward_detached(std::slice::from_ref(&buf))?;
    let subs = outs
        .iter()
        .map(|o| {
            let logits = o.logits();
            SubScore {
                name: o.name.clone(),
                kind: o.kind.to_string(),
                mean_logit: logits.data().iter().sum::<f64>() / logits.data().len() as f64,
                feature_shapes: o.features.iter().map(|f| f.shape()).collect(),
            }
        })
        .collect();
    let score = DiscScore {
        file: a.input.display().to_string(),
        discs: kinds.iter().map(|k| k.letter()).collect(),
        seed: a.seed,
        checkpoint: a.ckpt.as_ref().map(|p| p.display().to_string()),
        subs,
    };
    let json = serde_json::to_string_pretty(&score)?;
    match &a.out {
        Some(p) => fs::write(p, json)?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    let cfg = GradcheckConfig { seed: a.seed, coords: a.coords, fault: a.fault.clone(), ..GradcheckConfig::default() };
    let names: Vec<&str> = a.only.iter().map(String::as_str).collect();
    let results = run_gradchecks(&cfg, &names)?;
    println!("{:<18} {:<9} {:>7} {:>12} {:>8}  status", "check", "kind", "coords", "max rel err", "tol");
    for r in &results {
        println!(
            "{:<18} {:<9} {:>7} {:>12.3e} {:>8.0e}  {}",
            r.name,
            format!("{:?}", r.kind).to_lowercase(),
            r.checked,
            r.max_rel_err,
            r.tol,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    if let Some(p) = &a.json {
        fs::write(p, serde_json::to_string_pretty(&results)?)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        println!("{failed} of {} checks failed", results.len());
        return Ok(ExitCode::from(1));
    }
    println!("all {} checks passed", results.len());
    Ok(ExitCode::SUCCESS)
}

fn train_toy(cfg: &mut Config, a: &TrainToyArgs) -> Result<ExitCode> {
    let t = &mut cfg.train;
    if let Some(s) = a.steps {
        t.steps = s;
    }
    if let Some(d) = &a.discs {
        t.discs = d.clone();
    }
    if let Some(s) = a.seed {
        t.seed = s;
    }
    if let Some(c) = a.crop {
        t.crop = c;
    }
    // the snapshot's [disc] then describes the saved discriminator
    cfg.disc = cfg.train.disc.clone();
    log_config(cfg)?;

    let corpus = load_corpus(&a.corpus, cfg.train.disc.sample_rate)?;
    let names: Vec<String> =
        corpus.iter().map(|(p, _)| p.file_stem().and_then(|s| s.to_str()).unwrap_or("clip").to_string()).collect();
    let mut trainer = Trainer::new(cfg.train.clone(), corpus.into_iter().map(|(_, b)| b).collect())?;
    let rows = run_training(&mut trainer, cfg.train.steps)?;
    let report = TrainReport { config: cfg.train.clone(), rows };

    let out = &a.out;
    fs::create_dir_all(out.join("samples"))?;
    fs::write(out.join("losses.csv"), report.csv())?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    trainer.checkpoint().save(out.join("checkpoint.ckpt"))?;
    let clips = trainer.corpus().to_vec();
    for (name, clip) in names.iter().zip(&clips) {
        let y = trainer.synthesize(clip)?;
        save_wav(&y, out.join("samples").join(format!("{name}.wav")))?;
    }
    if let (Some(first), Some(last)) = (report.rows.first(), report.rows.last()) {
        info!("steps {} to {}: eval mel {:?} -> {:?}", first.step, last.step, first.eval_mel, last.eval_mel);
    }
    println!("{}", out.display());
    Ok(ExitCode::SUCCESS)
}
