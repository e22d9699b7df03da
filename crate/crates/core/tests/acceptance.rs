//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Pass criterion numbers as arguments to run
//! a subset, e.g. `cargo test --test acceptance -- 1 4`.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rvl_core::dataset::*;
use rvl_core::eval::*;
use rvl_core::features::FeatureMatrix;
use rvl_core::nn::gradcheck::{check_layer, check_network, random_tensor, GradCheck};
use rvl_core::nn::layers::{Activation, BatchNorm, Conv2d, Dense, Dropout, FreqMean, GlobalAvgPool, Gru, MaxPool2d};
use rvl_core::nn::*;
use rvl_core::rir::{analyze, clarity, drr, schroeder_decay, AcousticParams};
use rvl_core::signal::{add_noise_at_snr, convolve, normalize_minmax};
use rvl_core::{Signal, SAMPLE_RATE};
use tempfile::TempDir;

use common::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const TAUS: [f64; 5] = [0.05, 0.1, 0.2, 0.35, 0.5];

/// Amplitude-envelope RIR for the closed-form oracles, long enough for a
/// 60 dB energy drop plus margin.
fn oracle_rir(tau: f64) -> Signal {
    exp_rir(tau, 3.0 * LN10 * tau * 1.2 + 0.1, 0xC0FFEE)
}

// 1. RT60 from analyze() within 5% of 3 ln(10) tau, under 1 s per RIR.
const RT60_REL_TOL: f64 = 0.05;
const RT60_MAX_RUNTIME: Duration = Duration::from_secs(1);

fn criterion_1() -> Outcome {
    let mut detail = Vec::new();
    for tau in TAUS {
        let h = oracle_rir(tau);
        let start = Instant::now();
        let p = analyze(&h).map_err(|e| format!("tau {tau}: {e}"))?;
        let elapsed = start.elapsed();
        let expected = 3.0 * LN10 * tau;
        let rel = (p.rt60 - expected).abs() / expected;
        ensure(rel <= RT60_REL_TOL, || {
            format!("tau {tau}: rt60 {:.4} vs {expected:.4} ({:.2}%)", p.rt60, rel * 100.0)
        })?;
        ensure(elapsed < RT60_MAX_RUNTIME, || format!("tau {tau}: took {elapsed:?}"))?;
        detail.push(format!("{:.3}/{expected:.3}s", p.rt60));
    }
    Ok(detail.join(" "))
}

// 2. Broadband clarity and DRR against the exponential closed forms.
const C50_TOL_DB: f64 = 0.5;
const C80_TOL_DB: f64 = 0.5;
const DRR_TOL_DB: f64 = 1.0;

fn closed_form(window_s: f64, tau: f64) -> f64 {
    10.0 * ((2.0 * window_s / tau).exp() - 1.0).log10()
}

fn criterion_2() -> Outcome {
    let mut worst = [0.0f64; 3];
    let mut banded = Vec::new();
    for tau in TAUS {
        let h = oracle_rir(tau);
        let measured = [
            clarity(&h, 50.0).map_err(|e| e.to_string())?,
            clarity(&h, 80.0).map_err(|e| e.to_string())?,
            drr(&h).map_err(|e| e.to_string())?,
        ];
        let expected = [closed_form(0.05, tau), closed_form(0.08, tau), closed_form(0.0025, tau)];
        for (k, (name, tol)) in [("C50", C50_TOL_DB), ("C80", C80_TOL_DB), ("DRR", DRR_TOL_DB)].iter().enumerate() {
            let err = (measured[k] - expected[k]).abs();
            worst[k] = worst[k].max(err);
            ensure(err <= *tol, || {
                format!("tau {tau}: {name} {:.3} dB vs {:.3} dB", measured[k], expected[k])
            })?;
        }
        let p = analyze(&h).map_err(|e| e.to_string())?;
        banded.push(format!(
            "tau {tau}: c50 {:+.2} c80 {:+.2} drr {:+.2}",
            p.c50 - expected[0],
            p.c80 - expected[1],
            p.drr - expected[2]
        ));
    }
    println!("    octave-band averaged deviations (informational): {}", banded.join("; "));
    Ok(format!(
        "max |err| C50 {:.4} dB, C80 {:.4} dB, DRR {:.4} dB",
        worst[0], worst[1], worst[2]
    ))
}

// 3. Ordering and amplitude-scaling invariants on random RIRs.
const SCALE_DRIFT_DB: f64 = 1e-6;
const SCALE_DRIFT_REL: f64 = 1e-9;

fn random_rir(seed: u64) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = rng.random_range(0.03..0.5);
    let mut h = exp_rir(tau, 3.0 * LN10 * tau * 1.2 + 0.1, seed);
    // Sparse early reflections on top of the diffuse tail.
    for _ in 0..rng.random_range(0..6) {
        let at = rng.random_range(8..(0.08 * SAMPLE_RATE as f64) as usize);
        h.samples[at] += rng.random_range(-0.8..0.8);
    }
    let gain = rng.random_range(0.05..3.0);
    h.samples.iter_mut().for_each(|v| *v *= gain);
    h
}

fn param_drift(a: &AcousticParams, b: &AcousticParams) -> (f64, f64) {
    let db = [(a.c50, b.c50), (a.c80, b.c80), (a.drr, b.drr)]
        .iter()
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    (db, (a.rt60 - b.rt60).abs() / a.rt60)
}

fn criterion_3() -> Outcome {
    let mut worst_db = 0.0f64;
    let mut worst_rel = 0.0f64;
    for seed in 0..100u64 {
        let h = random_rir(1000 + seed);
        let d = schroeder_decay(&h).map_err(|e| format!("rir {seed}: {e}"))?;
        ensure(d.levels_db.windows(2).all(|w| w[1] <= w[0]), || format!("rir {seed}: decay not monotone"))?;
        let p = analyze(&h).map_err(|e| format!("rir {seed}: {e}"))?;
        ensure(p.drr <= p.c50 && p.c50 <= p.c80, || {
            format!("rir {seed}: drr {} c50 {} c80 {}", p.drr, p.c50, p.c80)
        })?;
        let bb = [drr(&h), clarity(&h, 50.0), clarity(&h, 80.0)];
        let bb: Vec<f64> = bb.into_iter().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        ensure(bb[0] <= bb[1] && bb[1] <= bb[2], || format!("rir {seed}: broadband ordering {bb:?}"))?;
        for c in [1e-3, 0.37, 11.0] {
            let scaled = Signal::new(h.samples.iter().map(|v| v * c).collect(), h.sample_rate);
            let q = analyze(&scaled).map_err(|e| format!("rir {seed} x{c}: {e}"))?;
            let (db, rel) = param_drift(&p, &q);
            worst_db = worst_db.max(db);
            worst_rel = worst_rel.max(rel);
            ensure(db <= SCALE_DRIFT_DB && rel <= SCALE_DRIFT_REL, || {
                format!("rir {seed} x{c}: drift {db:e} dB, rt60 rel {rel:e}")
            })?;
        }
    }
    Ok(format!("100 RIRs; scaling drift {worst_db:.1e} dB, rt60 rel {worst_rel:.1e}"))
}

// 4. Transform-based vs direct convolution.
const CONV_REL_TOL: f64 = 1e-9;

fn direct_convolution(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len() + h.len() - 1];
    for (i, xi) in x.iter().enumerate() {
        for (j, hj) in h.iter().enumerate() {
            y[i + j] += xi * hj;
        }
    }
    y
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for pair in 0..200 {
        let nx = rng.random_range(1..4000);
        let nh = rng.random_range(1..1500);
        let x: Vec<f64> = (0..nx).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h: Vec<f64> = (0..nh).map(|_| StandardNormal.sample(&mut rng)).collect();
        let fast = convolve(&Signal::new(x.clone(), SAMPLE_RATE), &Signal::new(h.clone(), SAMPLE_RATE))
            .map_err(|e| e.to_string())?;
        let slow = direct_convolution(&x, &h);
        ensure(fast.len() == slow.len(), || format!("pair {pair}: length {} vs {}", fast.len(), slow.len()))?;
        let peak = slow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = fast.samples.iter().zip(&slow).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let rel = err / peak;
        worst = worst.max(rel);
        ensure(rel < CONV_REL_TOL, || format!("pair {pair} ({nx}x{nh}): relative error {rel:e}"))?;
    }
    Ok(format!("200 pairs, max relative error {worst:.2e}"))
}

// 5. Empirical SNR of add_noise_at_snr.
const SNR_TOL_DB: f64 = 0.1;

fn criterion_5() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let y = normalize_minmax(&noise_bursts(8.0, 9000 + seed));
        for target in [15.0, 10.0, 5.0, 0.0] {
            let noisy = add_noise_at_snr(&y, target, seed).map_err(|e| e.to_string())?;
            let p_noise = noisy
                .samples
                .iter()
                .zip(&y.samples)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / y.len() as f64;
            let measured = 10.0 * (y.power() / p_noise).log10();
            let err = (measured - target).abs();
            worst = worst.max(err);
            ensure(err <= SNR_TOL_DB, || format!("seed {seed}: {measured:.4} dB for target {target}"))?;
        }
    }
    Ok(format!("200 draws, max |error| {worst:.2e} dB"))
}

// 6. Finite-difference gradient checks.
const GRAD_TOL: f64 = 1e-4;
const GRAD_MAX_RUNTIME: Duration = Duration::from_secs(60);

fn worst_of(checks: &[GradCheck]) -> f64 {
    checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
}

fn mini_crnn2() -> ModelSpec {
    use LayerSpec::*;
    ModelSpec {
        architecture: Architecture::Crnn2,
        layers: vec![
            Conv { kernel: 3, filters: 2 },
            Conv { kernel: 3, filters: 3 },
            Conv { kernel: 3, filters: 3 },
            Conv { kernel: 3, filters: 3 },
            Gru { units: 3 },
            Gru { units: 3 },
            Dense { units: 5 },
            Dense { units: 4 },
            Dense { units: 4 },
        ],
        activation: ActivationKind::Elu,
        batch_norm: true,
        dropout: 0.0,
    }
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bn = BatchNorm::<f64>::new("bn", 3);
    bn.gamma.value = vec![0.5, 1.5, -0.7];
    bn.beta.value = vec![0.1, -0.2, 0.3];
    let mut gru_seq = Gru::<f64>::new("gru", 3, 4, true, &mut rng);
    gru_seq.b.value = random_tensor(vec![12], 1).data;
    let mut gru_last = Gru::<f64>::new("gru", 3, 4, false, &mut rng);
    gru_last.b.value = random_tensor(vec![12], 2).data;
    let mut dense = Dense::<f64>::new("dense", 5, 3, 6.0, &mut rng);
    dense.bias.value = vec![0.1, -0.3, 0.2];
    let cases: Vec<(&str, Layer<f64>, Vec<usize>)> = vec![
        ("conv", Layer::Conv(Conv2d::new("conv", 2, 3, 3, &mut rng)), vec![2, 2, 6, 5]),
        ("max pool", Layer::MaxPool(MaxPool2d::new(2, 2)), vec![2, 2, 5, 4]),
        ("global pool", Layer::GlobalAvgPool(GlobalAvgPool), vec![2, 3, 4, 3]),
        ("freq mean", Layer::FreqMean(FreqMean), vec![2, 3, 4, 3]),
        ("batch norm", Layer::BatchNorm(bn), vec![3, 3, 4, 2]),
        ("gru seq", Layer::Gru(gru_seq), vec![2, 5, 3]),
        ("gru last", Layer::Gru(gru_last), vec![2, 5, 3]),
        ("dense", Layer::Dense(dense), vec![4, 5]),
        ("relu", Layer::Activation(Activation::new(ActivationKind::Relu)), vec![3, 7]),
        ("elu", Layer::Activation(Activation::new(ActivationKind::Elu)), vec![3, 7]),
        ("dropout off", Layer::Dropout(Dropout::new(0.0)), vec![4, 6]),
    ];
    let mut summary = Vec::new();
    for (i, (name, mut layer, shape)) in cases.into_iter().enumerate() {
        let checks = check_layer(&mut layer, &random_tensor(shape, 100 + i as u64), 200 + i as u64)
            .map_err(|e| format!("{name}: {e}"))?;
        let w = worst_of(&checks);
        ensure(w < GRAD_TOL, || format!("{name}: relative error {w:e}"))?;
        summary.push(format!("{name} {w:.0e}"));
    }
    let mut net = Network::<f64>::build(&mini_crnn2(), 48, 20, 7).map_err(|e| e.to_string())?;
    let x = random_tensor(vec![2, 1, 48, 20], 8);
    let y = random_tensor(vec![2, 4], 9);
    let checks = check_network(&mut net, &x, &y).map_err(|e| e.to_string())?;
    let w = worst_of(&checks);
    ensure(w < GRAD_TOL, || format!("mini crnn2: relative error {w:e}"))?;
    summary.push(format!("mini crnn2 {w:.0e}"));
    let elapsed = start.elapsed();
    ensure(elapsed < GRAD_MAX_RUNTIME, || format!("took {elapsed:?}"))?;
    Ok(format!("{} in {:.1}s", summary.join(", "), elapsed.as_secs_f64()))
}

// 7. Parameter counts of the three presets at the 8 s input shape.
const COUNT_TARGETS: [(Architecture, f64); 3] = [
    (Architecture::Baseline, 1.66e6),
    (Architecture::Crnn1, 1.74e6),
    (Architecture::Crnn2, 369e3),
];
const COUNT_REL_TOL: f64 = 0.15;
const MAX_RATIO: f64 = 0.30;
const INPUT_FRAMES: usize = 798;
const INPUT_COEFFS: usize = 20;

fn criterion_7() -> Outcome {
    let mut counts = Vec::new();
    for (arch, target) in COUNT_TARGETS {
        let n = build_model(&ModelSpec::preset(arch), INPUT_FRAMES, INPUT_COEFFS, 0)
            .map_err(|e| e.to_string())?
            .parameter_count();
        let rel = (n as f64 - target) / target;
        ensure(rel.abs() <= COUNT_REL_TOL, || format!("{arch}: {n} vs {target} ({:+.1}%)", rel * 100.0))?;
        counts.push((arch, n, rel));
    }
    let ratio = counts[2].1 as f64 / counts[0].1 as f64;
    ensure(ratio < MAX_RATIO, || format!("crnn2/baseline ratio {ratio:.3}"))?;
    Ok(format!(
        "{}; crnn2/baseline {ratio:.3}",
        counts
            .iter()
            .map(|(a, n, r)| format!("{a} {n} ({:+.1}%)", r * 100.0))
            .collect::<Vec<_>>()
            .join(", ")
    ))
}

// 8. Desk-scale learning on a synthetic corpus.
const LEARN_RIRS: usize = 40;
const LEARN_SOURCES: usize = 10;
const LEARN_CHUNK_S: f64 = 2.0;
const LEARN_SOURCE_S: f64 = 16.05;
// Short bursts and long gaps leave decays of up to 2 s visible above the
// added noise. Lengths in samples.
const LEARN_BURST: std::ops::Range<usize> = 1600..4800;
const LEARN_GAP: std::ops::Range<usize> = 8000..16000;
const LEARN_MAX_EPOCHS: usize = 30;
const LEARN_RT60_RATIO: f64 = 0.60;
const LEARN_MAPE_WINS: usize = 3;

fn learn_rt60(i: usize) -> f64 {
    0.1 + 1.9 * i as f64 / (LEARN_RIRS - 1) as f64
}

fn criterion_8() -> Outcome {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let rt60s: Vec<f64> = (0..LEARN_RIRS).map(learn_rt60).collect();
    let (audio, rirs) = write_corpus(dir.path(), 0, 0.0, &rt60s);
    for i in 0..LEARN_SOURCES {
        let src = gated_noise(LEARN_SOURCE_S, 100 + i as u64, LEARN_BURST, LEARN_GAP);
        write(&audio.join(format!("src{i:02}.wav")), &src);
    }
    let (m, _) = build_manifest(&audio, &rirs, &SplitConfig::default(), PairingPolicy::default(), 8)
        .map_err(|e| e.to_string())?;
    let build = BuildConfig {
        chunk_s: LEARN_CHUNK_S,
        seed: 8,
        ..BuildConfig::default()
    };
    let out = dir.path().join("ds");
    let t0 = Instant::now();
    build_dataset(&m, &build, &out).map_err(|e| e.to_string())?;
    let ds = Dataset::open(&out).map_err(|e| e.to_string())?;
    let train_set = ds.load_split(Split::Train).map_err(|e| e.to_string())?;
    let build_time = t0.elapsed();

    let features: Vec<FeatureMatrix> = train_set.iter().map(|e| e.features.clone()).collect();
    let targets: Vec<[f64; 4]> = train_set.iter().map(|e| e.targets).collect();
    let cfg = TrainConfig {
        batch_size: 32,
        max_epochs: LEARN_MAX_EPOCHS,
        seed: 8,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let (model, history) = train(
        &ModelSpec::preset(Architecture::Crnn2),
        &features,
        &targets,
        &build.features,
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    let train_time = t1.elapsed();

    let net = evaluate(&model, &ds, false).map_err(|e| e.to_string())?.report.test.overall;
    let mean = evaluate(&ConstantEstimator::mean_of(&train_set), &ds, false)
        .map_err(|e| e.to_string())?
        .report
        .test
        .overall;
    let ratio = net.params[0].rmse / mean.params[0].rmse;
    let wins = net
        .params
        .iter()
        .zip(&mean.params)
        .filter(|(a, b)| matches!((a.mape, b.mape), (Some(x), Some(y)) if x < y))
        .count();
    let table = render_table(&[("crnn2", &net), ("mean", &mean)]);
    for line in table.lines() {
        println!("    {line}");
    }
    let detail = format!(
        "train {} / test {} examples, build {:.0}s, train {:.0}s ({} epochs, best {}), rt60 rmse ratio {ratio:.3}, mape wins {wins}/4",
        train_set.len(),
        net.n,
        build_time.as_secs_f64(),
        train_time.as_secs_f64(),
        history.epochs.len(),
        history.best_epoch
    );
    ensure(ratio <= LEARN_RT60_RATIO && wins >= LEARN_MAPE_WINS, || detail.clone())?;
    Ok(detail)
}

// 9. Metric values and table rounding.
fn criterion_9() -> Outcome {
    let m = |p: &[f64], t: &[f64]| mape(p, t).map_err(|e| e.to_string());
    let r = |p: &[f64], t: &[f64]| rmse(p, t).map_err(|e| e.to_string());
    ensure(m(&[1.0, 1.0], &[1.0, 2.0])? == 25.0, || "mape([1,1],[1,2]) != 25".into())?;
    ensure(m(&[2.0], &[1.0])? == 100.0, || "mape([2],[1]) != 100".into())?;
    ensure(m(&[0.3, -2.0], &[0.3, -2.0])? == 0.0, || "mape of exact predictions != 0".into())?;
    ensure(r(&[1.0, 3.0], &[1.0, 1.0])? == 2f64.sqrt(), || "rmse([1,3],[1,1]) != sqrt 2".into())?;
    ensure(r(&[4.0], &[1.0])? == 3.0, || "rmse([4],[1]) != 3".into())?;
    ensure(r(&[0.3, -2.0], &[0.3, -2.0])? == 0.0, || "rmse of exact predictions != 0".into())?;
    ensure(mape(&[1.0], &[0.0]).is_err() && rmse(&[], &[]).is_err(), || "degenerate inputs accepted".into())?;
    ensure(format_mape(Some(65.0)) == "65" && format_rmse(0.4) == "0.4", || "cell rounding".into())?;
    let param = |name: &str, mape: f64, rmse: f64| ParamMetrics {
        parameter: name.into(),
        mape: Some(mape),
        rmse,
        mape_rejected: Vec::new(),
        near_zero_db: 0,
    };
    let g = GroupMetrics {
        n: 1,
        params: vec![
            param("rt60", 65.2, 0.4349),
            param("c50", 41.0, 3.96),
            param("c80", 28.49, 2.04),
            param("drr", 116.0, 3.0),
        ],
    };
    let row = render_table(&[("Baseline", &g)]);
    let expected = "Baseline & 65 & 0.4 & 41 & 4.0 & 28 & 2.0 & 116 & 3.0 \\\\";
    ensure(row.lines().nth(1) == Some(expected), || format!("rendered row {row:?}"))?;
    Ok(expected.to_string())
}

// 10. Pipeline determinism in single-threaded mode.
fn pipeline(root: &Path, out: &Path) -> Result<(), String> {
    let rt60s = [0.2, 0.35, 0.5, 0.7, 0.9, 1.2];
    let (audio, rirs) = write_corpus(root, 4, 2.2, &rt60s);
    fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let analyses = analyze_rir_dir(&rirs).map_err(|e| e.to_string())?;
    write_rir_analysis(&out.join(RIR_ANALYSIS_FILE), &analyses).map_err(|e| e.to_string())?;
    let (m, _) = build_manifest(&audio, &rirs, &SplitConfig::default(), PairingPolicy { rirs_per_chunk: Some(3) }, 10)
        .map_err(|e| e.to_string())?;
    let build = BuildConfig {
        chunk_s: 2.0,
        seed: 10,
        ..BuildConfig::default()
    };
    let ds_dir = out.join("dataset");
    build_dataset(&m, &build, &ds_dir).map_err(|e| e.to_string())?;
    let ds = Dataset::open(&ds_dir).map_err(|e| e.to_string())?;
    let train_set = ds.load_split(Split::Train).map_err(|e| e.to_string())?;
    let features: Vec<FeatureMatrix> = train_set.iter().map(|e| e.features.clone()).collect();
    let targets: Vec<[f64; 4]> = train_set.iter().map(|e| e.targets).collect();
    let mut spec = mini_crnn2();
    spec.dropout = CONV_DROPOUT;
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 3,
        seed: 10,
        ..TrainConfig::default()
    };
    let (model, _) = train(&spec, &features, &targets, &build.features, &cfg).map_err(|e| e.to_string())?;
    save_model(&model, &out.join("model.rvlm")).map_err(|e| e.to_string())?;
    let loaded = load_model(&out.join("model.rvlm")).map_err(|e| e.to_string())?;
    let ev = evaluate(&loaded, &ds, true).map_err(|e| e.to_string())?;
    write_reports(&ev, &out.join("report")).map_err(|e| e.to_string())
}

fn criterion_10() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let runs = ["a", "b"].map(|r| dir.path().join(r));
    for run in &runs {
        pool.install(|| pipeline(&run.join("corpus"), &run.join("out")))?;
    }
    let files = [
        RIR_ANALYSIS_FILE.to_string(),
        format!("dataset/{INDEX_FILE}"),
        "model.rvlm".to_string(),
        format!("report/{REPORT_JSON}"),
    ];
    for f in &files {
        let a = fs::read(runs[0].join("out").join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = fs::read(runs[1].join("out").join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(a == b, || format!("{f} differs between runs"))?;
    }
    Ok(format!("byte-identical: {}", files.join(", ")))
}

const CRITERIA: [(u32, &str, fn() -> Outcome); 10] = [
    (1, "RT60 oracle", criterion_1),
    (2, "clarity/DRR oracle", criterion_2),
    (3, "ordering and scaling invariants", criterion_3),
    (4, "convolution equivalence", criterion_4),
    (5, "SNR accuracy", criterion_5),
    (6, "gradient checks", criterion_6),
    (7, "parameter counts", criterion_7),
    (8, "desk-scale learning", criterion_8),
    (9, "metric correctness", criterion_9),
    (10, "pipeline determinism", criterion_10),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS {name} [{secs:.1}s]: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name} [{secs:.1}s]: {reason}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
