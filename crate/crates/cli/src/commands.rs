use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use rvl_core::dataset::{
    analyze_rir_file, balance, build_dataset, build_manifest, list_wavs, write_rir_analysis, BuildConfig, Dataset,
    PairingPolicy, RirAnalysis, Split, SplitConfig, INDEX_FILE, RIR_ANALYSIS_FILE,
};
use rvl_core::eval::{evaluate, render_report, render_table, write_reports, EvalReport, Estimator, GroupMetrics, OracleEstimator};
use rvl_core::nn::{load_model, save_model, train as train_model, ModelSpec, TrainConfig};
use rvl_core::rir::validate;
use sha2::{Digest, Sha256};

use crate::config::{self, pick, AnalyzeRun, BuildRun, EvalRun, FileConfig, TrainRun};
use crate::{AnalyzeArgs, BuildArgs, CliError, EvalArgs, ReportArgs, TrainArgs};

fn runtime(context: String) -> impl FnOnce(std::io::Error) -> CliError {
    move |e| CliError::Runtime(anyhow::Error::new(e).context(context))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

/// `(rir_id, shown path, full path)` for every WAV named or found under a directory.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<(String, String, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            for rel in list_wavs(input)? {
                let id = rel.rsplit_once('.').map_or(rel.as_str(), |(s, _)| s).to_string();
                out.push((id, input.join(&rel).display().to_string(), input.join(&rel)));
            }
        } else if input.is_file() {
            let id = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            out.push((id, input.display().to_string(), input.clone()));
        } else {
            return Err(CliError::Data(anyhow!("{} does not exist", input.display())));
        }
    }
    Ok(out)
}

pub fn analyze(args: AnalyzeArgs, threads: usize) -> Result<(), CliError> {
    let files = expand_inputs(&args.inputs)?;
    let records: Vec<RirAnalysis> = files
        .par_iter()
        .map(|(id, shown, path)| match analyze_rir_file(path) {
            Ok(p) => {
                let v = validate(&p);
                RirAnalysis {
                    rir_id: id.clone(),
                    path: shown.clone(),
                    accepted: v.is_accept(),
                    error: match v {
                        rvl_core::rir::Validation::Accept => None,
                        rvl_core::rir::Validation::Reject(r) => Some(r),
                    },
                    params: Some(p),
                }
            }
            Err(e) => RirAnalysis {
                rir_id: id.clone(),
                path: shown.clone(),
                accepted: false,
                params: None,
                error: Some(format!("{}: {e}", e.kind())),
            },
        })
        .collect();

    println!("{:<24} {:>6} {:>9} {:>8} {:>8} {:>8}  status", "rir", "band", "rt60 s", "c50 dB", "c80 dB", "drr dB");
    for r in &records {
        match &r.params {
            Some(p) => {
                for b in &p.per_band {
                    println!(
                        "{:<24} {:>6} {:>9.3} {:>8.2} {:>8.2} {:>8.2}",
                        r.rir_id,
                        b.band.to_string(),
                        b.rt60,
                        b.c50,
                        b.c80,
                        b.drr
                    );
                }
                for x in &p.excluded_bands {
                    println!("{:<24} {:>6} excluded: {}", r.rir_id, x.band.to_string(), x.reason);
                }
                let status = match &r.error {
                    None => "ok".to_string(),
                    Some(reason) => format!("REJECTED: {reason}"),
                };
                println!(
                    "{:<24} {:>6} {:>9.3} {:>8.2} {:>8.2} {:>8.2}  {status}",
                    r.rir_id, "all", p.rt60, p.c50, p.c80, p.drr
                );
            }
            None => println!(
                "{:<24} {:>6} error: {}",
                r.rir_id,
                "-",
                r.error.as_deref().unwrap_or("unknown")
            ),
        }
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(runtime(format!("creating {}", dir.display())))?;
    }
    write_rir_analysis(&args.out, &records).map_err(|e| CliError::Runtime(e.into()))?;
    config::persist(
        &sibling(&args.out, "analyze_config.json"),
        &AnalyzeRun {
            threads,
            inputs: args.inputs.clone(),
            out: args.out.clone(),
        },
    )?;
    let failed = records.iter().filter(|r| r.params.is_none()).count();
    log::info!("{} analyzed, {failed} failed, wrote {}", records.len(), args.out.display());
    if failed == records.len() {
        return Err(CliError::Data(anyhow!("every input failed analysis")));
    }
    Ok(())
}

pub fn build(args: BuildArgs, file: &FileConfig, threads: usize) -> Result<(), CliError> {
    let f = &file.build;
    let defaults = BuildConfig::default();
    let split_defaults = SplitConfig::default();
    let rir_counts = match args.rir_counts.as_deref() {
        Some([train, test]) => Some((*train, *test)),
        Some(_) => return Err(CliError::Config(anyhow!("--rir-counts takes exactly two values"))),
        None => f.rir_counts.map(|[a, b]| (a, b)),
    };
    let k = pick(args.rirs_per_chunk, f.rirs_per_chunk, PairingPolicy::default().rirs_per_chunk.unwrap_or(0));
    let bins = pick(args.balance_bins, f.balance_bins, 0);
    let seed = pick(args.seed, file.seed, 0);
    let run = BuildRun {
        threads,
        seed,
        audio_dir: args.audio,
        rir_dir: args.rirs,
        out_dir: args.out,
        split: SplitConfig {
            audio_train_ratio: pick(args.audio_train_ratio, f.audio_train_ratio, split_defaults.audio_train_ratio),
            rir_train_ratio: pick(args.rir_train_ratio, f.rir_train_ratio, split_defaults.rir_train_ratio),
            rir_counts,
        },
        pairing: PairingPolicy {
            rirs_per_chunk: (k > 0).then_some(k),
        },
        balance_bins: (bins > 0).then_some(bins),
        dataset: BuildConfig {
            snr_db: pick(args.snr, f.snr_db.clone(), defaults.snr_db),
            chunk_s: pick(args.chunk_s, f.chunk_s, defaults.chunk_s),
            features: defaults.features,
            shard_size: pick(args.shard_size, f.shard_size, defaults.shard_size),
            seed,
        },
    };
    if !(run.dataset.chunk_s > 0.0) {
        return Err(CliError::Config(anyhow!("chunk length must be positive")));
    }
    std::fs::create_dir_all(&run.out_dir).map_err(runtime(format!("creating {}", run.out_dir.display())))?;
    config::persist(&run.out_dir.join("build_config.json"), &run)?;

    log::info!("analyzing RIRs under {}", run.rir_dir.display());
    let (manifest, analyses) = build_manifest(&run.audio_dir, &run.rir_dir, &run.split, run.pairing, run.seed)?;
    write_rir_analysis(&run.out_dir.join(RIR_ANALYSIS_FILE), &analyses)?;
    for r in &manifest.rejected_rirs {
        log::warn!("RIR {} excluded: {}", r.path, r.reason);
    }
    let manifest = match run.balance_bins {
        Some(n) => balance(&manifest, n)?,
        None => manifest,
    };
    log::info!(
        "{} train / {} test audio files, {} train / {} test RIRs",
        manifest.audio_in(Split::Train).count(),
        manifest.audio_in(Split::Test).count(),
        manifest.rirs_in(Split::Train).count(),
        manifest.rirs_in(Split::Test).count()
    );
    let summary = build_dataset(&manifest, &run.dataset, &run.out_dir)?;
    let index = std::fs::read(run.out_dir.join(INDEX_FILE)).map_err(runtime("reading index".into()))?;
    println!(
        "built {} train + {} test examples ({}x{} features) in {} shards",
        summary.examples[&Split::Train],
        summary.examples[&Split::Test],
        summary.frames,
        summary.coeffs,
        summary.shards
    );
    println!("index sha256 {:x}", Sha256::digest(&index));
    Ok(())
}

pub fn train(args: TrainArgs, file: &FileConfig, threads: usize) -> Result<(), CliError> {
    let f = &file.train;
    let d = TrainConfig::default();
    let arch = config::parse_arch(&pick(args.arch, f.arch.clone(), "crnn2".into()))?;
    let run = TrainRun {
        threads,
        history_path: args.history.unwrap_or_else(|| sibling(&args.out, "history.json")),
        dataset_dir: args.dataset,
        model_path: args.out,
        spec: ModelSpec::preset(arch),
        train: TrainConfig {
            batch_size: pick(args.batch_size, f.batch_size, d.batch_size),
            learning_rate: pick(args.lr, f.learning_rate, d.learning_rate),
            beta1: pick(None, f.beta1, d.beta1),
            beta2: pick(None, f.beta2, d.beta2),
            epsilon: pick(None, f.epsilon, d.epsilon),
            patience: pick(args.patience, f.patience, d.patience),
            max_epochs: pick(args.max_epochs, f.max_epochs, d.max_epochs),
            seed: pick(args.seed, file.seed, d.seed),
            validation_fraction: pick(args.validation_fraction, f.validation_fraction, d.validation_fraction),
            keep_optimizer_state: args.keep_optimizer_state || f.keep_optimizer_state.unwrap_or(false),
        },
    };
    run.train.validate()?;
    config::persist(&sibling(&run.model_path, "train_config.json"), &run)?;

    let ds = Dataset::open(&run.dataset_dir)?;
    let examples = ds.load_split(Split::Train)?;
    if examples.is_empty() {
        return Err(CliError::Data(anyhow!("{} has no training examples", run.dataset_dir.display())));
    }
    log::info!("training {arch} on {} examples", examples.len());
    let features: Vec<_> = examples.iter().map(|e| e.features.clone()).collect();
    let targets: Vec<_> = examples.iter().map(|e| e.targets).collect();
    drop(examples);
    let (model, history) = train_model(&run.spec, &features, &targets, &ds.info.build.features, &run.train)?;
    save_model(&model, &run.model_path)?;
    let mut body = serde_json::to_string_pretty(&history).expect("history serializes");
    body.push('\n');
    std::fs::write(&run.history_path, body).map_err(runtime(format!("writing {}", run.history_path.display())))?;
    println!(
        "{arch}: {} parameters, {} epochs, best epoch {} (validation loss {:.6}), saved {}",
        model.parameter_count(),
        history.epochs.len(),
        history.best_epoch,
        history.epochs.iter().map(|e| e.validation_loss).fold(f64::INFINITY, f64::min),
        run.model_path.display()
    );
    Ok(())
}

pub fn eval(args: EvalArgs, file: &FileConfig, threads: usize) -> Result<(), CliError> {
    let run = EvalRun {
        threads,
        model_path: args.model,
        dataset_dir: args.dataset,
        out_dir: args.out,
        train_metrics: args.train_metrics || file.eval.train_metrics.unwrap_or(false),
        oracle: args.oracle,
    };
    std::fs::create_dir_all(&run.out_dir).map_err(runtime(format!("creating {}", run.out_dir.display())))?;
    config::persist(&run.out_dir.join("eval_config.json"), &run)?;
    let ds = Dataset::open(&run.dataset_dir)?;
    let model;
    let est: &dyn Estimator = if run.oracle {
        &OracleEstimator
    } else {
        let path = run.model_path.as_ref().expect("clap requires --model without --oracle");
        model = load_model(path)?;
        let s = &ds.info.summary;
        if (model.input_frames(), model.input_coeffs()) != (s.frames, s.coeffs) {
            return Err(CliError::Data(anyhow!(
                "model expects {}x{} features, dataset has {}x{}",
                model.input_frames(),
                model.input_coeffs(),
                s.frames,
                s.coeffs
            )));
        }
        if model.meta.feature_config != ds.info.build.features {
            return Err(CliError::Data(anyhow!("model and dataset use different feature settings")));
        }
        &model
    };
    let ev = evaluate(est, &ds, run.train_metrics)?;
    write_reports(&ev, &run.out_dir)?;
    print!("{}", render_report(&ev.report));
    log::info!("wrote reports to {}", run.out_dir.display());
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    for input in &args.inputs {
        let path = if input.is_dir() { input.join("report.json") } else { input.clone() };
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(CliError::Data)?;
        let r: EvalReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(CliError::Data)?;
        let label = if reports.iter().any(|(l, _)| *l == r.model) {
            format!("{} ({})", r.model, input.display())
        } else {
            r.model.clone()
        };
        reports.push((label, r));
    }
    let mut rows: Vec<(String, &GroupMetrics)> = Vec::new();
    let mut snr_rows: Vec<(String, &GroupMetrics)> = Vec::new();
    for (label, r) in &reports {
        let split = if args.train {
            r.train
                .as_ref()
                .ok_or_else(|| CliError::Data(anyhow!("{label} has no training-split metrics")))?
        } else {
            &r.test
        };
        rows.push((label.clone(), &split.overall));
        for g in &split.per_snr {
            snr_rows.push((format!("{label} {} dB", g.snr_db), &g.metrics));
        }
    }
    let as_refs = |v: &[(String, &GroupMetrics)]| -> String {
        let refs: Vec<(&str, &GroupMetrics)> = v.iter().map(|(l, g)| (l.as_str(), *g)).collect();
        render_table(&refs)
    };
    let text = format!("{}\nBy SNR\n{}", as_refs(&rows), as_refs(&snr_rows));
    print!("{text}");
    if let Some(out) = &args.out {
        std::fs::write(out, &text).map_err(runtime(format!("writing {}", out.display())))?;
    }
    Ok(())
}
