use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvl_core::dataset::{IndexRecord, RirAnalysis};
use rvl_core::eval::EvalReport;
use rvl_core::nn::{Architecture, History, ModelSpec, build_model, load_model};
use rvl_core::signal::{write_wav, WavEncoding};
use rvl_core::Signal;
use tempfile::TempDir;

const SR: u32 = 16_000;

fn rvl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvl"))
        .args(args)
        .env_remove("RVL_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rvl(args);
    assert!(
        out.status.success(),
        "rvl {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn exp_rir(rt60: f64, seed: u64) -> Signal {
    let tau = rt60 / (3.0 * std::f64::consts::LN_10);
    let n = ((rt60 * 1.1 + 0.2) * SR as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let sign = if i == 0 || rng.random::<bool>() { 1.0 } else { -1.0 };
            0.9 * sign * (-(i as f64) / SR as f64 / tau).exp()
        })
        .collect();
    Signal::new(samples, SR)
}

fn source(seconds: f64, seed: u64) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SR as f64) as usize;
    let mut on = true;
    let mut left = 0;
    let mut gain = 0.0;
    let samples = (0..n)
        .map(|_| {
            if left == 0 {
                on = !on;
                left = rng.random_range(800..6400);
                gain = if on { rng.random_range(0.1..0.3) } else { 0.002 };
            }
            left -= 1;
            gain * rng.random_range(-1.0..1.0)
        })
        .collect();
    Signal::new(samples, SR)
}

fn put(path: &Path, sig: &Signal) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    write_wav(path, sig, WavEncoding::Float32).unwrap();
}

fn corpus(root: &Path, n_audio: usize, seconds: f64, rt60s: &[f64]) -> (PathBuf, PathBuf) {
    let (audio, rirs) = (root.join("audio"), root.join("rirs"));
    for i in 0..n_audio {
        put(&audio.join(format!("a{i}.wav")), &source(seconds, i as u64));
    }
    for (i, &r) in rt60s.iter().enumerate() {
        put(&rirs.join(format!("r{i}.wav")), &exp_rir(r, 100 + i as u64));
    }
    (audio, rirs)
}

fn jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Small dataset with both splits: 1 s chunks, all RIRs per chunk.
fn small_dataset(root: &Path) -> PathBuf {
    let (audio, rirs) = corpus(root, 4, 2.1, &[0.3, 0.6, 0.9, 1.2]);
    let out = root.join("ds");
    ok(&[
        "build", "--audio", s(&audio), "--rirs", s(&rirs), "--out", s(&out), "--chunk-s", "1",
        "--rirs-per-chunk", "0", "--audio-train-ratio", "0.5", "--rir-train-ratio", "0.5", "--seed", "3",
    ]);
    out
}

#[test]
fn analyze_reports_rt60_and_flags_failures() {
    let dir = TempDir::new().unwrap();
    let rirs = dir.path().join("rirs");
    put(&rirs.join("one.wav"), &exp_rir(1.0, 1));
    put(&rirs.join("two.wav"), &exp_rir(0.5, 2));
    put(&rirs.join("three.wav"), &exp_rir(2.0, 3));
    let out = dir.path().join("a.jsonl");
    let o = ok(&["analyze", s(&rirs), "--out", s(&out)]);
    let records: Vec<RirAnalysis> = jsonl(&out);
    assert_eq!(records.len(), 3);
    let one = records.iter().find(|r| r.rir_id == "one").unwrap();
    let rt60 = one.params.as_ref().unwrap().rt60;
    assert!((rt60 - 1.0).abs() <= 0.05, "rt60 {rt60}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("all"));
    assert!(dir.path().join("analyze_config.json").exists());

    let mut delta = vec![0.0; 4000];
    delta[0] = 1.0;
    let d = dir.path().join("delta.wav");
    put(&d, &Signal::new(delta, SR));
    let out2 = dir.path().join("b.jsonl");
    let o = rvl(&["analyze", s(&d), "--out", s(&out2)]);
    assert_eq!(o.status.code(), Some(3));
    let records: Vec<RirAnalysis> = jsonl(&out2);
    assert!(records[0].error.as_deref().unwrap().starts_with("NoLateEnergy"), "{:?}", records[0].error);
    assert!(String::from_utf8_lossy(&o.stdout).contains("NoLateEnergy"));

    let long = dir.path().join("long.wav");
    put(&long, &exp_rir(5.0, 4));
    let o = ok(&["analyze", s(&long), s(&rirs.join("one.wav")), "--out", s(&out2)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("REJECTED"));
}

#[test]
fn build_counts_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    // 4 sources of two 2 s chunks, 3 RIRs, k = 3, 4 SNRs, one split.
    let (audio, rirs) = corpus(dir.path(), 4, 4.2, &[0.3, 0.6, 0.9]);
    let mut hashes = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = ok(&[
            "build", "--audio", s(&audio), "--rirs", s(&rirs), "--out", s(&out), "--chunk-s", "2",
            "--rirs-per-chunk", "3", "--audio-train-ratio", "1", "--rir-train-ratio", "1", "--seed", "9",
        ]);
        let index: Vec<IndexRecord> = jsonl(&out.join("index.jsonl"));
        assert_eq!(index.len(), 4 * 2 * 3 * 4);
        for f in ["manifest.json", "rir_analysis.jsonl", "dataset.json", "build_config.json", "shards/000.rvlf"] {
            assert!(out.join(f).exists(), "{f}");
        }
        let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
        hashes.push(stdout.lines().find(|l| l.starts_with("index sha256")).unwrap().to_string());
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(
        fs::read(dir.path().join("a/index.jsonl")).unwrap(),
        fs::read(dir.path().join("b/index.jsonl")).unwrap()
    );
}

#[test]
fn build_excludes_long_rirs() {
    let dir = TempDir::new().unwrap();
    let (audio, rirs) = corpus(dir.path(), 2, 2.1, &[0.3, 0.6, 5.0]);
    let out = dir.path().join("ds");
    let o = ok(&[
        "build", "--audio", s(&audio), "--rirs", s(&rirs), "--out", s(&out), "--chunk-s", "2",
        "--audio-train-ratio", "1", "--rir-train-ratio", "1",
    ]);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("r2.wav") && stderr.contains("excluded"), "{stderr}");
    let index: Vec<IndexRecord> = jsonl(&out.join("index.jsonl"));
    assert!(index.iter().all(|r| r.meta.rir_id != "r2"));
    assert_eq!(index.len(), 2 * 2 * 4);
}

#[test]
fn config_precedence_and_exit_codes() {
    let dir = TempDir::new().unwrap();
    let (audio, rirs) = corpus(dir.path(), 2, 2.1, &[0.3, 0.6]);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 5\n[build]\nchunk_s = 1.0\nsnr_db = [20.0, 3.0]\nshard_size = 3\n").unwrap();
    let out = dir.path().join("ds");
    ok(&[
        "--config", s(&cfg), "build", "--audio", s(&audio), "--rirs", s(&rirs), "--out", s(&out),
        "--snr", "12", "--audio-train-ratio", "1", "--rir-train-ratio", "1", "--rirs-per-chunk", "0",
    ]);
    let resolved: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("build_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 5);
    assert_eq!(resolved["dataset"]["chunk_s"], 1.0);
    assert_eq!(resolved["dataset"]["snr_db"], serde_json::json!([12.0]));
    assert_eq!(resolved["dataset"]["shard_size"], 3);
    assert_eq!(resolved["split"]["audio_train_ratio"], 1.0);
    assert_eq!(resolved["threads"], 1);
    let index: Vec<IndexRecord> = jsonl(&out.join("index.jsonl"));
    assert_eq!(index.len(), 2 * 2 * 2);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[build]\nno_such_key = 1\n").unwrap();
    let o = rvl(&["--config", s(&bad), "build", "--audio", s(&audio), "--rirs", s(&rirs), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = rvl(&["build", "--audio", s(&audio), "--rirs", s(&rirs), "--out", s(&out), "--audio-train-ratio", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = rvl(&["train", "--dataset", s(&dir.path().join("missing")), "--out", s(&dir.path().join("m.rvlm"))]);
    assert_eq!(o.status.code(), Some(3));
    let o = rvl(&["train", "--dataset", s(&out), "--arch", "resnet", "--out", s(&dir.path().join("m.rvlm"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = rvl(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_history_and_reproducible_model() {
    let dir = TempDir::new().unwrap();
    let ds = small_dataset(dir.path());
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let model = dir.path().join(run).join("crnn2.rvlm");
        ok(&[
            "train", "--dataset", s(&ds), "--arch", "crnn2", "--out", s(&model), "--max-epochs", "15",
            "--batch-size", "8", "--seed", "2",
        ]);
        let history: History = serde_json::from_str(&fs::read_to_string(model.with_file_name("history.json")).unwrap()).unwrap();
        assert!(!history.epochs.is_empty() && history.epochs.len() <= 15);
        for w in history.epochs.windows(2) {
            assert!(w[1].best_validation_loss <= w[0].best_validation_loss);
        }
        assert!(model.with_file_name("train_config.json").exists());
        bytes.push(fs::read(&model).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);

    let report = dir.path().join("report");
    let model = dir.path().join("a/crnn2.rvlm");
    let o = ok(&["eval", "--model", s(&model), "--dataset", s(&ds), "--out", s(&report), "--train-metrics"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("crnn2 & "));
    let r: EvalReport = serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert!(r.train.is_some());
    assert!(r.test.overall.params.iter().all(|p| p.rmse.is_finite()));
}

#[test]
fn model_files_record_parameter_counts() {
    let dir = TempDir::new().unwrap();
    let ds = small_dataset(dir.path());
    for arch in Architecture::ALL {
        let model = dir.path().join(format!("{arch}.rvlm"));
        ok(&[
            "train", "--dataset", s(&ds), "--arch", arch.name(), "--out", s(&model), "--max-epochs", "1",
            "--batch-size", "16",
        ]);
        let m = load_model(&model).unwrap();
        let expected = build_model(&ModelSpec::preset(arch), 98, 20, 0).unwrap().parameter_count();
        assert_eq!(m.meta.parameter_count, expected);
        let raw = fs::read(&model).unwrap();
        let header_len = u32::from_le_bytes(raw[6..10].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&raw[10..10 + header_len]).unwrap();
        assert_eq!(header["parameter_count"], expected);
    }
}

#[test]
fn oracle_eval_and_report() {
    let dir = TempDir::new().unwrap();
    let ds = small_dataset(dir.path());
    let out = dir.path().join("oracle");
    let o = ok(&["eval", "--oracle", "--dataset", s(&ds), "--out", s(&out)]);
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(text.contains("oracle & 0 & 0.0 & 0 & 0.0 & 0 & 0.0 & 0 & 0.0"), "{text}");
    let r: EvalReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let snrs: Vec<f64> = r.test.per_snr.iter().map(|g| g.snr_db).collect();
    assert_eq!(snrs, vec![15.0, 10.0, 5.0, 0.0]);
    assert!(r.test.overall.params.iter().all(|p| p.rmse == 0.0 && p.mape == Some(0.0)));
    let n_test = jsonl::<IndexRecord>(&ds.join("index.jsonl"))
        .iter()
        .filter(|r| r.meta.split == rvl_core::dataset::Split::Test)
        .count();
    let scatter = fs::read_to_string(out.join("scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 1 + 4 * n_test);
    assert!(out.join("report.txt").exists() && out.join("eval_config.json").exists());

    let table = dir.path().join("table.txt");
    let o = ok(&["report", s(&out), s(&out.join("report.json")), "--out", s(&table)]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().filter(|l| l.starts_with("oracle")).count() >= 2, "{text}");
    assert_eq!(fs::read_to_string(&table).unwrap(), text);
}
