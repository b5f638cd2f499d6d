//! Command contracts, driven through the same entry point as the binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use serde_json::Value;
use sslnet::cli::main_with_args;
use sslnet::dsp::{load_wav, read_stack_archive, Extractor, SpectralConfig};
use sslnet::encoders::read_embedding_archive;
use sslnet::trainer::{Manifest, ModelBundle, Split};

fn cli(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("sslnet").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Small corpus plus extracted archives, built once and shared read-only.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: PathBuf,
    config: PathBuf,
}

const SMALL_MODEL: &str = "[model]\nd = 8\nsemantic_hidden = 8\nconv_widths = [4, 8]\nhead_hidden = 8\n[train]\nepochs = 2\n";

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        assert_eq!(cli(&["synth", "--out", s(&data), "--classes", "3", "--clips-per-class", "10", "--seed", "3"]), 0);
        let manifest = data.join("manifest.csv");
        let feat = root.join("feat");
        assert_eq!(cli(&["extract", "--manifest", s(&manifest), "--out", s(&feat)]), 0);
        let config = root.join("run.toml");
        fs::write(
            &config,
            format!(
                "[paths]\nmanifest = {:?}\nfeatures = {:?}\nembeddings = {:?}\n{SMALL_MODEL}",
                s(&manifest),
                s(&feat.join("features.sslf")),
                s(&feat.join("embeddings.ssle"))
            ),
        )
        .unwrap();
        Fixture {
            _dir: dir,
            root,
            manifest,
            config,
        }
    })
}

fn trained(strategy: &str) -> PathBuf {
    static TRAINING: Mutex<()> = Mutex::new(());
    let _guard = TRAINING.lock().unwrap_or_else(|e| e.into_inner());
    let f = fixture();
    let run = f.root.join(format!("train-{strategy}"));
    if !run.join("model.sslb").exists() {
        assert_eq!(cli(&["train", "--config", s(&f.config), "--strategy", strategy, "--out", s(&run)]), 0);
    }
    run
}

#[test]
fn synth_writes_one_wav_per_clip_with_70_10_20_split() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    assert_eq!(cli(&["synth", "--out", s(&out), "--duration", "0.2", "--seed", "1"]), 0);
    let m = Manifest::load(out.join("manifest.csv")).unwrap();
    assert_eq!(m.records().len(), 1000);
    assert_eq!(fs::read_dir(out.join("audio")).unwrap().count(), 1000);
    let counts: Vec<usize> = Split::ALL.iter().map(|&sp| m.split(sp).count()).collect();
    assert_eq!(counts, [700, 100, 200]);
    for label in m.vocabulary() {
        let per: Vec<usize> = Split::ALL
            .iter()
            .map(|&sp| m.split(sp).filter(|r| &r.label == label).count())
            .collect();
        assert_eq!(per, [140, 20, 40]);
    }
}

#[test]
fn synth_is_bitwise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(cli(&["synth", "--out", s(out), "--classes", "2", "--clips-per-class", "3", "--seed", "9"]), 0);
    }
    assert_eq!(fs::read(a.join("manifest.csv")).unwrap(), fs::read(b.join("manifest.csv")).unwrap());
    for entry in fs::read_dir(a.join("audio")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join("audio").join(&name)).unwrap(), fs::read(b.join("audio").join(&name)).unwrap());
    }
}

#[test]
fn class_zero_tone_peaks_in_the_mel_row_nearest_1khz() {
    let f = fixture();
    let m = Manifest::load(&f.manifest).unwrap();
    let record = m.records().iter().find(|r| r.label == "class00").unwrap();
    let clip = load_wav(m.audio_path(record), &record.id).unwrap();
    let cfg = SpectralConfig::default();
    let mel = Extractor::new(&cfg).unwrap().mel_spectrogram(&clip).unwrap();

    // peaks of the triangles, mel-uniform between f_min and f_max
    let to_mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let (lo, hi) = (to_mel(cfg.f_min), to_mel(cfg.f_max));
    let target = to_mel(1000.0);
    let nearest = (0..cfg.n_mels)
        .min_by(|&a, &b| {
            let peak = |i: usize| lo + (hi - lo) * (i + 1) as f64 / (cfg.n_mels + 1) as f64;
            (peak(a) - target).abs().total_cmp(&(peak(b) - target).abs())
        })
        .unwrap();
    let mut votes = vec![0; cfg.n_mels];
    for c in 0..mel.cols() {
        votes[mel.argmax_in_column(c)] += 1;
    }
    let winner = (0..cfg.n_mels).max_by_key(|&r| votes[r]).unwrap();
    assert_eq!(winner, nearest);
}

#[test]
fn extract_archives_every_record_in_manifest_order_with_unit_train_moments() {
    let f = fixture();
    let m = Manifest::load(&f.manifest).unwrap();
    let records = read_stack_archive(f.root.join("feat/features.sslf"), 64, 64).unwrap();
    let ids: Vec<&str> = records.iter().map(|r| r.stack.source_id()).collect();
    let expected: Vec<&str> = m.records().iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, expected);

    let train: Vec<_> = records
        .iter()
        .zip(m.records())
        .filter(|(_, r)| r.split == Split::Train)
        .map(|(a, _)| &a.stack)
        .collect();
    for c in 0..3 {
        let values: Vec<f64> = train.iter().flat_map(|st| st.channel(c).iter().copied()).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        // archives hold f32
        assert!(mean.abs() < 1e-4, "channel {c} mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-4, "channel {c} std {}", var.sqrt());
    }

    let again = f.root.join("feat-again");
    assert_eq!(cli(&["extract", "--manifest", s(&f.manifest), "--out", s(&again)]), 0);
    for name in ["features.sslf", "features.norm.json", "embeddings.ssle"] {
        assert_eq!(fs::read(f.root.join("feat").join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn extract_reports_a_missing_wav_as_a_data_error() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(&f.manifest).unwrap();
    let manifest = f.manifest.parent().unwrap().join("broken.csv");
    let first = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string();
    fs::write(&manifest, text.replacen(&first, "audio/nowhere.wav", 1)).unwrap();
    assert_eq!(cli(&["extract", "--manifest", s(&manifest), "--out", s(dir.path())]), 2);
    assert!(!dir.path().join("features.sslf").exists());
}

#[test]
fn train_writes_one_history_record_per_epoch() {
    let h = json(&trained("fixed").join("history.json"));
    let epochs = h["epochs"].as_array().unwrap();
    assert_eq!(epochs.len(), 2);
    for (i, e) in epochs.iter().enumerate() {
        assert_eq!(e["epoch"].as_u64(), Some(i as u64));
        assert!(e["train_loss"].as_f64().unwrap().is_finite());
        assert!(e["val_accuracy"].as_f64().is_some());
    }
}

#[test]
fn invalid_strategy_is_a_configuration_error() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    let text = fs::read_to_string(&f.config).unwrap() + "[fusion]\nstrategy = \"attention\"\n";
    fs::write(&config, text).unwrap();
    assert_eq!(cli(&["train", "--config", s(&config), "--out", s(dir.path())]), 1);
    assert!(!dir.path().join("model.sslb").exists());
    assert_eq!(cli(&["train", "--config", s(&f.config), "--strategy", "attention", "--out", s(dir.path())]), 1);
}

#[test]
fn unknown_config_key_and_usage_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[train]\nepochz = 3\n").unwrap();
    assert_eq!(cli(&["train", "--config", s(&config), "--out", s(dir.path())]), 1);
    assert_eq!(cli(&["frobnicate"]), 1);
    assert_eq!(cli(&["train", "--epochs", "many"]), 1);
}

#[test]
fn same_seed_gives_identical_history_and_bundle() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(cli(&["train", "--config", s(&f.config), "--seed", "7", "--strategy", "sampling", "--out", s(out)]), 0);
    }
    for name in ["history.json", "model.sslb"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn eval_metrics_are_consistent_with_their_confusion_matrix() {
    let f = fixture();
    let run = trained("shared");
    let bundle = run.join("model.sslb");
    assert_eq!(cli(&["eval", "--config", s(&f.config), "--bundle", s(&bundle), "--split", "val", "--out", s(&run)]), 0);
    let m = json(&run.join("metrics_val.json"));
    let confusion: Vec<Vec<u64>> = serde_json::from_value(m["confusion"].clone()).unwrap();
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
    assert_eq!(total, 3);
    assert_eq!(m["accuracy"].as_f64().unwrap(), trace as f64 / total as f64);
    for key in ["precision_macro", "recall_macro", "f1_macro"] {
        assert!((0.0..=1.0).contains(&m[key].as_f64().unwrap()), "{key}");
    }
    let params = ModelBundle::load(&bundle).unwrap().param_count();
    assert_eq!(m["params"].as_u64(), Some(params as u64));
}

#[test]
fn eval_with_a_missing_bundle_or_manifest_exits_with_2() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.sslb");
    assert_eq!(cli(&["eval", "--config", s(&f.config), "--bundle", s(&missing), "--out", s(dir.path())]), 2);
    let bundle = trained("fixed").join("model.sslb");
    let no_manifest = dir.path().join("none.csv");
    assert_eq!(
        cli(&["eval", "--config", s(&f.config), "--manifest", s(&no_manifest), "--bundle", s(&bundle), "--out", s(dir.path())]),
        2
    );
}

#[test]
fn sweep_writes_one_row_per_strategy_and_budget() {
    let f = fixture();
    let out = f.root.join("sweep");
    let args = ["sweep", "--config", s(&f.config), "--budgets", "1,3,7", "--strategies", "sampling,fixed,shared", "--epochs", "1"];
    assert_eq!(cli(&[&args[..], &["--out", s(&out)]].concat()), 0);
    let rows = json(&out.join("sweep.json"))["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 9);
    let mut seen: Vec<(String, u64)> = rows
        .iter()
        .map(|r| (r["strategy"].as_str().unwrap().to_string(), r["budget"].as_u64().unwrap()))
        .collect();
    seen.sort();
    let mut expected = Vec::new();
    for name in ["fixed", "sampling", "shared"] {
        for k in [1, 3, 7] {
            expected.push((name.to_string(), k));
        }
    }
    assert_eq!(seen, expected);
    assert!(rows.iter().all(|r| r["accuracy"].is_number() && r["confusion"].is_array()));
}

#[test]
fn sweep_rejects_a_budget_above_the_train_split() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["sweep", "--config", s(&f.config), "--budgets", "8", "--out", s(dir.path())]), 1);
}

#[test]
fn dump_writes_one_fused_vector_per_split_record() {
    let f = fixture();
    let m = Manifest::load(&f.manifest).unwrap();
    for (strategy, width) in [("shared", 16), ("sampling", 32)] {
        let run = trained(strategy);
        let bundle = run.join("model.sslb");
        let mut bytes = Vec::new();
        for pass in 0..2 {
            let out = run.join(format!("dump{pass}"));
            assert_eq!(cli(&["dump-embeddings", "--config", s(&f.config), "--bundle", s(&bundle), "--out", s(&out)]), 0);
            bytes.push(fs::read(out.join("fused_test.ssle")).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
        let archive = read_embedding_archive(run.join("dump0/fused_test.ssle")).unwrap();
        assert_eq!(archive.dim, width);
        assert_eq!(archive.records.len(), m.split(Split::Test).count());
        let labels = archive.labels.unwrap();
        for ((id, _), label) in archive.records.iter().zip(labels) {
            let record = m.records().iter().find(|r| &r.id == id).unwrap();
            assert_eq!(m.label_index(&record.label), Some(label as usize));
        }
    }
}
