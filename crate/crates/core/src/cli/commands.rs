use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use crate::dsp::{read_stack_archive, write_stack_archive, ChannelStats, Extractor, StackRecord};
use crate::encoders::{write_embedding_archive, EmbeddingProvider, FileEmbeddings, ProviderKind};
use crate::error::{Error, Result};
use crate::trainer::{
    evaluate, extract_record, label_budget_sweep, train, Dataset, History, Manifest, Metrics, ModelBundle, ModelSetup,
    Split, SweepRow,
};

pub const FEATURES_FILE: &str = "features.sslf";
pub const NORM_FILE: &str = "features.norm.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.ssle";
pub const BUNDLE_FILE: &str = "model.sslb";
pub const HISTORY_FILE: &str = "history.json";
pub const SWEEP_FILE: &str = "sweep.json";

pub fn metrics_file(split: Split) -> String {
    format!("metrics_{split}.json")
}

pub fn fused_file(split: Split) -> String {
    format!("fused_{split}.ssle")
}

/// Channel statistics stored next to a feature archive.
pub fn norm_sidecar(features: &Path) -> PathBuf {
    features.with_file_name(NORM_FILE)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Invariant(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let out = cfg
        .paths
        .out
        .as_deref()
        .ok_or_else(|| Error::config("paths.out", "required (set it in the config or pass --out)"))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(out)
}

/// Builds the examples for `setup`, from the feature archive when one is
/// configured and from audio otherwise.
///
/// `stats`, when given, are the statistics a trained model expects.
pub fn load_dataset(cfg: &RunConfig, manifest: &Manifest, setup: &ModelSetup, stats: Option<&ChannelStats>) -> Result<Dataset> {
    let semantic = setup.model.branch.uses_semantic();
    match &cfg.paths.features {
        Some(features) => {
            let archived: ChannelStats = read_json(&norm_sidecar(features))?;
            if let Some(expected) = stats {
                if *expected != archived {
                    return Err(Error::Data(format!(
                        "{} was standardised with different statistics than the model",
                        features.display()
                    )));
                }
            }
            let records = read_stack_archive(features, setup.spectral.height, setup.spectral.width)?;
            let embeddings = if semantic {
                let path = match (&cfg.paths.embeddings, setup.provider.kind, &setup.provider.path) {
                    (Some(p), _, _) => p.clone(),
                    (None, ProviderKind::File, Some(p)) => p.clone(),
                    _ => return Err(Error::config("paths.embeddings", "required to pair embeddings with paths.features")),
                };
                Some(FileEmbeddings::open(path, Some(setup.model.d_emb))?)
            } else {
                None
            };
            Dataset::from_archive(manifest, records, archived, embeddings.as_ref())
        }
        None => {
            let provider = if semantic { Some(setup.provider.build(&setup.spectral)?) } else { None };
            Dataset::extract(manifest, &setup.spectral, provider.as_deref(), stats)
        }
    }
}

pub fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    Manifest::load(cfg.manifest_path()?)
}

/// What `extract` wrote.
#[derive(Clone, Debug)]
pub struct ExtractReport {
    pub records: usize,
    pub features: PathBuf,
    pub stats: ChannelStats,
    pub embeddings: Option<PathBuf>,
}

/// Featurises every manifest record into an `SSLF` archive plus its
/// standardisation statistics, and, for the pseudo provider, an `SSLE`
/// archive of the matching embeddings.
///
/// Every failing record is reported on stderr; nothing is written if any
/// record fails.
pub fn cmd_extract(cfg: &RunConfig, manifest: &Manifest) -> Result<ExtractReport> {
    let out = out_dir(cfg)?;
    let extractor = Extractor::new(&cfg.spectral)?;
    let provider: Option<Box<dyn EmbeddingProvider>> = if cfg.uses_pseudo_provider() {
        Some(cfg.provider.build(&cfg.spectral)?)
    } else {
        None
    };
    let mut examples = Vec::new();
    let mut first_error = None;
    let mut failures = 0usize;
    for record in manifest.records() {
        match extract_record(manifest, record, &extractor, provider.as_deref()) {
            Ok(ex) => examples.extend(ex),
            Err(e) => {
                eprintln!("error: record `{}`: {e}", record.id);
                failures += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        if failures == 1 {
            return Err(e);
        }
        return Err(Error::Data(format!("{failures} records failed; first: {e}")));
    }
    let data = Dataset::standardize(manifest.vocabulary().to_vec(), examples, None)?;
    let records: Vec<StackRecord> = data
        .examples
        .iter()
        .map(|e| StackRecord {
            stack: e.stack.clone().expect("extracted examples carry stacks"),
            label: e.label as u32,
        })
        .collect();
    let features = out.join(FEATURES_FILE);
    write_stack_archive(&features, &records)?;
    write_json(&norm_sidecar(&features), &data.channel_stats)?;
    let embeddings = match &provider {
        Some(p) => {
            let path = out.join(EMBEDDINGS_FILE);
            let rows: Vec<(String, Vec<f64>)> = data
                .examples
                .iter()
                .map(|e| (e.id.clone(), e.embedding.clone().expect("pseudo provider ran")))
                .collect();
            write_embedding_archive(&path, p.dim(), &rows, None)?;
            Some(path)
        }
        None => None,
    };
    Ok(ExtractReport {
        records: records.len(),
        features,
        stats: data.channel_stats,
        embeddings,
    })
}

/// Trains on the configured manifest and writes the bundle and history.
pub fn cmd_train(cfg: &RunConfig) -> Result<(ModelBundle, History)> {
    let manifest = load_manifest(cfg)?;
    let out = out_dir(cfg)?;
    let setup = cfg.setup();
    let data = load_dataset(cfg, &manifest, &setup, None)?;
    let (bundle, history) = train(&data, &setup, &cfg.train)?;
    bundle.save(out.join(BUNDLE_FILE))?;
    write_json(&out.join(HISTORY_FILE), &history)?;
    Ok((bundle, history))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport<'a> {
    pub split: Split,
    #[serde(flatten)]
    pub metrics: &'a Metrics,
    pub labels: &'a [String],
}

/// Dataset for a trained bundle: its own spectral, model and provider
/// settings, with the run's paths.
pub fn bundle_dataset(cfg: &RunConfig, bundle: &ModelBundle, manifest: &Manifest) -> Result<Dataset> {
    let mut setup = bundle.header.setup.clone();
    if cfg.provider.path.is_some() {
        setup.provider.path = cfg.provider.path.clone();
    }
    load_dataset(cfg, manifest, &setup, Some(&bundle.header.channel_stats))
}

/// Scores a saved bundle on one split and writes the metrics.
pub fn cmd_eval(cfg: &RunConfig, bundle_path: &Path, split: Split) -> Result<Metrics> {
    let bundle = ModelBundle::load(bundle_path)?;
    let manifest = load_manifest(cfg)?;
    let out = out_dir(cfg)?;
    let data = bundle_dataset(cfg, &bundle, &manifest)?;
    let metrics = evaluate(&bundle, &data, split)?;
    write_json(
        &out.join(metrics_file(split)),
        &MetricsReport {
            split,
            metrics: &metrics,
            labels: &bundle.header.vocabulary,
        },
    )?;
    Ok(metrics)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let manifest = load_manifest(cfg)?;
    let out = out_dir(cfg)?;
    let mut setup = cfg.setup();
    // load both feature kinds so every arm can run
    setup.model.branch = crate::trainer::Branch::Both;
    let data = load_dataset(cfg, &manifest, &setup, None)?;
    let rows = label_budget_sweep(&data, &cfg.sweep.budgets, &cfg.sweep.strategies, &setup, &cfg.train)?;
    write_json(&out.join(SWEEP_FILE), &SweepReport { rows: rows.clone() })?;
    Ok(rows)
}

/// Writes the classifier inputs of one split, with labels, as `SSLE`.
pub fn cmd_dump_embeddings(cfg: &RunConfig, bundle_path: &Path, split: Split) -> Result<PathBuf> {
    let bundle = ModelBundle::load(bundle_path)?;
    let manifest = load_manifest(cfg)?;
    let out = out_dir(cfg)?;
    let data = bundle_dataset(cfg, &bundle, &manifest)?;
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(Error::Data(format!("the {split} split is empty")));
    }
    let h = bundle.features(&data, &idx)?;
    let rows: Vec<(String, Vec<f64>)> = idx.iter().map(|&i| data.examples[i].id.clone()).zip(h).collect();
    let labels: Vec<u32> = idx.iter().map(|&i| data.examples[i].label as u32).collect();
    let path = out.join(fused_file(split));
    write_embedding_archive(&path, bundle.header.architecture.feature_width(), &rows, Some(&labels))?;
    Ok(path)
}
