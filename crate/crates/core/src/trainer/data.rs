use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestRecord, Split};
use crate::dsp::{base_id, load_wav, segment, ChannelStats, Extractor, SpectralConfig, SpectralStack, StackRecord};
use crate::encoders::{provide_embedding, EmbeddingProvider, FileEmbeddings};
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use super::model::BatchInput;

/// One segmented clip with its features.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: usize,
    pub split: Split,
    /// Standardised stack.
    pub stack: Option<SpectralStack>,
    /// Raw backbone embedding.
    pub embedding: Option<Vec<f64>>,
}

/// Examples ready for training or evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocabulary: Vec<String>,
    pub examples: Vec<Example>,
    pub channel_stats: ChannelStats,
}

/// Per-dimension moments of the train-split embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl EmbeddingStats {
    pub fn from_vectors<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let vectors: Vec<&[f64]> = vectors.into_iter().collect();
        let Some(first) = vectors.first() else {
            return Err(Error::Data("cannot compute embedding statistics from no vectors".into()));
        };
        let d = first.len();
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; d];
        for v in &vectors {
            if v.len() != d {
                return Err(Error::Dimension("embeddings differ in length".into()));
            }
            for (m, x) in mean.iter_mut().zip(v.iter()) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for v in &vectors {
            for ((s, x), m) in var.iter_mut().zip(v.iter()).zip(&mean) {
                *s += (x - m).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|s| if s > 0.0 { s.sqrt() } else { 1.0 }).collect();
        Ok(EmbeddingStats { mean, std })
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// Unstandardised examples for every segment of one manifest record.
pub fn extract_record(
    manifest: &Manifest,
    record: &ManifestRecord,
    extractor: &Extractor,
    provider: Option<&dyn EmbeddingProvider>,
) -> Result<Vec<Example>> {
    let cfg = extractor.config();
    let path = manifest.audio_path(record);
    let clip = load_wav(&path, &record.id)?;
    if clip.sample_rate() != cfg.sample_rate {
        return Err(Error::Ingestion {
            path,
            reason: format!("sample rate {} Hz, expected {} Hz", clip.sample_rate(), cfg.sample_rate),
        });
    }
    let label = manifest
        .label_index(&record.label)
        .ok_or_else(|| Error::Invariant(format!("label `{}` missing from the vocabulary", record.label)))?;
    segment(&clip, cfg)
        .into_iter()
        .map(|seg| {
            let stack = extractor.stack(&seg).map_err(|e| record_error(&record.id, e))?;
            let embedding = provider
                .map(|p| provide_embedding(p, &seg))
                .transpose()
                .map_err(|e| record_error(&record.id, e))?;
            Ok(Example {
                id: seg.source_id().to_string(),
                label,
                split: record.split,
                stack: Some(stack),
                embedding,
            })
        })
        .collect()
}

fn record_error(id: &str, e: Error) -> Error {
    match e {
        e @ (Error::Ingestion { .. } | Error::Io { .. }) => e,
        other => Error::Data(format!("record `{id}`: {other}")),
    }
}

impl Dataset {
    /// Loads, segments and featurises every manifest record.
    ///
    /// Channel statistics come from `stats` when given, otherwise from the
    /// train split. Without a provider the examples carry no embeddings.
    pub fn extract(
        manifest: &Manifest,
        cfg: &SpectralConfig,
        provider: Option<&dyn EmbeddingProvider>,
        stats: Option<&ChannelStats>,
    ) -> Result<Self> {
        let extractor = Extractor::new(cfg)?;
        let mut examples = Vec::new();
        for record in manifest.records() {
            examples.extend(extract_record(manifest, record, &extractor, provider)?);
        }
        Self::standardize(manifest.vocabulary().to_vec(), examples, stats)
    }

    /// Standardises raw stacks with `stats`, or with train-split statistics.
    pub fn standardize(vocabulary: Vec<String>, mut examples: Vec<Example>, stats: Option<&ChannelStats>) -> Result<Self> {
        let channel_stats = match stats {
            Some(s) => s.clone(),
            None => ChannelStats::from_stacks(
                examples.iter().filter(|e| e.split == Split::Train).filter_map(|e| e.stack.as_ref()),
            )?,
        };
        for e in &mut examples {
            e.stack = e.stack.take().map(|s| s.standardized(&channel_stats));
        }
        Ok(Dataset {
            vocabulary,
            examples,
            channel_stats,
        })
    }

    /// Joins an already standardised stack archive with the manifest.
    pub fn from_archive(
        manifest: &Manifest,
        records: Vec<StackRecord>,
        channel_stats: ChannelStats,
        embeddings: Option<&FileEmbeddings>,
    ) -> Result<Self> {
        let by_id: HashMap<&str, _> = manifest.records().iter().map(|r| (r.id.as_str(), r)).collect();
        let mut examples = Vec::with_capacity(records.len());
        for rec in records {
            let id = rec.stack.source_id().to_string();
            let Some(m) = by_id.get(base_id(&id)) else {
                return Err(Error::Data(format!("feature archive record `{id}` is not in the manifest")));
            };
            let label = manifest.label_index(&m.label).expect("vocabulary covers every label");
            if label != rec.label as usize {
                return Err(Error::Data(format!(
                    "feature archive labels `{id}` as class {} but the manifest says `{}`",
                    rec.label, m.label
                )));
            }
            let embedding = embeddings
                .map(|f| f.get(&id).or_else(|_| f.get(base_id(&id))).map(<[f64]>::to_vec))
                .transpose()?;
            examples.push(Example {
                id,
                label,
                split: m.split,
                stack: Some(rec.stack),
                embedding,
            });
        }
        Ok(Dataset {
            vocabulary: manifest.vocabulary().to_vec(),
            examples,
            channel_stats,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.vocabulary.len()
    }

    /// `(height, width)` of the stacks, if any example has one.
    pub fn extent(&self) -> Option<(usize, usize)> {
        self.examples.iter().find_map(|e| e.stack.as_ref()).map(|s| (s.height(), s.width()))
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.examples.iter().find_map(|e| e.embedding.as_ref()).map(Vec::len)
    }

    /// Example indices of `split`, in dataset order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.examples.len()).filter(|&i| self.examples[i].split == split).collect()
    }

    /// Model inputs and labels for the given examples.
    pub fn batch(&self, indices: &[usize], spectral: bool, semantic: Option<&EmbeddingStats>) -> Result<(BatchInput, Vec<usize>)> {
        let picked: Vec<&Example> = indices.iter().map(|&i| &self.examples[i]).collect();
        let stacks = if spectral {
            let mut data = Vec::new();
            let mut extent = None;
            for e in &picked {
                let s = e
                    .stack
                    .as_ref()
                    .ok_or_else(|| Error::Data(format!("example `{}` has no spectral stack", e.id)))?;
                if *extent.get_or_insert((s.height(), s.width())) != (s.height(), s.width()) {
                    return Err(Error::Dimension("stacks differ in extent".into()));
                }
                data.extend_from_slice(s.data());
            }
            let (h, w) = extent.unwrap_or((0, 0));
            Some(Tensor::new(vec![picked.len(), 3, h, w], data)?)
        } else {
            None
        };
        let embeddings = match semantic {
            Some(stats) => {
                let d = stats.mean.len();
                let mut data = Vec::with_capacity(picked.len() * d);
                for e in &picked {
                    let v = e
                        .embedding
                        .as_ref()
                        .ok_or_else(|| Error::Data(format!("example `{}` has no embedding", e.id)))?;
                    if v.len() != d {
                        return Err(Error::Dimension(format!(
                            "example `{}` embedding has {} values, model expects {d}",
                            e.id,
                            v.len()
                        )));
                    }
                    data.extend(stats.apply(v));
                }
                Some(Tensor::new(vec![picked.len(), d], data)?)
            }
            None => None,
        };
        Ok((BatchInput { stacks, embeddings }, picked.iter().map(|e| e.label).collect()))
    }
}
