use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::bundle::{BundleHeader, ModelBundle};
use super::data::{Dataset, EmbeddingStats};
use super::manifest::Split;
use super::metrics::Metrics;
use super::model::{Architecture, ModelConfig, SslNet};
use crate::dsp::SpectralConfig;
use crate::encoders::ProviderConfig;
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionNoise};
use crate::numeric::{Rng, Tape};

/// Optimisation schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Keep only the first `k` train records of each class.
    pub samples_per_class: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            samples_per_class: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if self.samples_per_class == Some(0) {
            return Err(Error::config("train.samples_per_class", "must be at least 1"));
        }
        for (key, v) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(key, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("train.eps", "must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Everything that fixes the model apart from the optimisation schedule.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSetup {
    pub spectral: SpectralConfig,
    pub model: ModelConfig,
    pub fusion: FusionConfig,
    pub provider: ProviderConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Absent when the dataset has no validation examples.
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

/// Train indices after the optional per-class cut, in dataset order.
pub fn training_indices(data: &Dataset, samples_per_class: Option<usize>) -> Result<Vec<usize>> {
    let all = data.indices(Split::Train);
    let Some(k) = samples_per_class else {
        return Ok(all);
    };
    let mut taken = vec![0usize; data.n_classes()];
    let kept: Vec<usize> = all
        .into_iter()
        .filter(|&i| {
            let c = data.examples[i].label;
            taken[c] += 1;
            taken[c] <= k
        })
        .collect();
    if let Some(c) = taken.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!(
            "class `{}` has no training examples after keeping {k} per class",
            data.vocabulary[c]
        )));
    }
    Ok(kept)
}

/// Trains a fresh model on the train split of `data`.
pub fn train(data: &Dataset, setup: &ModelSetup, cfg: &TrainConfig) -> Result<(ModelBundle, History)> {
    cfg.validate()?;
    setup.fusion.validate()?;
    let branch = setup.model.branch;
    let arch = Architecture::new(
        &setup.model,
        setup.fusion.strategy,
        setup.spectral.height,
        setup.spectral.width,
        data.n_classes(),
    );
    if branch.uses_spectral() {
        arch.spectral.validate()?;
        if let Some(extent) = data.extent() {
            if extent != (setup.spectral.height, setup.spectral.width) {
                return Err(Error::Data(format!(
                    "stacks are {}x{} but the configuration asks for {}x{}",
                    extent.0, extent.1, setup.spectral.height, setup.spectral.width
                )));
            }
        }
    }
    let train_idx = training_indices(data, cfg.samples_per_class)?;
    if train_idx.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }
    let embedding_stats = if branch.uses_semantic() {
        let vectors = train_idx
            .iter()
            .map(|&i| {
                let e = &data.examples[i];
                e.embedding
                    .as_deref()
                    .ok_or_else(|| Error::Data(format!("example `{}` has no embedding", e.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = EmbeddingStats::from_vectors(vectors)?;
        if stats.mean.len() != setup.model.d_emb {
            return Err(Error::config(
                "model.d_emb",
                format!("embeddings have {} dimensions, configured {}", stats.mean.len(), setup.model.d_emb),
            ));
        }
        Some(stats)
    } else {
        None
    };

    let rng = Rng::new(cfg.seed);
    let net = SslNet::new(arch.clone(), rng)?;
    let mut bundle = ModelBundle {
        header: BundleHeader::new(arch, setup.clone(), data, embedding_stats, cfg.seed),
        net,
    };
    let mut shuffle = rng.stream("shuffle");
    let mut gumbel = rng.stream("gumbel");
    let adam = cfg.adam();
    let mut state = AdamState::new();
    let val_idx = data.indices(Split::Val);
    let mut history = History::default();

    let mut order = train_idx;
    for epoch in 0..cfg.epochs {
        shuffle.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (input, labels) = bundle.batch(data, chunk)?;
            let tape = Tape::new();
            let bound = bundle.net.bind(&tape);
            let logits = bundle
                .net
                .logits(&tape, &bound, &input, &setup.fusion, FusionNoise::Sample(&mut gumbel))?;
            let loss = tape.cross_entropy(logits, &labels)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Invariant(format!("non-finite loss at epoch {epoch}")));
            }
            loss_sum += value * chunk.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<_> = bound.groups().iter().flat_map(|g| g.iter()).map(|&v| tape.grad(v)).collect();
            adam_step(bundle.net.tensors_mut(), &grads, &mut state, &adam)?;
        }
        let val_accuracy = if val_idx.is_empty() {
            None
        } else {
            Some(bundle.score(data, &val_idx)?.accuracy)
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_accuracy,
        });
    }
    Ok((bundle, history))
}

/// Scores the bundle on one split.
pub fn evaluate(bundle: &ModelBundle, data: &Dataset, split: Split) -> Result<Metrics> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(Error::Data(format!("the {split} split is empty")));
    }
    bundle.score(data, &idx)
}
