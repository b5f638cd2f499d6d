//! Trained-model persistence.
//!
//! Layout: magic `SSLB`, header length `u32`, UTF-8 JSON header, then the
//! parameter blob: tensor count `u32` and per tensor its name (`u32` length,
//! UTF-8), rank `u32`, extents `u32 x rank` and `f64` values, all
//! little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{Dataset, EmbeddingStats};
use super::metrics::{argmax, Metrics};
use super::model::{Architecture, BatchInput, SslNet};
use super::train::ModelSetup;
use crate::dsp::{expect_eof, read_str, read_u32, write_str, ChannelStats};
use crate::encoders::ParamStore;
use crate::error::{Error, Result};
use crate::fusion::FusionNoise;
use crate::numeric::{Rng, Tape, Tensor};

pub const BUNDLE_MAGIC: &[u8; 4] = b"SSLB";
const FORMAT_VERSION: u32 = 1;
/// Examples per forward pass at inference.
const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleHeader {
    pub version: u32,
    pub architecture: Architecture,
    pub setup: ModelSetup,
    pub channel_stats: ChannelStats,
    pub embedding_stats: Option<EmbeddingStats>,
    pub vocabulary: Vec<String>,
    pub seed: u64,
}

impl BundleHeader {
    pub fn new(
        architecture: Architecture,
        setup: ModelSetup,
        data: &Dataset,
        embedding_stats: Option<EmbeddingStats>,
        seed: u64,
    ) -> Self {
        BundleHeader {
            version: FORMAT_VERSION,
            architecture,
            setup,
            channel_stats: data.channel_stats.clone(),
            embedding_stats,
            vocabulary: data.vocabulary.clone(),
            seed,
        }
    }
}

/// A trained model with everything needed to featurise and score new clips.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub header: BundleHeader,
    pub net: SslNet,
}

impl ModelBundle {
    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn batch(&self, data: &Dataset, indices: &[usize]) -> Result<(BatchInput, Vec<usize>)> {
        let branch = self.header.architecture.branch;
        let stats = if branch.uses_semantic() {
            let stats = self.header.embedding_stats.as_ref();
            Some(stats.ok_or_else(|| Error::Invariant("semantic model without embedding statistics".into()))?)
        } else {
            None
        };
        data.batch(indices, branch.uses_spectral(), stats)
    }

    fn check_vocabulary(&self, data: &Dataset) -> Result<()> {
        if data.vocabulary != self.header.vocabulary {
            return Err(Error::Data(format!(
                "dataset labels {:?} differ from the model's {:?}",
                data.vocabulary, self.header.vocabulary
            )));
        }
        Ok(())
    }

    /// Classifier inputs `h` (noise off), one row per index.
    pub fn features(&self, data: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(EVAL_BATCH) {
            let (input, _) = self.batch(data, chunk)?;
            let tape = Tape::new();
            let bound = self.net.bind_frozen(&tape);
            let h = self.net.features(&tape, &bound, &input, &self.header.setup.fusion, FusionNoise::Off)?;
            let h = tape.value(h);
            out.extend(h.data().chunks(h.last_dim()).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Argmax class per index (noise off).
    pub fn predict(&self, data: &Dataset, indices: &[usize]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(EVAL_BATCH) {
            let (input, _) = self.batch(data, chunk)?;
            let tape = Tape::new();
            let bound = self.net.bind_frozen(&tape);
            let z = self.net.logits(&tape, &bound, &input, &self.header.setup.fusion, FusionNoise::Off)?;
            let z = tape.value(z);
            out.extend(z.data().chunks(z.last_dim()).map(argmax));
        }
        Ok(out)
    }

    pub fn score(&self, data: &Dataset, indices: &[usize]) -> Result<Metrics> {
        self.check_vocabulary(data)?;
        let predicted = self.predict(data, indices)?;
        let truth: Vec<usize> = indices.iter().map(|&i| data.examples[i].label).collect();
        Metrics::from_predictions(&truth, &predicted, self.header.vocabulary.len(), self.param_count())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let header = serde_json::to_vec_pretty(&self.header).map_err(|e| Error::Invariant(e.to_string()))?;
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(BUNDLE_MAGIC).map_err(io)?;
        w.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        let stores = self.net.stores();
        let count: usize = stores.iter().map(|(_, s)| s.len()).sum();
        w.write_all(&(count as u32).to_le_bytes()).map_err(io)?;
        for (component, store) in &stores {
            for (name, t) in store.names().iter().zip(store.tensors()) {
                write_str(&mut w, &format!("{component}.{name}")).map_err(io)?;
                w.write_all(&(t.ndim() as u32).to_le_bytes()).map_err(io)?;
                for &d in t.shape() {
                    w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
                }
                for v in t.data() {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |reason: String| Error::Ingestion {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut body = || -> std::io::Result<Result<ModelBundle>> {
            let mut magic = [0u8; 4];
            r.read_exact(&mut magic)?;
            if &magic != BUNDLE_MAGIC {
                return Ok(Err(bad("not a model bundle".into())));
            }
            let len = read_u32(&mut r)? as usize;
            let mut text = vec![0u8; len];
            r.read_exact(&mut text)?;
            let header: BundleHeader = match serde_json::from_slice(&text) {
                Ok(h) => h,
                Err(e) => return Ok(Err(bad(format!("bad header: {e}")))),
            };
            if header.version != FORMAT_VERSION {
                return Ok(Err(bad(format!("unsupported bundle version {}", header.version))));
            }
            let mut stores: Vec<(String, ParamStore)> = Vec::new();
            for _ in 0..read_u32(&mut r)? {
                let full = read_str(&mut r)?;
                let Some((component, name)) = full.split_once('.') else {
                    return Ok(Err(bad(format!("tensor name `{full}` lacks a component"))));
                };
                let rank = read_u32(&mut r)? as usize;
                let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<std::io::Result<Vec<_>>>()?;
                let n: usize = shape.iter().product();
                let mut raw = vec![0u8; n * 8];
                r.read_exact(&mut raw)?;
                let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
                let tensor = Tensor::new(shape, data).expect("extent product matches length");
                match stores.iter_mut().find(|(c, _)| c == component) {
                    Some((_, s)) => {
                        s.push(name, tensor);
                    }
                    None => {
                        let mut s = ParamStore::new();
                        s.push(name, tensor);
                        stores.push((component.to_string(), s));
                    }
                }
            }
            if !expect_eof(&mut r)? {
                return Ok(Err(bad("trailing bytes after the parameter blob".into())));
            }
            let mut net = match SslNet::new(header.architecture.clone(), Rng::new(header.seed)) {
                Ok(n) => n,
                Err(e) => return Ok(Err(e)),
            };
            if let Err(e) = net.load_params(&stores) {
                return Ok(Err(bad(e.to_string())));
            }
            Ok(Ok(ModelBundle { header, net }))
        };
        body().map_err(|e| bad(format!("truncated or malformed bundle: {e}")))?
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::Strategy;
    use crate::trainer::manifest::Split;
    use crate::trainer::model::Branch;
    use crate::trainer::train::{train, TrainConfig};

    #[test]
    fn round_trip_is_exact() {
        let data = crate::trainer::train::tests::toy(5, 2, 0);
        let dir = tempfile::tempdir().unwrap();
        for (strategy, branch) in [(Strategy::Sampling, Branch::Both), (Strategy::Fixed, Branch::Semantic)] {
            let setup = crate::trainer::train::tests::small_setup(strategy, branch);
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: 4,
                ..Default::default()
            };
            let (bundle, _) = train(&data, &setup, &cfg).unwrap();
            let path = dir.path().join("m.sslb");
            bundle.save(&path).unwrap();
            let back = ModelBundle::load(&path).unwrap();
            assert_eq!(back, bundle);
            let idx = data.indices(Split::Test);
            assert_eq!(back.features(&data, &idx).unwrap(), bundle.features(&data, &idx).unwrap());
            let bytes = std::fs::read(&path).unwrap();
            back.save(&path).unwrap();
            assert_eq!(std::fs::read(&path).unwrap(), bytes);
            std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
            assert!(matches!(ModelBundle::load(&path), Err(Error::Ingestion { .. })));
        }
    }
}
