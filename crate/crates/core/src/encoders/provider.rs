use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::{base_id, expect_eof, read_f32s, read_str, read_u16, read_u32, write_str, AudioClip, Extractor, Grid, SpectralConfig};
use crate::error::{Error, Result};
use crate::numeric::Rng;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"SSLE";
pub const EMBEDDING_VERSION: u16 = 1;
/// Marks the optional label block that may follow an `SSLE` body.
pub const LABEL_BLOCK_MAGIC: &[u8; 4] = b"LBLS";

/// Stand-in for a pretrained audio backbone: maps a clip to a fixed-length vector.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn provide(&self, clip: &AudioClip) -> Result<Vec<f64>>;
}

/// In-memory contents of an `SSLE` archive.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingArchive {
    pub dim: usize,
    pub records: Vec<(String, Vec<f32>)>,
    /// Present only in archives written with a trailing label block.
    pub labels: Option<Vec<u32>>,
}

pub fn write_embedding_archive(
    path: impl AsRef<Path>,
    dim: usize,
    records: &[(String, Vec<f64>)],
    labels: Option<&[u32]>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some((id, v)) = records.iter().find(|(_, v)| v.len() != dim) {
        return Err(Error::Data(format!("embedding `{id}` has length {}, archive dimension is {dim}", v.len())));
    }
    if let Some(l) = labels {
        if l.len() != records.len() {
            return Err(Error::Data(format!("{} labels for {} records", l.len(), records.len())));
        }
    }
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut body = || -> std::io::Result<()> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
        w.write_all(&(dim as u32).to_le_bytes())?;
        w.write_all(&(records.len() as u32).to_le_bytes())?;
        for (id, v) in records {
            write_str(&mut w, id)?;
            for &x in v {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        if let Some(labels) = labels {
            w.write_all(LABEL_BLOCK_MAGIC)?;
            w.write_all(&(labels.len() as u32).to_le_bytes())?;
            for l in labels {
                w.write_all(&l.to_le_bytes())?;
            }
        }
        w.flush()
    };
    body().map_err(io)
}

pub fn read_embedding_archive(path: impl AsRef<Path>) -> Result<EmbeddingArchive> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let data_err = |what: String| Error::Data(format!("{}: {what}", path.display()));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| data_err(e.to_string()))?;
    if &magic != EMBEDDING_MAGIC {
        return Err(data_err("not an SSLE archive".into()));
    }
    let mut header = || -> std::io::Result<(u16, u32, u32)> { Ok((read_u16(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?)) };
    let (version, dim, n) = header().map_err(|e| data_err(e.to_string()))?;
    if version != EMBEDDING_VERSION {
        return Err(data_err(format!("unsupported SSLE version {version}")));
    }
    let dim = dim as usize;
    let mut records = Vec::with_capacity(n as usize);
    for i in 0..n {
        let mut one = || -> std::io::Result<(String, Vec<f32>)> { Ok((read_str(&mut r)?, read_f32s(&mut r, dim)?)) };
        records.push(one().map_err(|e| data_err(format!("record {i}: {e}")))?);
    }
    let mut tail = [0u8; 4];
    let got = r.read(&mut tail).map_err(|e| data_err(e.to_string()))?;
    let labels = if got == 0 {
        None
    } else {
        r.read_exact(&mut tail[got..]).map_err(|e| data_err(e.to_string()))?;
        if &tail != LABEL_BLOCK_MAGIC {
            return Err(data_err("unexpected trailing bytes".into()));
        }
        let mut block = || -> std::io::Result<Vec<u32>> {
            let count = read_u32(&mut r)?;
            (0..count).map(|_| read_u32(&mut r)).collect()
        };
        let labels = block().map_err(|e| data_err(format!("label block: {e}")))?;
        if labels.len() != records.len() {
            return Err(data_err(format!("{} labels for {} records", labels.len(), records.len())));
        }
        if !expect_eof(&mut r).map_err(|e| data_err(e.to_string()))? {
            return Err(data_err("trailing bytes after label block".into()));
        }
        Some(labels)
    };
    Ok(EmbeddingArchive { dim, records, labels })
}

/// Embeddings precomputed by an external backbone, looked up by clip id.
#[derive(Clone, Debug)]
pub struct FileEmbeddings {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl FileEmbeddings {
    /// Opens an archive; `expected_dim`, when given, must match its header.
    pub fn open(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let archive = read_embedding_archive(path)?;
        if let Some(d) = expected_dim {
            if d != archive.dim {
                return Err(Error::Data(format!(
                    "{}: archive dimension {} does not match configured d_emb {d}",
                    path.display(),
                    archive.dim
                )));
            }
        }
        let mut vectors = HashMap::with_capacity(archive.records.len());
        for (id, v) in archive.records {
            if vectors.insert(id.clone(), v.into_iter().map(f64::from).collect()).is_some() {
                return Err(Error::Data(format!("{}: duplicate id `{id}`", path.display())));
            }
        }
        Ok(FileEmbeddings { dim: archive.dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice).ok_or_else(|| Error::Lookup(id.to_string()))
    }
}

impl EmbeddingProvider for FileEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Looks up the segment id, then the id of the recording it came from.
    fn provide(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        let id = clip.source_id();
        self.get(id)
            .or_else(|_| self.get(base_id(id)))
            .map(<[f64]>::to_vec)
            .map_err(|_| Error::Lookup(id.to_string()))
    }
}

/// Deterministic test-time backbone: a seeded Gaussian projection of log-mel
/// summary statistics.
///
/// The statistics are the per-band means (centred across bands) followed by
/// the per-band standard deviations over frames.
#[derive(Clone, Debug)]
pub struct PseudoEmbedder {
    dim: usize,
    extractor: Extractor,
    /// `dim x (2 n_mels)`.
    projection: Grid,
}

impl PseudoEmbedder {
    pub fn new(cfg: &SpectralConfig, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("provider.dim", "embedding dimension must be positive"));
        }
        let extractor = Extractor::new(cfg)?;
        let n_in = 2 * cfg.n_mels;
        let mut rng = Rng::new(seed).stream("pseudo-embedding");
        let scale = 1.0 / (n_in as f64).sqrt();
        let data = (0..dim * n_in).map(|_| rng.normal() * scale).collect();
        Ok(PseudoEmbedder {
            dim,
            extractor,
            projection: Grid::new(dim, n_in, data)?,
        })
    }

    pub fn summary_statistics(log_mel: &Grid) -> Vec<f64> {
        let frames = log_mel.cols() as f64;
        let means: Vec<f64> = (0..log_mel.rows()).map(|m| log_mel.row(m).iter().sum::<f64>() / frames).collect();
        let stds: Vec<f64> = (0..log_mel.rows())
            .map(|m| {
                let mu = means[m];
                (log_mel.row(m).iter().map(|v| (v - mu).powi(2)).sum::<f64>() / frames).sqrt()
            })
            .collect();
        let grand = means.iter().sum::<f64>() / means.len() as f64;
        means.iter().map(|m| m - grand).chain(stds).collect()
    }

    pub fn embed_log_mel(&self, log_mel: &Grid) -> Vec<f64> {
        let stats = Self::summary_statistics(log_mel);
        (0..self.dim)
            .map(|i| self.projection.row(i).iter().zip(&stats).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl EmbeddingProvider for PseudoEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn provide(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        Ok(self.embed_log_mel(&self.extractor.mel_spectrogram(clip)?))
    }
}

/// Where semantic-branch embeddings come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Pseudo,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Seed of the pseudo projection.
    pub seed: u64,
    pub dim: usize,
    /// Archive read by the `file` provider.
    pub path: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Pseudo,
            seed: 0,
            dim: 256,
            path: None,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("provider.dim", "must be positive"));
        }
        if self.kind == ProviderKind::File && self.path.is_none() {
            return Err(Error::config("provider.path", "required when provider.kind = \"file\""));
        }
        Ok(())
    }

    pub fn build(&self, spectral: &SpectralConfig) -> Result<Box<dyn EmbeddingProvider>> {
        self.validate()?;
        Ok(match (self.kind, &self.path) {
            (ProviderKind::Pseudo, _) => Box::new(PseudoEmbedder::new(spectral, self.dim, self.seed)?),
            (ProviderKind::File, Some(path)) => Box::new(FileEmbeddings::open(path, Some(self.dim))?),
            (ProviderKind::File, None) => unreachable!("validated above"),
        })
    }
}

/// a_sem for one clip.
pub fn provide_embedding(provider: &dyn EmbeddingProvider, clip: &AudioClip) -> Result<Vec<f64>> {
    let v = provider.provide(clip)?;
    if v.len() != provider.dim() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invariant(format!(
            "provider returned {} values (expected {}) or non-finite entries",
            v.len(),
            provider.dim()
        )));
    }
    Ok(v)
}
