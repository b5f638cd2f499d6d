use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SynthSpec;
use crate::dsp::SpectralConfig;
use crate::encoders::{ProviderConfig, ProviderKind};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::trainer::{Arm, ModelConfig, ModelSetup, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    /// `SSLF` archive written by `extract`; stacks are recomputed from audio when absent.
    pub features: Option<PathBuf>,
    /// `SSLE` archive paired with `features`.
    pub embeddings: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub budgets: Vec<usize>,
    pub strategies: Vec<Arm>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            budgets: vec![10, 50, 200],
            strategies: crate::fusion::Strategy::ALL.into_iter().map(Arm::Fused).collect(),
        }
    }
}

/// Contents of a run configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub spectral: SpectralConfig,
    pub model: ModelConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub provider: ProviderConfig,
    pub paths: PathsConfig,
    pub sweep: SweepConfig,
    pub synth: SynthSpec,
}

impl RunConfig {
    /// Parses TOML text; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<file>", e.to_string().trim_end()))?;
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::config(key, e.into_inner().message().trim_end())
        })?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_toml(&text, base)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut self.paths.manifest);
        fix(&mut self.paths.features);
        fix(&mut self.paths.embeddings);
        fix(&mut self.paths.out);
        fix(&mut self.provider.path);
    }

    pub fn validate(&self) -> Result<()> {
        self.spectral.validate()?;
        self.model.validate()?;
        self.fusion.validate()?;
        self.train.validate()?;
        self.provider.validate()?;
        self.synth.validate()?;
        if self.model.branch.uses_semantic() && self.provider.dim != self.model.d_emb {
            return Err(Error::config(
                "model.d_emb",
                format!("must equal provider.dim ({})", self.provider.dim),
            ));
        }
        if self.paths.embeddings.is_some() && self.paths.features.is_none() {
            return Err(Error::config("paths.embeddings", "only used together with paths.features"));
        }
        Ok(())
    }

    pub fn setup(&self) -> ModelSetup {
        ModelSetup {
            spectral: self.spectral.clone(),
            model: self.model.clone(),
            fusion: self.fusion.clone(),
            provider: self.provider.clone(),
        }
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.paths
            .manifest
            .as_deref()
            .ok_or_else(|| Error::config("paths.manifest", "required (set it in the config or pass --manifest)"))
    }

    pub fn uses_pseudo_provider(&self) -> bool {
        self.provider.kind == ProviderKind::Pseudo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::Strategy;

    fn key_of(text: &str) -> String {
        match RunConfig::from_toml(text, Path::new("")) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("", Path::new("")).unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(key_of("[fusion]\nstrategy = \"attention\"\n"), "fusion.strategy");
        assert_eq!(key_of("[train]\nepochz = 3\n"), "train.epochz");
        assert_eq!(key_of("colour = 1\n"), "colour");
        assert_eq!(key_of("[spectral]\nn_fft = \"big\"\n"), "spectral.n_fft");
        assert_eq!(key_of("[sweep]\nstrategies = [\"fixed\", \"late\"]\n"), "sweep.strategies[1]");
        let cfg = RunConfig::from_toml("[spectral]\nn_fft = 1000\n", Path::new("")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { key, .. }) if key == "spectral.n_fft"));
    }

    #[test]
    fn sections_parse_and_paths_resolve() {
        let text = r#"
            [fusion]
            strategy = "shared"
            tau1 = 0.5
            [train]
            epochs = 4
            samples_per_class = 10
            [paths]
            manifest = "data/manifest.csv"
            out = "/tmp/run"
            [sweep]
            budgets = [5, 10]
            strategies = ["sampling", "semantic"]
        "#;
        let cfg = RunConfig::from_toml(text, Path::new("/work")).unwrap();
        assert_eq!(cfg.fusion.strategy, Strategy::Shared);
        assert_eq!(cfg.train.samples_per_class, Some(10));
        assert_eq!(cfg.paths.manifest.as_deref(), Some(Path::new("/work/data/manifest.csv")));
        assert_eq!(cfg.paths.out.as_deref(), Some(Path::new("/tmp/run")));
        assert_eq!(cfg.sweep.strategies[1].name(), "semantic");
    }
}
