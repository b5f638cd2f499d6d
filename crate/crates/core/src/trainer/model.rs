use serde::{Deserialize, Serialize};

use crate::encoders::{Init, Linear, ParamStore, SemanticArch, SemanticEncoder, SpectralArch, SpectralEncoder};
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionConfig, FusionNoise, FusionParams, Strategy};
use crate::numeric::{Rng, Tape, Tensor, Var};

/// Which branches feed the classifier. Single-branch models skip fusion and
/// classify the branch feature directly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    #[default]
    Both,
    Spectral,
    Semantic,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Both => "both",
            Branch::Spectral => "spectral",
            Branch::Semantic => "semantic",
        }
    }

    pub fn uses_spectral(self) -> bool {
        self != Branch::Semantic
    }

    pub fn uses_semantic(self) -> bool {
        self != Branch::Spectral
    }
}

/// Architecture knobs shared by every model in a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of both branch features.
    pub d: usize,
    /// Width of the backbone embedding.
    pub d_emb: usize,
    pub semantic_hidden: usize,
    pub conv_widths: Vec<usize>,
    pub kernel: usize,
    pub head_hidden: usize,
    pub branch: Branch,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 128,
            d_emb: 256,
            semantic_hidden: 128,
            conv_widths: vec![8, 16, 32],
            kernel: 3,
            head_hidden: 64,
            branch: Branch::Both,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("model.d", self.d),
            ("model.d_emb", self.d_emb),
            ("model.semantic_hidden", self.semantic_hidden),
            ("model.head_hidden", self.head_hidden),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.conv_widths.is_empty() || self.conv_widths.contains(&0) {
            return Err(Error::config("model.conv_widths", "need at least one positive width"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("model.kernel", "must be odd"));
        }
        Ok(())
    }
}

/// Fully resolved architecture of one [`SslNet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub spectral: SpectralArch,
    pub semantic: SemanticArch,
    pub strategy: Strategy,
    pub branch: Branch,
    pub head_hidden: usize,
    pub n_classes: usize,
}

impl Architecture {
    pub fn new(cfg: &ModelConfig, strategy: Strategy, height: usize, width: usize, n_classes: usize) -> Self {
        Architecture {
            spectral: SpectralArch {
                in_channels: 3,
                height,
                width,
                widths: cfg.conv_widths.clone(),
                kernel: cfg.kernel,
                d: cfg.d,
            },
            semantic: SemanticArch {
                d_emb: cfg.d_emb,
                hidden: cfg.semantic_hidden,
                d: cfg.d,
            },
            strategy,
            branch: cfg.branch,
            head_hidden: cfg.head_hidden,
            n_classes,
        }
    }

    pub fn d(&self) -> usize {
        self.spectral.d
    }

    /// Width of the classifier input.
    pub fn feature_width(&self) -> usize {
        match self.branch {
            Branch::Both => self.strategy.output_width(self.d()),
            _ => self.d(),
        }
    }

    /// Closed-form count of every trainable scalar.
    pub fn param_count(&self) -> usize {
        let mut total = MlpHead::param_count(self.feature_width(), self.head_hidden, self.n_classes);
        if self.branch.uses_spectral() {
            total += self.spectral.param_count();
        }
        if self.branch.uses_semantic() {
            total += self.semantic.param_count();
        }
        if self.branch == Branch::Both {
            total += self.strategy.param_count(self.d());
        }
        total
    }
}

/// Lightweight classifier: `in -> hidden (relu) -> classes`.
///
/// The output layer starts at zero, so an untrained model predicts the
/// uniform distribution and its loss starts at `ln C`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead {
    params: ParamStore,
    hidden: Linear,
    out: Linear,
}

impl MlpHead {
    pub fn new(input: usize, hidden: usize, classes: usize, rng: &mut crate::numeric::RngStream) -> Result<Self> {
        if input == 0 || hidden == 0 || classes == 0 {
            return Err(Error::config("model.head_hidden", "classifier widths must be positive"));
        }
        let mut params = ParamStore::new();
        let hidden_l = Linear::new(&mut params, "hidden", input, hidden, Init::FanIn, rng);
        let out = Linear::new(&mut params, "out", hidden, classes, Init::Zeros, rng);
        Ok(MlpHead {
            params,
            hidden: hidden_l,
            out,
        })
    }

    pub fn param_count(input: usize, hidden: usize, classes: usize) -> usize {
        Linear::param_count(input, hidden) + Linear::param_count(hidden, classes)
    }

    pub fn input_width(&self) -> usize {
        self.hidden.fan_in
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `[B, in]` features to `[B, C]` logits.
    pub fn forward(&self, tape: &Tape, vars: &[Var], h: Var) -> Result<Var> {
        let shape = tape.shape(h);
        if shape.len() != 2 || shape[1] != self.hidden.fan_in {
            return Err(Error::config(
                "model.head_hidden",
                format!("classifier expects [B, {}], got {shape:?}", self.hidden.fan_in),
            ));
        }
        let z = tape.relu(self.hidden.forward(tape, vars, h)?);
        self.out.forward(tape, vars, z)
    }
}

/// Class logits for one fused feature vector.
pub fn mlp_head(tape: &Tape, head: &MlpHead, h: Var) -> Result<Var> {
    let vars = head.params.bind(tape);
    let shape = tape.shape(h);
    let flat = shape.len() == 1;
    let h = if flat { tape.reshape(h, &[1, shape[0]])? } else { h };
    let logits = head.forward(tape, &vars, h)?;
    if flat {
        let c = tape.shape(logits)[1];
        tape.reshape(logits, &[c])
    } else {
        Ok(logits)
    }
}

/// Tape handles for every parameter of a [`SslNet`], grouped by component.
#[derive(Clone, Debug)]
pub struct BoundNet {
    pub spectral: Vec<Var>,
    pub semantic: Vec<Var>,
    pub fusion: Vec<Var>,
    pub head: Vec<Var>,
}

impl BoundNet {
    /// In the same order as [`SslNet::stores`].
    pub fn groups(&self) -> [&[Var]; 4] {
        [&self.spectral, &self.semantic, &self.fusion, &self.head]
    }
}

/// Inputs for one forward pass.
#[derive(Clone, Debug)]
pub struct BatchInput {
    /// `[B, 3, H, W]`, required when the spectral branch is used.
    pub stacks: Option<Tensor>,
    /// `[B, d_emb]`, required when the semantic branch is used.
    pub embeddings: Option<Tensor>,
}

/// Spectral encoder, semantic encoder, fusion and classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct SslNet {
    arch: Architecture,
    spectral: Option<SpectralEncoder>,
    semantic: Option<SemanticEncoder>,
    fusion: Option<FusionParams>,
    head: MlpHead,
}

impl SslNet {
    /// Initialises every component from its own stream `init.<component>` of `rng`.
    pub fn new(arch: Architecture, rng: Rng) -> Result<Self> {
        let spectral = if arch.branch.uses_spectral() {
            Some(SpectralEncoder::new(arch.spectral.clone(), &mut rng.stream("init.spectral"))?)
        } else {
            None
        };
        let semantic = if arch.branch.uses_semantic() {
            Some(SemanticEncoder::new(arch.semantic.clone(), &mut rng.stream("init.semantic"))?)
        } else {
            None
        };
        let fusion = if arch.branch == Branch::Both {
            Some(FusionParams::new(arch.strategy, arch.d(), &mut rng.stream("init.fusion"))?)
        } else {
            None
        };
        let head = MlpHead::new(arch.feature_width(), arch.head_hidden, arch.n_classes, &mut rng.stream("init.head"))?;
        Ok(SslNet {
            arch,
            spectral,
            semantic,
            fusion,
            head,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn spectral(&self) -> Option<&SpectralEncoder> {
        self.spectral.as_ref()
    }

    pub fn semantic(&self) -> Option<&SemanticEncoder> {
        self.semantic.as_ref()
    }

    pub fn fusion(&self) -> Option<&FusionParams> {
        self.fusion.as_ref()
    }

    pub fn head(&self) -> &MlpHead {
        &self.head
    }

    /// Component stores in the fixed order spectral, semantic, fusion, head;
    /// absent components contribute an empty store.
    pub fn stores(&self) -> [(&'static str, ParamStore); 4] {
        let empty = ParamStore::new;
        [
            ("spectral", self.spectral.as_ref().map_or_else(empty, |e| e.params().clone())),
            ("semantic", self.semantic.as_ref().map_or_else(empty, |e| e.params().clone())),
            ("fusion", self.fusion.as_ref().map_or_else(empty, |f| f.params().clone())),
            ("head", self.head.params().clone()),
        ]
    }

    fn store_refs(&self) -> [Option<&ParamStore>; 4] {
        [
            self.spectral.as_ref().map(SpectralEncoder::params),
            self.semantic.as_ref().map(SemanticEncoder::params),
            self.fusion.as_ref().map(FusionParams::params),
            Some(self.head.params()),
        ]
    }

    pub fn stores_mut(&mut self) -> [Option<&mut ParamStore>; 4] {
        [
            self.spectral.as_mut().map(SpectralEncoder::params_mut),
            self.semantic.as_mut().map(SemanticEncoder::params_mut),
            self.fusion.as_mut().map(FusionParams::params_mut),
            Some(self.head.params_mut()),
        ]
    }

    /// Every trainable tensor, in binding order.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.stores_mut().into_iter().flatten().flat_map(|s| s.tensors_mut().iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.store_refs().iter().flatten().map(|s| s.count()).sum()
    }

    /// Records every parameter as a trainable leaf.
    pub fn bind(&self, tape: &Tape) -> BoundNet {
        self.bind_with(tape, |tape, t| tape.param(t.clone()))
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &Tape) -> BoundNet {
        self.bind_with(tape, |tape, t| tape.constant(t.clone()))
    }

    fn bind_with(&self, tape: &Tape, leaf: impl Fn(&Tape, &Tensor) -> Var) -> BoundNet {
        let [spectral, semantic, fusion, head] = self
            .store_refs()
            .map(|s| s.map(|s| s.tensors().iter().map(|t| leaf(tape, t)).collect()).unwrap_or_default());
        BoundNet {
            spectral,
            semantic,
            fusion,
            head,
        }
    }

    /// The classifier input `h` (`[B, feature_width]`).
    pub fn features(
        &self,
        tape: &Tape,
        bound: &BoundNet,
        input: &BatchInput,
        fusion_cfg: &FusionConfig,
        noise: FusionNoise<'_>,
    ) -> Result<Var> {
        let f_spe = match (&self.spectral, &input.stacks) {
            (Some(enc), Some(x)) => Some(enc.forward(tape, &bound.spectral, tape.constant(x.clone()))?),
            (Some(_), None) => return Err(Error::Usage("model uses the spectral branch but no stacks were given".into())),
            (None, _) => None,
        };
        let f_sem = match (&self.semantic, &input.embeddings) {
            (Some(enc), Some(x)) => Some(enc.forward(tape, &bound.semantic, tape.constant(x.clone()))?),
            (Some(_), None) => {
                return Err(Error::Usage("model uses the semantic branch but no embeddings were given".into()))
            }
            (None, _) => None,
        };
        match (f_spe, f_sem, &self.fusion) {
            (Some(spe), Some(sem), Some(fusion)) => fuse(tape, spe, sem, fusion, &bound.fusion, fusion_cfg, noise),
            (Some(f), None, _) | (None, Some(f), _) => Ok(f),
            _ => Err(Error::Invariant("model has no usable branch".into())),
        }
    }

    /// `[B, C]` class logits.
    pub fn logits(
        &self,
        tape: &Tape,
        bound: &BoundNet,
        input: &BatchInput,
        fusion_cfg: &FusionConfig,
        noise: FusionNoise<'_>,
    ) -> Result<Var> {
        let h = self.features(tape, bound, input, fusion_cfg, noise)?;
        self.head.forward(tape, &bound.head, h)
    }

    /// Copies parameter values from `other`, which must share the architecture.
    pub fn load_params(&mut self, other: &[(String, ParamStore)]) -> Result<()> {
        let names = ["spectral", "semantic", "fusion", "head"];
        for (slot, name) in self.stores_mut().into_iter().zip(names) {
            let found = other.iter().find(|(n, _)| n == name).map(|(_, s)| s);
            match (slot, found) {
                (Some(store), Some(src)) => store.load_from(src)?,
                (Some(store), None) if store.is_empty() => {}
                (Some(_), None) => return Err(Error::Data(format!("missing parameters for `{name}`"))),
                (None, Some(src)) if !src.is_empty() => {
                    return Err(Error::Data(format!("unexpected parameters for absent component `{name}`")))
                }
                (None, _) => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(strategy: Strategy, branch: Branch, classes: usize) -> Architecture {
        let cfg = ModelConfig {
            branch,
            ..Default::default()
        };
        Architecture::new(&cfg, strategy, 64, 64, classes)
    }

    #[test]
    fn head_count_for_sampling_features() {
        assert_eq!(MlpHead::param_count(512, 64, 20), 34_132);
        let head = MlpHead::new(512, 64, 20, &mut Rng::new(0).stream("init")).unwrap();
        assert_eq!(head.params().count(), 34_132);
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut head = MlpHead::new(8, 4, 3, &mut Rng::new(0).stream("init")).unwrap();
        head.params_mut().fill(0.0);
        let tape = Tape::new();
        let h = tape.constant(Tensor::vector(vec![0.7; 8]));
        let z = mlp_head(&tape, &head, h).unwrap();
        assert_eq!(tape.value(z).data(), &[0.0, 0.0, 0.0]);
        let bad = tape.constant(Tensor::vector(vec![0.0; 7]));
        assert!(matches!(mlp_head(&tape, &head, bad), Err(Error::Config { .. })));
    }

    #[test]
    fn model_count_equals_sum_of_components() {
        for strategy in Strategy::ALL {
            for branch in [Branch::Both, Branch::Spectral, Branch::Semantic] {
                let a = arch(strategy, branch, 5);
                let net = SslNet::new(a.clone(), Rng::new(3)).unwrap();
                assert_eq!(net.param_count(), a.param_count(), "{strategy} {branch:?}");
            }
        }
        let a = arch(Strategy::Sampling, Branch::Both, 20);
        let expect = 10_256 + 49_408 + 132_096 + 34_132;
        assert_eq!(a.param_count(), expect);
    }

    #[test]
    fn untrained_model_predicts_uniform() {
        let net = SslNet::new(arch(Strategy::Shared, Branch::Both, 20), Rng::new(0)).unwrap();
        let tape = Tape::new();
        let bound = net.bind_frozen(&tape);
        let input = BatchInput {
            stacks: Some(Tensor::full(&[2, 3, 64, 64], 0.4)),
            embeddings: Some(Tensor::full(&[2, 256], -0.3)),
        };
        let cfg = FusionConfig {
            strategy: Strategy::Shared,
            ..Default::default()
        };
        let logits = net.logits(&tape, &bound, &input, &cfg, FusionNoise::Off).unwrap();
        let loss = tape.cross_entropy(logits, &[0, 19]).unwrap();
        assert!((tape.value(loss).data()[0] - 20f64.ln()).abs() < 1e-12);
    }
}
