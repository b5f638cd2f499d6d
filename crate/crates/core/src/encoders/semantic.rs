use serde::{Deserialize, Serialize};

use super::{Init, Linear, ParamStore};
use crate::error::{Error, Result};
use crate::numeric::{RngStream, Tape, Tensor, Var};

/// Two-layer perceptron `d_emb -> hidden -> d` with a relu between.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticArch {
    pub d_emb: usize,
    pub hidden: usize,
    pub d: usize,
}

impl Default for SemanticArch {
    fn default() -> Self {
        SemanticArch {
            d_emb: 256,
            hidden: 128,
            d: 128,
        }
    }
}

impl SemanticArch {
    pub fn param_count(&self) -> usize {
        Linear::param_count(self.d_emb, self.hidden) + Linear::param_count(self.hidden, self.d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticEncoder {
    arch: SemanticArch,
    params: ParamStore,
    hidden: Linear,
    out: Linear,
}

impl SemanticEncoder {
    pub fn new(arch: SemanticArch, rng: &mut RngStream) -> Result<Self> {
        if arch.d_emb == 0 || arch.hidden == 0 || arch.d == 0 {
            return Err(Error::config("model.d_emb", "semantic encoder widths must be positive"));
        }
        let mut params = ParamStore::new();
        let hidden = Linear::new(&mut params, "hidden", arch.d_emb, arch.hidden, Init::FanIn, rng);
        let out = Linear::new(&mut params, "out", arch.hidden, arch.d, Init::FanIn, rng);
        Ok(SemanticEncoder {
            arch,
            params,
            hidden,
            out,
        })
    }

    pub fn arch(&self) -> &SemanticArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `[N, d_emb]` embeddings to `[N, d]` features.
    pub fn forward(&self, tape: &Tape, vars: &[Var], input: Var) -> Result<Var> {
        let shape = tape.shape(input);
        if shape.len() != 2 || shape[1] != self.arch.d_emb {
            return Err(Error::config(
                "model.d_emb",
                format!("semantic encoder expects [N, {}], got {shape:?}", self.arch.d_emb),
            ));
        }
        let h = self.hidden.forward(tape, vars, input)?;
        let h = tape.relu(h);
        self.out.forward(tape, vars, h)
    }
}

/// f_sem for one embedding, recorded on `tape` with fresh parameter leaves.
pub fn semantic_encode(tape: &Tape, encoder: &SemanticEncoder, embedding: &[f64]) -> Result<Var> {
    let vars = encoder.params.bind(tape);
    let x = tape.constant(Tensor::new(vec![1, embedding.len()], embedding.to_vec())?);
    let f = encoder.forward(tape, &vars, x)?;
    tape.reshape(f, &[encoder.arch.d])
}
