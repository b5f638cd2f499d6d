//! Fusion of the spectral feature `f_spe` and the semantic feature `f_sem`.
//!
//! * fixed: `h = [f_spe; f_sem]`
//! * shared: `W_sem = σ(L(f_spe))`, `W_spe = σ(L(f_sem))`,
//!   `h = [f_spe ⊙ W_spe; f_sem ⊙ W_sem]`
//! * sampling: `f'_sem = rep(f_sem) ⊙ relu(L(f_spe))`,
//!   `f'_spe = rep(f_spe) ⊙ relu(L(f_sem))`, `s = GS(L(f), τ)` over unit
//!   pairs, `h = [f'_spe ⊙ s_spe; f'_sem ⊙ s_sem]`
//!
//! `rep` duplicates each unit in place (`[a, b] -> [a, a, b, b]`) so the
//! lifted features are `2d` wide. Each Gumbel-Softmax sample is a `d x 2`
//! relaxation: unit `i` of the original feature splits its weight between
//! lifted coordinates `2i` and `2i + 1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::{Init, Linear, ParamStore};
use crate::error::{Error, Result};
use crate::numeric::{gumbel_softmax, GumbelNoise, RngStream, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Fixed,
    Shared,
    Sampling,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Fixed, Strategy::Shared, Strategy::Sampling];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Fixed => "fixed",
            Strategy::Shared => "shared",
            Strategy::Sampling => "sampling",
        }
    }

    /// Width of `h` for branch width `d`.
    pub fn output_width(self, d: usize) -> usize {
        match self {
            Strategy::Fixed | Strategy::Shared => 2 * d,
            Strategy::Sampling => 4 * d,
        }
    }

    /// Closed-form parameter count for branch width `d`.
    pub fn param_count(self, d: usize) -> usize {
        match self {
            Strategy::Fixed => 0,
            Strategy::Shared => 2 * Linear::param_count(d, d),
            Strategy::Sampling => 4 * Linear::param_count(d, 2 * d),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config("fusion.strategy", format!("unknown strategy `{s}` (expected fixed, shared or sampling)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub strategy: Strategy,
    /// Temperature of the semantic-branch sample.
    pub tau1: f64,
    /// Temperature of the spectral-branch sample.
    pub tau2: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            strategy: Strategy::Fixed,
            tau1: 1.0,
            tau2: 1.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, tau) in [("fusion.tau1", self.tau1), ("fusion.tau2", self.tau2)] {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::config(key, format!("temperature must be positive, got {tau}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Maps {
    Fixed,
    Shared {
        /// f_spe -> W_sem
        gate_sem: Linear,
        /// f_sem -> W_spe
        gate_spe: Linear,
    },
    Sampling {
        /// f_spe -> 2d gate for f_sem
        lift_sem: Linear,
        /// f_sem -> 2d gate for f_spe
        lift_spe: Linear,
        /// f_sem -> GS logits of s_sem
        logit_sem: Linear,
        /// f_spe -> GS logits of s_spe
        logit_spe: Linear,
    },
}

/// Learnable maps of one fusion strategy.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    strategy: Strategy,
    d: usize,
    params: ParamStore,
    maps: Maps,
}

impl FusionParams {
    pub fn new(strategy: Strategy, d: usize, rng: &mut RngStream) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("model.d", "branch width must be positive"));
        }
        let mut params = ParamStore::new();
        let maps = match strategy {
            Strategy::Fixed => Maps::Fixed,
            Strategy::Shared => Maps::Shared {
                gate_sem: Linear::new(&mut params, "gate_sem", d, d, Init::FanIn, rng),
                gate_spe: Linear::new(&mut params, "gate_spe", d, d, Init::FanIn, rng),
            },
            Strategy::Sampling => Maps::Sampling {
                lift_sem: Linear::new(&mut params, "lift_sem", d, 2 * d, Init::FanIn, rng),
                lift_spe: Linear::new(&mut params, "lift_spe", d, 2 * d, Init::FanIn, rng),
                logit_sem: Linear::new(&mut params, "logit_sem", d, 2 * d, Init::FanIn, rng),
                logit_spe: Linear::new(&mut params, "logit_spe", d, 2 * d, Init::FanIn, rng),
            },
        };
        Ok(FusionParams { strategy, d, params, maps })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn output_width(&self) -> usize {
        self.strategy.output_width(self.d)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

/// Gumbel noise for the two samples of the sampling strategy.
pub enum FusionNoise<'a> {
    /// Fresh draws for every call (training).
    Sample(&'a mut RngStream),
    /// Fixed noise tensors shaped like the `[.., d, 2]` logits.
    Pinned { sem: &'a Tensor, spe: &'a Tensor },
    /// Zero noise (evaluation).
    Off,
}

/// Brings `[d]` or `[B, d]` operands to `[B, d]`; returns whether they were 1-D.
fn as_batch(tape: &Tape, f_spe: Var, f_sem: Var) -> Result<(Var, Var, bool)> {
    let (a, b) = (tape.shape(f_spe), tape.shape(f_sem));
    if a != b || a.is_empty() || a.len() > 2 {
        return Err(Error::Dimension(format!(
            "fusion operands must share a [d] or [batch, d] shape, got {a:?} and {b:?}"
        )));
    }
    if a.len() == 1 {
        let d = a[0];
        Ok((tape.reshape(f_spe, &[1, d])?, tape.reshape(f_sem, &[1, d])?, true))
    } else {
        Ok((f_spe, f_sem, false))
    }
}

fn restore(tape: &Tape, h: Var, flat: bool) -> Result<Var> {
    if flat {
        let w = tape.shape(h)[1];
        tape.reshape(h, &[w])
    } else {
        Ok(h)
    }
}

pub fn fuse_fixed(tape: &Tape, f_spe: Var, f_sem: Var) -> Result<Var> {
    let (spe, sem, flat) = as_batch(tape, f_spe, f_sem)?;
    let h = tape.concat(spe, sem)?;
    restore(tape, h, flat)
}

fn check_width(params: &FusionParams, tape: &Tape, f: Var) -> Result<()> {
    let d = *tape.shape(f).last().expect("checked non-empty");
    if d != params.d {
        return Err(Error::Dimension(format!("fusion maps expect width {}, got {d}", params.d)));
    }
    Ok(())
}

pub fn fuse_shared(tape: &Tape, f_spe: Var, f_sem: Var, params: &FusionParams, vars: &[Var]) -> Result<Var> {
    let Maps::Shared { gate_sem, gate_spe } = &params.maps else {
        return Err(Error::Usage(format!("fuse_shared called with {} parameters", params.strategy)));
    };
    let (spe, sem, flat) = as_batch(tape, f_spe, f_sem)?;
    check_width(params, tape, spe)?;
    let w_sem = tape.sigmoid(gate_sem.forward(tape, vars, spe)?);
    let w_spe = tape.sigmoid(gate_spe.forward(tape, vars, sem)?);
    let h_spe = tape.mul(spe, w_spe)?;
    let h_sem = tape.mul(sem, w_sem)?;
    let h = tape.concat(h_spe, h_sem)?;
    restore(tape, h, flat)
}

/// Per-unit two-way Gumbel-Softmax over `[B, 2d]` logits, flattened back to `[B, 2d]`.
fn paired_gumbel(tape: &Tape, logits: Var, tau: f64, noise: GumbelNoise<'_>) -> Result<Var> {
    let shape = tape.shape(logits);
    let (batch, width) = (shape[0], shape[1]);
    let pairs = tape.reshape(logits, &[batch, width / 2, 2])?;
    let s = gumbel_softmax(tape, pairs, tau, noise)?;
    tape.reshape(s, &[batch, width])
}

pub fn fuse_sampling(
    tape: &Tape,
    f_spe: Var,
    f_sem: Var,
    params: &FusionParams,
    vars: &[Var],
    cfg: &FusionConfig,
    noise: FusionNoise<'_>,
) -> Result<Var> {
    let Maps::Sampling {
        lift_sem,
        lift_spe,
        logit_sem,
        logit_spe,
    } = &params.maps
    else {
        return Err(Error::Usage(format!("fuse_sampling called with {} parameters", params.strategy)));
    };
    for tau in [cfg.tau1, cfg.tau2] {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
        }
    }
    let (spe, sem, flat) = as_batch(tape, f_spe, f_sem)?;
    check_width(params, tape, spe)?;

    let gate_sem = tape.relu(lift_sem.forward(tape, vars, spe)?);
    let gate_spe = tape.relu(lift_spe.forward(tape, vars, sem)?);
    let f2_sem = tape.mul(tape.repeat_interleave(sem, 2)?, gate_sem)?;
    let f2_spe = tape.mul(tape.repeat_interleave(spe, 2)?, gate_spe)?;

    let l_sem = logit_sem.forward(tape, vars, sem)?;
    let l_spe = logit_spe.forward(tape, vars, spe)?;
    let (s_sem, s_spe) = match noise {
        FusionNoise::Off => (
            paired_gumbel(tape, l_sem, cfg.tau1, GumbelNoise::Off)?,
            paired_gumbel(tape, l_spe, cfg.tau2, GumbelNoise::Off)?,
        ),
        FusionNoise::Pinned { sem: g_sem, spe: g_spe } => (
            paired_gumbel(tape, l_sem, cfg.tau1, GumbelNoise::Pinned(g_sem))?,
            paired_gumbel(tape, l_spe, cfg.tau2, GumbelNoise::Pinned(g_spe))?,
        ),
        FusionNoise::Sample(rng) => {
            let s_sem = paired_gumbel(tape, l_sem, cfg.tau1, GumbelNoise::Sample(&mut *rng))?;
            let s_spe = paired_gumbel(tape, l_spe, cfg.tau2, GumbelNoise::Sample(rng))?;
            (s_sem, s_spe)
        }
    };

    let h_spe = tape.mul(f2_spe, s_spe)?;
    let h_sem = tape.mul(f2_sem, s_sem)?;
    let h = tape.concat(h_spe, h_sem)?;
    restore(tape, h, flat)
}

/// Dispatches on `params.strategy()`; the configured strategy must agree.
pub fn fuse(
    tape: &Tape,
    f_spe: Var,
    f_sem: Var,
    params: &FusionParams,
    vars: &[Var],
    cfg: &FusionConfig,
    noise: FusionNoise<'_>,
) -> Result<Var> {
    if cfg.strategy != params.strategy {
        return Err(Error::config(
            "fusion.strategy",
            format!("configured `{}` but parameters were built for `{}`", cfg.strategy, params.strategy),
        ));
    }
    match cfg.strategy {
        Strategy::Fixed => fuse_fixed(tape, f_spe, f_sem),
        Strategy::Shared => fuse_shared(tape, f_spe, f_sem, params, vars),
        Strategy::Sampling => fuse_sampling(tape, f_spe, f_sem, params, vars, cfg, noise),
    }
}
