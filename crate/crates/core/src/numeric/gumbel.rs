use super::{RngStream, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Source of the Gumbel perturbation added to the logits.
pub enum GumbelNoise<'a> {
    /// Fresh i.i.d. Gumbel(0, 1) draws.
    Sample(&'a mut RngStream),
    /// Caller-supplied noise of the logits' shape.
    Pinned(&'a Tensor),
    /// No noise: plain `softmax(logits / tau)`.
    Off,
}

pub fn sample_gumbel(shape: &[usize], rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gumbel()).collect();
    Tensor::new(shape.to_vec(), data).expect("sized from shape")
}

/// `softmax((logits + g) / tau)` along the last axis.
///
/// The noise enters the tape as a constant, so gradients flow through the
/// softmax only.
pub fn gumbel_softmax(tape: &Tape, logits: Var, tau: f64, noise: GumbelNoise<'_>) -> Result<Var> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    let shape = tape.shape(logits);
    if shape.is_empty() {
        return Err(Error::Dimension("gumbel_softmax needs at least one axis".into()));
    }
    let perturbed = match noise {
        GumbelNoise::Off => logits,
        GumbelNoise::Pinned(g) => {
            let g = tape.constant(g.clone());
            tape.add(logits, g)?
        }
        GumbelNoise::Sample(rng) => {
            let g = tape.constant(sample_gumbel(&shape, rng));
            tape.add(logits, g)?
        }
    };
    let scaled = tape.scale(perturbed, 1.0 / tau);
    tape.softmax(scaled, shape.len() - 1)
}
