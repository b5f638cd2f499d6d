use serde::{Deserialize, Serialize};

use super::{init_tensor, Init, Linear, ParamStore};
use crate::dsp::SpectralStack;
use crate::error::{Error, Result};
use crate::numeric::{RngStream, Tape, Tensor, Var};

/// Shape of the convolutional spectral encoder: blocks of
/// (KxK same convolution, relu, 2x2 mean pool), a spatial mean, then a linear
/// map to `d`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralArch {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub d: usize,
}

impl Default for SpectralArch {
    fn default() -> Self {
        SpectralArch {
            in_channels: 3,
            height: 64,
            width: 64,
            widths: vec![8, 16, 32],
            kernel: 3,
            d: 128,
        }
    }
}

impl SpectralArch {
    pub fn validate(&self) -> Result<()> {
        let pool = 1usize << self.widths.len();
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config("model.conv_widths", "need at least one non-zero block width"));
        }
        if !self.height.is_multiple_of(pool) || !self.width.is_multiple_of(pool) || self.height == 0 || self.width == 0 {
            return Err(Error::config(
                "spectral.height",
                format!(
                    "{}x{} is not divisible by {pool} ({} pooling blocks)",
                    self.height,
                    self.width,
                    self.widths.len()
                ),
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("model.kernel", "kernel size must be odd"));
        }
        if self.d == 0 || self.in_channels == 0 {
            return Err(Error::config("model.d", "feature width must be positive"));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut c_in = self.in_channels;
        for &c_out in &self.widths {
            total += c_out * c_in * self.kernel * self.kernel + c_out;
            c_in = c_out;
        }
        total + Linear::param_count(c_in, self.d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralEncoder {
    arch: SpectralArch,
    params: ParamStore,
    convs: Vec<(usize, usize)>,
    proj: Linear,
}

impl SpectralEncoder {
    pub fn new(arch: SpectralArch, rng: &mut RngStream) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamStore::new();
        let mut convs = Vec::new();
        let mut c_in = arch.in_channels;
        let k = arch.kernel;
        for (i, &c_out) in arch.widths.iter().enumerate() {
            let fan_in = c_in * k * k;
            let w = params.push(format!("conv{i}.weight"), init_tensor(&[c_out, c_in, k, k], fan_in, Init::FanIn, rng));
            let b = params.push(format!("conv{i}.bias"), Tensor::zeros(&[c_out]));
            convs.push((w, b));
            c_in = c_out;
        }
        let proj = Linear::new(&mut params, "proj", c_in, arch.d, Init::FanIn, rng);
        Ok(SpectralEncoder {
            arch,
            params,
            convs,
            proj,
        })
    }

    pub fn arch(&self) -> &SpectralArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Packs stacks into an `[N, 3, H, W]` tensor, checking extents.
    pub fn batch(&self, stacks: &[&SpectralStack]) -> Result<Tensor> {
        let (h, w) = (self.arch.height, self.arch.width);
        let mut data = Vec::with_capacity(stacks.len() * 3 * h * w);
        for s in stacks {
            if s.height() != h || s.width() != w {
                return Err(Error::config(
                    "spectral.height",
                    format!(
                        "stack `{}` is {}x{}, encoder expects {h}x{w}",
                        s.source_id(),
                        s.height(),
                        s.width()
                    ),
                ));
            }
            data.extend_from_slice(s.data());
        }
        Tensor::new(vec![stacks.len(), self.arch.in_channels, h, w], data)
    }

    /// `[N, C, H, W]` input to `[N, d]` features.
    pub fn forward(&self, tape: &Tape, vars: &[Var], input: Var) -> Result<Var> {
        let shape = tape.shape(input);
        let expect = [self.arch.in_channels, self.arch.height, self.arch.width];
        if shape.len() != 4 || shape[1..] != expect {
            return Err(Error::config(
                "spectral.height",
                format!("encoder expects [N, {expect:?}], got {shape:?}"),
            ));
        }
        let mut x = input;
        for &(w, b) in &self.convs {
            let y = tape.conv2d(x, vars[w], vars[b])?;
            let y = tape.relu(y);
            x = tape.avg_pool2(y)?;
        }
        let pooled = tape.spatial_mean(x)?;
        self.proj.forward(tape, vars, pooled)
    }
}

/// f_spe for one stack, recorded on `tape` with fresh parameter leaves.
pub fn spectral_encode(tape: &Tape, encoder: &SpectralEncoder, stack: &SpectralStack) -> Result<Var> {
    let vars = encoder.params.bind(tape);
    let x = tape.constant(encoder.batch(&[stack])?);
    let f = encoder.forward(tape, &vars, x)?;
    tape.reshape(f, &[encoder.arch.d])
}
