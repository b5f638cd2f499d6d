use crate::error::{Error, Result};
use crate::numeric::{RngStream, Tape, Tensor, Var};

/// Named trainable tensors of one model component.
///
/// Order is fixed at construction; [`ParamStore::bind`] records the tensors
/// on a tape in that order, so gradients and optimiser state line up by index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn bind(&self, tape: &Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.tensors {
            t.data_mut().fill(value);
        }
    }

    /// Replaces every tensor with `other`'s, checking names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Data(format!(
                "parameter names differ: expected {:?}, found {:?}",
                self.names, other.names
            )));
        }
        for (name, (mine, theirs)) in self.names.iter().zip(self.tensors.iter_mut().zip(&other.tensors)) {
            if mine.shape() != theirs.shape() {
                return Err(Error::Data(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    theirs.shape(),
                    mine.shape()
                )));
            }
            *mine = theirs.clone();
        }
        Ok(())
    }
}

/// Total scalar count across several parameter collections.
pub fn count_params<'a>(stores: impl IntoIterator<Item = &'a ParamStore>) -> usize {
    stores.into_iter().map(ParamStore::count).sum()
}

/// How a weight tensor is initialised; biases always start at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    FanIn,
    Zeros,
}

pub fn init_tensor(shape: &[usize], fan_in: usize, init: Init, rng: &mut RngStream) -> Tensor {
    let mut t = Tensor::zeros(shape);
    if init == Init::FanIn {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        for v in t.data_mut() {
            *v = rng.uniform(-bound, bound);
        }
    }
    t
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, init: Init, rng: &mut RngStream) -> Self {
        let weight = store.push(format!("{name}.weight"), init_tensor(&[fan_in, fan_out], fan_in, init, rng));
        let bias = store.push(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn param_count(fan_in: usize, fan_out: usize) -> usize {
        fan_in * fan_out + fan_out
    }

    /// Applies the map to `[batch, fan_in]` input.
    pub fn forward(&self, tape: &Tape, vars: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, vars[self.weight])?;
        tape.add_row(y, vars[self.bias])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    #[test]
    fn linear_count() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(0).stream("init");
        Linear::new(&mut store, "l", 4, 3, Init::FanIn, &mut rng);
        assert_eq!(store.count(), 15);
        assert_eq!(Linear::param_count(4, 3), 15);
        assert_eq!(count_params([&ParamStore::new()]), 0);
    }

    #[test]
    fn fan_in_bound_holds() {
        let mut rng = Rng::new(0).stream("init");
        let t = init_tensor(&[24, 10], 24, Init::FanIn, &mut rng);
        let bound = 0.5;
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        assert!(t.data().iter().any(|v| v.abs() > 0.25));
    }

    #[test]
    fn load_checks_shapes() {
        let mut a = ParamStore::new();
        a.push("w", Tensor::zeros(&[2]));
        let mut b = ParamStore::new();
        b.push("w", Tensor::zeros(&[3]));
        assert!(a.load_from(&b).is_err());
        let mut c = ParamStore::new();
        c.push("w", Tensor::vector(vec![1., 2.]));
        a.load_from(&c).unwrap();
        assert_eq!(a.tensors()[0].data(), &[1., 2.]);
    }
}
