use super::{RngStream, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_EPS: f64 = 1e-4;

fn eval_scalar<F>(f: &F, points: &[Tensor]) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::Usage(format!("grad_check needs a scalar function, got shape {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

fn analytic<F>(f: &F, points: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&tape, &vars)?;
    tape.backward(out)?;
    Ok(vars.iter().map(|&v| tape.grad(v).expect("param leaf")).collect())
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Largest `|analytic - central difference| / max(1, |analytic|)` over every
/// coordinate of `point`.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tape, Var) -> Result<Var>,
{
    let wrapped = |tape: &Tape, vars: &[Var]| f(tape, vars[0]);
    grad_check_many(wrapped, std::slice::from_ref(point), eps, None)
}

/// Multi-input form of [`grad_check`].
///
/// With `sample = Some((k, rng))` only `k` random coordinates per input are
/// probed, which keeps checks of large parameter sets affordable.
pub fn grad_check_many<F>(
    f: F,
    points: &[Tensor],
    eps: f64,
    mut sample: Option<(usize, &mut RngStream)>,
) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("finite-difference step must be positive, got {eps}")));
    }
    let grads = analytic(&f, points)?;
    let mut worst = 0.0f64;
    let mut probe = points.to_vec();
    for (i, grad) in grads.iter().enumerate() {
        let n = points[i].numel();
        let coords: Vec<usize> = match sample.as_mut() {
            Some((k, rng)) if *k < n => (0..*k).map(|_| (rng.open01() * n as f64) as usize % n).collect(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let base = points[i].data()[c];
            probe[i].data_mut()[c] = base + eps;
            let plus = eval_scalar(&f, &probe)?;
            probe[i].data_mut()[c] = base - eps;
            let minus = eval_scalar(&f, &probe)?;
            probe[i].data_mut()[c] = base;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(grad.data()[c], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_error() {
        let p = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let err = grad_check(
            |tape, x| {
                let z = tape.scale(x, 0.0);
                Ok(tape.sum(z))
            },
            &p,
            DEFAULT_EPS,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_bad_step() {
        let p = Tensor::vector(vec![1.0]);
        assert!(grad_check(|tape, x| Ok(tape.sum(x)), &p, 0.0).is_err());
    }
}
