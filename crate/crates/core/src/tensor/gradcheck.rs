use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{no_grad, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// max |analytic − fd| / max(|analytic|, |fd|, floor) over checked
    /// coordinates, where `floor` is [`FLOOR_FRACTION`] of the largest
    /// gradient magnitude seen in the same check (and at least 1e-8).
    pub max_rel_error: f64,
    /// (input index, flat element index) of the worst coordinate
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Components far below the largest gradient are judged against it rather
/// than against themselves, since finite differences cannot resolve them.
pub const FLOOR_FRACTION: f64 = 1e-3;

/// Central-difference check of every coordinate of every input.
pub fn gradcheck<T, F>(f: F, inputs: &[Tensor<T>], eps: T) -> Result<f64>
where
    T: Element,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    Ok(gradcheck_sampled(f, inputs, eps, usize::MAX, 0)?.max_rel_error)
}

/// Like [`gradcheck`], but checks at most `max_per_input` coordinates per input,
/// chosen deterministically from `seed`.
pub fn gradcheck_sampled<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    eps: T,
    max_per_input: usize,
    seed: u64,
) -> Result<GradcheckReport>
where
    T: Element,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    let analytic = analytic_grads(&f, inputs)?;
    compare(|xs| f(xs), inputs, &analytic, eps.to_f64_lossy(), max_per_input, seed)
}

/// A scalar function that can be evaluated at any precision.
pub trait ScalarFn {
    fn eval<T: Element>(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>>;
}

/// Checks single-precision analytic gradients against central differences
/// taken on a double-precision copy of the same function and inputs.
pub fn gradcheck_mixed<F: ScalarFn>(
    f: &F,
    inputs: &[Tensor<f32>],
    eps: f64,
    max_per_input: usize,
    seed: u64,
) -> Result<GradcheckReport> {
    let analytic: Vec<Vec<f64>> = analytic_grads(&|xs: &[Tensor<f32>]| f.eval(xs), inputs)?
        .into_iter()
        .map(|g| g.into_iter().map(f64::from).collect())
        .collect();
    let wide: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast::<f64>()).collect();
    compare(|xs| f.eval(xs), &wide, &analytic, eps, max_per_input, seed)
}

fn analytic_grads<T, F>(f: &F, inputs: &[Tensor<T>]) -> Result<Vec<Vec<T>>>
where
    T: Element,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    for (i, t) in inputs.iter().enumerate() {
        if !t.is_leaf() || !t.requires_grad() {
            return Err(Error::arg(format!(
                "gradcheck input {i} must be a leaf with requires_grad"
            )));
        }
        t.zero_grad();
    }
    let out = f(inputs)?;
    if out.numel() != 1 {
        return Err(Error::arg("gradcheck function must return a scalar"));
    }
    out.backward()?;
    drop(out);
    Ok(inputs
        .iter()
        .map(|t| {
            let g = t.grad().unwrap_or_else(|| vec![T::zero(); t.numel()]);
            t.zero_grad();
            g
        })
        .collect())
}

fn compare<T, A, F>(
    f: F,
    inputs: &[Tensor<T>],
    analytic: &[Vec<A>],
    eps: f64,
    max_per_input: usize,
    seed: u64,
) -> Result<GradcheckReport>
where
    T: Element,
    A: Element,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    let eval = |inputs: &[Tensor<T>]| -> Result<f64> { Ok(no_grad(|| f(inputs))?.item().to_f64_lossy()) };
    let step = T::from_f64_lossy(eps);
    let two_eps = 2.0 * step.to_f64_lossy();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut pairs = Vec::new();
    for (ti, t) in inputs.iter().enumerate() {
        let coords: Vec<usize> = if t.numel() <= max_per_input {
            (0..t.numel()).collect()
        } else {
            let mut v = rand::seq::index::sample(&mut rng, t.numel(), max_per_input).into_vec();
            v.sort_unstable();
            v
        };
        for i in coords {
            let orig = t.values()[i];
            t.update_values(|d| d[i] = orig + step);
            let plus = eval(inputs);
            t.update_values(|d| d[i] = orig - step);
            let minus = eval(inputs);
            t.update_values(|d| d[i] = orig);
            let fd = (plus? - minus?) / two_eps;
            pairs.push((ti, i, analytic[ti][i].to_f64_lossy(), fd));
        }
    }
    let largest = pairs
        .iter()
        .map(|&(_, _, a, fd)| a.abs().max(fd.abs()))
        .fold(0.0, f64::max);
    let floor = (FLOOR_FRACTION * largest).max(1e-8);
    for (ti, i, a, fd) in pairs {
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
        if err > report.max_rel_error || !err.is_finite() {
            report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
            report.worst = (ti, i);
        }
        report.checked += 1;
    }
    Ok(report)
}
