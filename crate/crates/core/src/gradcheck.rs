//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used for the numerical side, so the check is
//! independent of every backward rule it verifies.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{no_grad, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// (input index, element index, analytic, numeric) of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Relative error with a floor on the denominator so exact zeros compare sanely.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients of `f` with central differences of step `h`
/// for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, h: f64, floor: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    check_gradients_at(inputs, f, h, floor, &coords)
}

/// Like [`check_gradients`] but on at most `per_input` seeded random
/// elements of each input.
pub fn check_gradients_sampled<F>(
    inputs: &[Tensor<f64>],
    f: F,
    h: f64,
    floor: f64,
    per_input: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let mut picked = sample(&mut rng, t.numel(), per_input.min(t.numel())).into_vec();
        picked.sort_unstable();
        coords.extend(picked.into_iter().map(|j| (i, j)));
    }
    check_gradients_at(inputs, f, h, floor, &coords)
}

/// Checks the listed `(input, element)` coordinates.
pub fn check_gradients_at<F>(
    inputs: &[Tensor<f64>],
    f: F,
    h: f64,
    floor: f64,
    coords: &[(usize, usize)],
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach_param()).collect();
    let loss = f(&leaves)?;
    if loss.numel() != 1 {
        return Err(Error::Contract("gradient check needs a scalar function".into()));
    }
    loss.backward()?;

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();
    for &(i, j) in coords {
        let leaf = &leaves[i];
        let eval = |delta: f64| -> Result<f64> {
            let mut shifted: Vec<Tensor<f64>> = leaves.iter().map(|t| t.detach()).collect();
            let mut data = leaf.to_vec();
            data[j] += delta;
            shifted[i] = Tensor::from_vec(leaf.shape(), data)?;
            no_grad(|| f(&shifted))?.item()
        };
        let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
        let a = analytic[i][j];
        let err = rel_err(a, numeric, floor);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some((i, j, a, numeric));
        }
    }
    Ok(report)
}
