use rand::Rng;

use super::ParameterSet;
use crate::error::{Error, Result};

/// One scalar inside a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coordinate {
    pub param: usize,
    pub index: usize,
}

/// Draws `n` coordinates uniformly over all parameter values (with replacement).
pub fn sample_coordinates<R: Rng>(params: &ParameterSet, n: usize, rng: &mut R) -> Vec<Coordinate> {
    let total = params.num_values();
    let mut offsets = Vec::with_capacity(params.len());
    let mut acc = 0;
    for i in 0..params.len() {
        offsets.push(acc);
        acc += params.tensor(i).len();
    }
    (0..n)
        .map(|_| {
            let flat = rng.random_range(0..total);
            let param = offsets.partition_point(|&o| o <= flat) - 1;
            Coordinate {
                param,
                index: flat - offsets[param],
            }
        })
        .collect()
}

/// Compares the analytic gradient returned by `loss` against central
/// differences at each coordinate and returns the largest relative error
/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn gradient_check<F>(
    loss: F,
    params: &ParameterSet,
    h: f64,
    coords: &[Coordinate],
) -> Result<f64>
where
    F: Fn(&ParameterSet) -> Result<(f64, ParameterSet)>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let (_, grad) = loss(params)?;
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for c in coords {
        let orig = params.values(c.param)[c.index];
        let eval = |probe: &mut ParameterSet, x: f64| -> Result<f64> {
            probe.values_mut(c.param)[c.index] = x;
            let (v, _) = loss(probe)?;
            if !v.is_finite() {
                return Err(Error::Evaluation(format!(
                    "non-finite loss {v} when perturbing {}[{}]",
                    params.name(c.param),
                    c.index
                )));
            }
            Ok(v)
        };
        let plus = eval(&mut probe, orig + h)?;
        let minus = eval(&mut probe, orig - h)?;
        probe.values_mut(c.param)[c.index] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grad.values(c.param)[c.index];
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
