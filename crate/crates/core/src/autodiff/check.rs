use rand::seq::index::sample;

use super::params::{ParamGrads, ParameterSet};
use crate::error::Result;

/// Gradients below this magnitude are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Largest relative error between analytic gradients and central finite
/// differences over up to `samples` randomly chosen scalar parameters.
pub fn grad_check<F>(f: F, params: &ParameterSet, eps: f64, samples: usize, seed: u64) -> Result<f64>
where
    F: Fn(&ParameterSet) -> Result<(f64, ParamGrads)>,
{
    let (_, analytic) = f(params)?;
    let n = params.num_params();
    let mut rng = ParameterSet::seeded_rng(seed);
    let picks: Vec<usize> = if samples >= n {
        (0..n).collect()
    } else {
        sample(&mut rng, n, samples).into_vec()
    };
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for k in picks {
        let orig = *probe.scalar_mut(k);
        *probe.scalar_mut(k) = orig + eps;
        let (plus, _) = f(&probe)?;
        *probe.scalar_mut(k) = orig - eps;
        let (minus, _) = f(&probe)?;
        *probe.scalar_mut(k) = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.scalar(k);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}
