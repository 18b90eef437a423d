use rand::seq::index::sample;

use super::params::ParamVector;
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    /// Element offset of the worst coordinate inside `worst_parameter`.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coordinates_checked: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Check only this many seeded random coordinates; `None` checks all trainable ones.
    pub max_coordinates: Option<usize>,
    pub seed: u64,
    /// Lower bound on the relative-error denominator.
    pub denominator_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-6, max_coordinates: None, seed: 0, denominator_floor: 1e-8 }
    }
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// differences over the trainable coordinates of `params`.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, floor)`.
pub fn finite_difference_check<F>(
    mut loss_fn: F,
    params: &ParamVector,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamVector) -> Result<(f64, ParamVector)>,
{
    if !(opts.epsilon > 0.0 && opts.epsilon <= 1e-2) {
        return Err(Error::invalid(format!("epsilon {} outside (0, 1e-2]", opts.epsilon)));
    }
    let (loss0, grad) = loss_fn(params)?;
    let (loss1, grad1) = loss_fn(params)?;
    if loss0.to_bits() != loss1.to_bits() || grad.flatten() != grad1.flatten() {
        return Err(Error::NonDeterministic(format!(
            "two evaluations at the same point gave {loss0} and {loss1}"
        )));
    }
    params.check_layout(&grad, "finite_difference_check")?;

    // (entry, offset) of every trainable coordinate
    let mut coords = Vec::new();
    for idx in 0..params.len() {
        if params.is_trainable(idx) {
            coords.extend((0..params.tensor(idx).len()).map(|off| (idx, off)));
        }
    }
    if let Some(limit) = opts.max_coordinates {
        if limit < coords.len() {
            let mut rng = rng_for(opts.seed, &[0x67_72_61_64]);
            let mut picked: Vec<usize> = sample(&mut rng, coords.len(), limit).into_vec();
            picked.sort_unstable();
            coords = picked.into_iter().map(|i| coords[i]).collect();
        }
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coordinates_checked: coords.len(),
    };
    for (idx, off) in coords {
        let orig = params.tensor(idx).data()[off];
        work.tensor_mut(idx).data_mut()[off] = orig + opts.epsilon;
        let (plus, _) = loss_fn(&work)?;
        work.tensor_mut(idx).data_mut()[off] = orig - opts.epsilon;
        let (minus, _) = loss_fn(&work)?;
        work.tensor_mut(idx).data_mut()[off] = orig;

        let numeric = (plus - minus) / (2.0 * opts.epsilon);
        let analytic = grad.tensor(idx).data()[off];
        let denom = analytic.abs().max(numeric.abs()).max(opts.denominator_floor);
        let rel = (analytic - numeric).abs() / denom;
        if rel > report.max_relative_error || report.worst_parameter.is_empty() {
            report.max_relative_error = rel;
            report.worst_parameter = params.name(idx).to_string();
            report.worst_index = off;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
