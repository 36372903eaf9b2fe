use std::cmp::Ordering;

use super::flops::estimate_flops;
use super::spec::{apply_compound_scaling, check_constraint, NetworkSpec, ScaledSpec, ScalingCoefficients};
use crate::error::{Error, Result};

/// Picks the best-scoring `(α, β, γ)` among grid points that satisfy the
/// resource constraint, scoring each candidate scaled at φ = 1. Ties go to
/// the lower FLOPS estimate, then to the lexicographically smaller triple.
pub fn grid_search_coefficients<F>(
    base: &NetworkSpec,
    grid: &[(f64, f64, f64)],
    channel_divisor: usize,
    mut eval_fn: F,
    tolerance: f64,
) -> Result<ScalingCoefficients>
where
    F: FnMut(&ScaledSpec) -> f64,
{
    let mut best: Option<(f64, u64, ScalingCoefficients)> = None;
    for &(alpha, beta, gamma) in grid {
        let Ok(c) = ScalingCoefficients::new(alpha, beta, gamma, 1.0) else { continue };
        if !check_constraint(&c, tolerance) {
            continue;
        }
        let scaled = apply_compound_scaling(base, &c, channel_divisor)?;
        let flops = estimate_flops(&scaled)?;
        let score = eval_fn(&scaled);
        let better = match &best {
            None => true,
            Some((bs, bf, bc)) => match score.partial_cmp(bs).unwrap_or(Ordering::Less) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => (flops, c.alpha, c.beta, c.gamma) < (*bf, bc.alpha, bc.beta, bc.gamma),
            },
        };
        if better {
            best = Some((score, flops, c));
        }
    }
    best.map(|(_, _, c)| c).ok_or(Error::NoFeasibleCoefficients)
}
