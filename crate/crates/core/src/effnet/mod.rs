//! Compound-scaled MBConv backbone: stage tables, scaling, FLOPS
//! estimation, coefficient search and network assembly.

mod backbone;
mod flops;
mod search;
mod spec;

pub use backbone::{build_backbone, Backbone, ConvBn, Layer, MbConvBlock, SqueezeExcite, MIN_RESOLUTION};
pub use flops::{estimate_flops, flops_breakdown, se_width, FlopsBreakdown, StageFlops, SE_RATIO};
pub use search::grid_search_coefficients;
pub use spec::{
    apply_compound_scaling, check_constraint, round_to_divisor, NetworkSpec, ScaledSpec, ScalingCoefficients, StageKind,
    StageSpec, DEFAULT_CHANNEL_DIVISOR, DEFAULT_CONSTRAINT_TOLERANCE,
};

use crate::error::Result;

/// Per-stage audit table of a scaled spec: stage, kind, kernel, input
/// resolution, channels, layers, MACs.
pub fn audit_table(spec: &ScaledSpec) -> Result<String> {
    use std::fmt::Write;
    let b = flops_breakdown(spec)?;
    let mut out = String::new();
    writeln!(out, "{:>5}  {:<16} {:>3}  {:>9}  {:>8}  {:>6}  {:>14}", "stage", "kind", "k", "res", "channels", "layers", "MACs").unwrap();
    for (st, f) in spec.stages().iter().zip(&b.stages) {
        let kind = match st.kind {
            StageKind::Conv => "Conv".to_string(),
            StageKind::MbConv { expansion } => format!("MBConv{expansion}"),
        };
        writeln!(
            out,
            "{:>5}  {:<16} {:>3}  {:>9}  {:>8}  {:>6}  {:>14}",
            f.stage,
            kind,
            st.kernel,
            format!("{0}x{0}", st.resolution),
            st.channels,
            st.layers,
            f.macs
        )
        .unwrap();
    }
    writeln!(out, "{:>5}  {:<16} {:>3}  {:>9}  {:>8}  {:>6}  {:>14}", "fc", "Dense", "-", "1x1", spec.network.classifier_outputs, 1, b.classifier).unwrap();
    writeln!(out, "total MACs: {}", b.total()).unwrap();
    Ok(out)
}

/// Reference table at the nano profile, then run at `input_resolution`
/// (the native image side) instead of the scaled one.
pub fn nano_spec(input_resolution: usize) -> Result<ScaledSpec> {
    apply_compound_scaling(&NetworkSpec::reference(), &ScalingCoefficients::nano(), DEFAULT_CHANNEL_DIVISOR)?
        .with_input_resolution(input_resolution)
}

/// Every `(α, β, γ)` on a regular lattice over `[1, 2]³` with the given
/// step.
pub fn coefficient_grid(step: f64) -> Vec<(f64, f64, f64)> {
    let n = (1.0 / step).round() as usize;
    let axis: Vec<f64> = (0..=n).map(|i| 1.0 + i as f64 * step).collect();
    let mut out = Vec::with_capacity(axis.len().pow(3));
    for &a in &axis {
        for &b in &axis {
            for &g in &axis {
                out.push((a, b, g));
            }
        }
    }
    out
}
