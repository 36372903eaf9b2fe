//! Browser bindings for three library operations. Each export is a thin
//! wrapper over a plain function so the logic also runs (and is tested)
//! natively.

use hmgc::effnet::{
    apply_compound_scaling, audit_table, check_constraint, estimate_flops, NetworkSpec, ScalingCoefficients,
    DEFAULT_CHANNEL_DIVISOR, DEFAULT_CONSTRAINT_TOLERANCE,
};
use hmgc::hmgchead::{joint_decode, report_line, HierLogits};
use hmgc::imagegray::{encode_values, Normalization};
use hmgc::taxonomy::TaxonomyTree;
use wasm_bindgen::prelude::*;

/// Audit text for the reference network scaled by `(α, β, γ, φ)`.
pub fn scale_audit_text(alpha: f64, beta: f64, gamma: f64, phi: f64) -> hmgc::Result<String> {
    let net = NetworkSpec::reference();
    let c = ScalingCoefficients::new(alpha, beta, gamma, phi)?;
    let scaled = apply_compound_scaling(&net, &c, DEFAULT_CHANNEL_DIVISOR)?;
    let base = apply_compound_scaling(&net, &c.with_phi(0.0), DEFAULT_CHANNEL_DIVISOR)?;
    let product = c.resource_product();
    let status = if check_constraint(&c, DEFAULT_CONSTRAINT_TOLERANCE) {
        "satisfied"
    } else {
        "violated"
    };
    let ratio = estimate_flops(&scaled)? as f64 / estimate_flops(&base)? as f64;
    Ok(format!(
        "alpha*beta^2*gamma^2 = {product:.3} ({status})\ninput resolution {0}x{0}\n{1}FLOPS ratio vs phi=0: {ratio:.4}\n",
        scaled.input_resolution(),
        audit_table(&scaled)?
    ))
}

/// Gray pixels (row-major, zero padded, side `⌈√n⌉`) for one snapshot.
pub fn gray_pixels(values: &[f64]) -> hmgc::Result<Vec<u8>> {
    Ok(encode_values(values, &Normalization::PerImage)?.pixels().to_vec())
}

/// Report line for the default taxonomy (2 / 4 / 16 logits).
pub fn decode_text(root: &[f64], parent: &[f64], child: &[f64]) -> hmgc::Result<String> {
    let tree = TaxonomyTree::default_tree();
    let logits = HierLogits {
        root: root.to_vec(),
        parent: parent.to_vec(),
        child: child.to_vec(),
    };
    Ok(report_line(&tree, &joint_decode(&tree, &logits)?))
}

fn js(e: hmgc::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn scale_audit(alpha: f64, beta: f64, gamma: f64, phi: f64) -> Result<String, JsError> {
    scale_audit_text(alpha, beta, gamma, phi).map_err(js)
}

#[wasm_bindgen]
pub fn encode_gray(values: &[f64]) -> Result<Vec<u8>, JsError> {
    gray_pixels(values).map_err(js)
}

#[wasm_bindgen]
pub fn decode(root: &[f64], parent: &[f64], child: &[f64]) -> Result<String, JsError> {
    decode_text(root, parent, child).map_err(js)
}
