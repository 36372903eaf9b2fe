//! Independent reference implementations used as test oracles. Everything
//! here is written as plain loop nests over flat buffers, without touching
//! the library's kernels.
#![allow(dead_code)]

pub mod grad;

use hmgc::effnet::*;
use hmgc::tensorcore::{BnMode, LinearOp, ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `x: [n, cin, h, w]`, `w: [cout, cin, k, k]`, zero padding.
pub fn naive_conv2d(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], stride: usize, pad: usize) -> (Vec<f64>, [usize; 4]) {
    let [n, cin, h, wd] = xs;
    let [cout, wcin, k, _] = ws;
    assert_eq!(cin, wcin);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; n * cout * ho * wo];
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((b * cin + ci) * h + iy as usize) * wd + ix as usize];
                                acc += xv * w[((co * cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    y[((b * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (y, [n, cout, ho, wo])
}

/// `x: [n, c, h, w]`, `w: [c, 1, k, k]`.
pub fn naive_depthwise(x: &[f64], xs: [usize; 4], w: &[f64], k: usize, stride: usize, pad: usize) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, wd] = xs;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; n * c * ho * wo];
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && iy < h as isize && ix < wd as isize {
                                acc += x[((b * c + ch) * h + iy as usize) * wd + ix as usize] * w[(ch * k + ky) * k + kx];
                            }
                        }
                    }
                    y[((b * c + ch) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (y, [n, c, ho, wo])
}

/// `x: [n, f]`, `w: [g, f]`, optional bias `[g]` → `[n, g]`.
pub fn naive_dense(x: &[f64], n: usize, f: usize, w: &[f64], g: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let mut y = vec![0.0; n * g];
    for i in 0..n {
        for j in 0..g {
            let mut acc = bias.map(|b| b[j]).unwrap_or(0.0);
            for t in 0..f {
                acc += x[i * f + t] * w[j * f + t];
            }
            y[i * g + j] = acc;
        }
    }
    y
}

/// Counts multiply-accumulates by walking the full loop nest of every
/// recorded linear op, padded taps included, one increment per tap.
pub fn instrumented_macs(ops: &[LinearOp]) -> u64 {
    let mut count = 0u64;
    for op in ops {
        match op {
            LinearOp::Conv2d { input, weight, stride, pad } => {
                let (n, cin, h, w) = (input[0], input[1], input[2], input[3]);
                let (cout, k) = (weight[0], weight[2]);
                let ho = (h + 2 * pad - k) / stride + 1;
                let wo = (w + 2 * pad - k) / stride + 1;
                for _b in 0..n {
                    for _co in 0..cout {
                        for _oy in 0..ho {
                            for _ox in 0..wo {
                                for _ci in 0..cin {
                                    for _ky in 0..k {
                                        for _kx in 0..k {
                                            count += 1;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LinearOp::Depthwise { input, weight, stride, pad } => {
                let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
                let k = weight[2];
                let ho = (h + 2 * pad - k) / stride + 1;
                let wo = (w + 2 * pad - k) / stride + 1;
                for _b in 0..n {
                    for _ch in 0..c {
                        for _oy in 0..ho {
                            for _ox in 0..wo {
                                for _ky in 0..k {
                                    for _kx in 0..k {
                                        count += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LinearOp::Dense { input, weight } => {
                for _i in 0..input[0] {
                    for _j in 0..weight[0] {
                        for _t in 0..weight[1] {
                            count += 1;
                        }
                    }
                }
            }
        }
    }
    count
}

/// Unscaled spec from `(kind, kernel, channels, layers, stride)` rows.
pub fn toy(input: usize, rows: &[(StageKind, usize, usize, usize, usize)]) -> ScaledSpec {
    let stages = rows
        .iter()
        .map(|&(kind, kernel, channels, layers, stride)| StageSpec {
            kind,
            kernel,
            resolution: 0,
            channels,
            layers,
            stride,
        })
        .collect();
    let net = NetworkSpec {
        input_resolution: input,
        in_channels: 1,
        classifier_outputs: 5,
        stages,
    }
    .with_input_resolution(input)
    .unwrap();
    ScaledSpec::unscaled(net).unwrap()
}

/// Three small specs covering both stage kinds, odd resolutions and
/// strides, plus the nano profile.
pub fn toy_specs() -> Vec<ScaledSpec> {
    use StageKind::*;
    let mb1 = MbConv { expansion: 1 };
    let mb6 = MbConv { expansion: 6 };
    vec![
        toy(8, &[(Conv, 3, 4, 1, 2), (mb1, 3, 4, 1, 1), (Conv, 1, 8, 1, 1)]),
        toy(9, &[(Conv, 3, 3, 2, 1), (mb6, 5, 5, 2, 2), (mb6, 3, 6, 3, 2), (Conv, 1, 7, 1, 1)]),
        toy(12, &[(Conv, 5, 2, 1, 1), (mb6, 3, 2, 2, 1), (mb1, 5, 3, 1, 2), (mb6, 1, 4, 1, 3)]),
        nano_spec(16).unwrap(),
    ]
}

/// Runs the backbone plus the final classifier on one image and counts
/// MACs from the ops the tape actually executed.
pub fn executed_macs(spec: &ScaledSpec) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store: ParamStore<f32> = ParamStore::new();
    let net = build_backbone(spec, &mut store, &mut rng).unwrap();
    let fc = store
        .insert_uniform("fc", &[spec.network.classifier_outputs, net.feature_width], net.feature_width, &mut rng)
        .unwrap();
    let mut tape = Tape::new();
    let r = spec.input_resolution();
    let x = tape.leaf(Tensor::full(&[1, 1, r, r], 0.5), false);
    let bound = store.bind(&mut tape, false);
    let f = net.forward(&mut tape, &bound, &mut store, x, BnMode::Eval).unwrap();
    tape.dense(f, bound.var(fc), None).unwrap();
    instrumented_macs(&tape.linear_ops())
}

/// Parent links read straight from a taxonomy TOML document:
/// `(loop count, system → loop, fault → system)`.
pub fn parent_links(doc: &str) -> (usize, Vec<usize>, Vec<usize>) {
    let v: toml::Value = toml::from_str(doc).unwrap();
    let parents = |key: &str| -> Vec<usize> {
        v[key]
            .as_array()
            .unwrap()
            .iter()
            .map(|n| n["parent"].as_integer().unwrap() as usize)
            .collect()
    };
    (v["loops"].as_array().unwrap().len(), parents("systems"), parents("faults"))
}

fn plain_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Posterior over every `(loop, system, fault)` triple that follows the
/// parent links, found by scanning the full cartesian product. Returned as
/// `(loop, system, fault, probability)` in fault order.
pub fn brute_force_posterior(
    links: &(usize, Vec<usize>, Vec<usize>),
    root: &[f64],
    parent: &[f64],
    child: &[f64],
) -> Vec<(usize, usize, usize, f64)> {
    let (loops, sys_parent, fault_parent) = links;
    let (pr, pp, pc) = (plain_softmax(root), plain_softmax(parent), plain_softmax(child));
    let mut valid = Vec::new();
    for f in 0..fault_parent.len() {
        for s in 0..sys_parent.len() {
            for l in 0..*loops {
                if fault_parent[f] == s && sys_parent[s] == l {
                    valid.push((l, s, f, pr[l] * pp[s] * pc[f]));
                }
            }
        }
    }
    let z: f64 = valid.iter().map(|t| t.3).sum();
    valid.into_iter().map(|(l, s, f, p)| (l, s, f, p / z)).collect()
}

/// Maximum of `|a - b| / max(|b|, floor)` over paired entries.
pub fn max_rel_diff(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}
