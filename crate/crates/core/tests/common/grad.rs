//! Finite-difference scenarios covering every tape primitive and a full
//! MBConv block, on randomized small shapes in f64.

use hmgc::effnet::MbConvBlock;
use hmgc::tensorcore::{finite_diff_check, BnMode, GradCheckReport, ParamStore, RunningStats, Tape, Tensor, Var};
use hmgc::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const PLAIN_TOLERANCE: f64 = 1e-4;
pub const BATCHNORM_TOLERANCE: f64 = 1e-3;

pub struct Scenario {
    pub name: String,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Random-weighted sum, so every output coordinate carries a distinct
/// upstream gradient.
fn probe(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(v).shape().to_vec();
    let r = tape.leaf(rand_tensor(&mut rng, &shape), false);
    let m = tape.mul(v, r)?;
    tape.sum(m)
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(3..=5))
}

/// All scenarios for one seed. Shapes, strides and values are drawn from
/// the seed.
pub fn scenarios(seed: u64) -> Result<Vec<Scenario>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, tolerance: f64, report: GradCheckReport| {
        out.push(Scenario {
            name: name.to_string(),
            tolerance,
            report,
        })
    };

    // conv2d
    let (n, c, h) = dims(&mut rng);
    let cout = rng.gen_range(1..=3);
    let k = [1, 3][rng.gen_range(0..2)];
    let stride = rng.gen_range(1..=2);
    let x = rand_tensor(&mut rng, &[n, c, h, h]);
    let w = rand_tensor(&mut rng, &[cout, c, k, k]);
    let (wc, xc) = (w.clone(), x.clone());
    push(
        "conv2d d/dx",
        PLAIN_TOLERANCE,
        finite_diff_check(
            move |t, xv| {
                let wv = t.leaf(wc.clone(), false);
                let y = t.conv2d(xv, wv, stride, k / 2)?;
                probe(t, y, seed)
            },
            &x,
            STEP,
        )?,
    );
    push(
        "conv2d d/dw",
        PLAIN_TOLERANCE,
        finite_diff_check(
            move |t, wv| {
                let xv = t.leaf(xc.clone(), false);
                let y = t.conv2d(xv, wv, stride, k / 2)?;
                probe(t, y, seed)
            },
            &w,
            STEP,
        )?,
    );

    // depthwise
    let (n, c, h) = dims(&mut rng);
    let k = [3, 5][rng.gen_range(0..2)];
    let stride = rng.gen_range(1..=2);
    let x = rand_tensor(&mut rng, &[n, c, h, h]);
    let w = rand_tensor(&mut rng, &[c, 1, k, k]);
    let (wc, xc) = (w.clone(), x.clone());
    push(
        "depthwise d/dx",
        PLAIN_TOLERANCE,
        finite_diff_check(
            move |t, xv| {
                let wv = t.leaf(wc.clone(), false);
                let y = t.depthwise_conv2d(xv, wv, stride, k / 2)?;
                probe(t, y, seed)
            },
            &x,
            STEP,
        )?,
    );
    push(
        "depthwise d/dw",
        PLAIN_TOLERANCE,
        finite_diff_check(
            move |t, wv| {
                let xv = t.leaf(xc.clone(), false);
                let y = t.depthwise_conv2d(xv, wv, stride, k / 2)?;
                probe(t, y, seed)
            },
            &w,
            STEP,
        )?,
    );

    // batchnorm (train and eval)
    let (_, c, h) = dims(&mut rng);
    let n = 2;
    let x = rand_tensor(&mut rng, &[n, c, h, h]);
    let gamma = Tensor::from_fn(&[c], |_| rng.gen_range(0.5..1.5));
    let beta = rand_tensor(&mut rng, &[c]);
    let (gc, bc, xc) = (gamma.clone(), beta.clone(), x.clone());
    push(
        "batchnorm2d train d/dx",
        BATCHNORM_TOLERANCE,
        finite_diff_check(
            move |t, xv| {
                let g = t.leaf(gc.clone(), false);
                let b = t.leaf(bc.clone(), false);
                let mut stats = RunningStats::new(c);
                let y = t.batchnorm2d(xv, g, b, &mut stats, BnMode::Train)?;
                probe(t, y, seed)
            },
            &x,
            STEP,
        )?,
    );
    let bc2 = beta.clone();
    push(
        "batchnorm2d train d/dgamma",
        BATCHNORM_TOLERANCE,
        finite_diff_check(
            move |t, g| {
                let xv = t.leaf(xc.clone(), false);
                let b = t.leaf(bc2.clone(), false);
                let mut stats = RunningStats::new(c);
                let y = t.batchnorm2d(xv, g, b, &mut stats, BnMode::Train)?;
                probe(t, y, seed)
            },
            &gamma,
            STEP,
        )?,
    );
    let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
    push(
        "batchnorm2d eval d/dx",
        BATCHNORM_TOLERANCE,
        finite_diff_check(
            move |t, xv| {
                let g = t.leaf(gamma.clone(), false);
                let b = t.leaf(beta.clone(), false);
                let mut stats = RunningStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                let y = t.batchnorm2d(xv, g, b, &mut stats, BnMode::Eval)?;
                probe(t, y, seed)
            },
            &x,
            STEP,
        )?,
    );

    // elementwise activations
    let (n, c, h) = dims(&mut rng);
    let x = rand_tensor(&mut rng, &[n, c, h, h]);
    push("relu", PLAIN_TOLERANCE, finite_diff_check(|t, v| { let y = t.relu(v)?; probe(t, y, seed) }, &x, STEP)?);
    push("sigmoid", PLAIN_TOLERANCE, finite_diff_check(|t, v| { let y = t.sigmoid(v)?; probe(t, y, seed) }, &x, STEP)?);
    push("silu", PLAIN_TOLERANCE, finite_diff_check(|t, v| { let y = t.silu(v)?; probe(t, y, seed) }, &x, STEP)?);
    push(
        "global_avg_pool",
        PLAIN_TOLERANCE,
        finite_diff_check(|t, v| { let y = t.global_avg_pool(v)?; probe(t, y, seed) }, &x, STEP)?,
    );
    let flat = n * c * h * h;
    push(
        "reshape",
        PLAIN_TOLERANCE,
        finite_diff_check(move |t, v| { let y = t.reshape(v, &[1, flat])?; probe(t, y, seed) }, &x, STEP)?,
    );
    let factor = rng.gen_range(-2.0..2.0);
    push(
        "scale",
        PLAIN_TOLERANCE,
        finite_diff_check(move |t, v| { let y = t.scale(v, factor)?; probe(t, y, seed) }, &x, STEP)?,
    );
    push("sum", PLAIN_TOLERANCE, finite_diff_check(|t, v| t.sum(v), &x, STEP)?);

    // broadcast add / mul against a per-channel tensor
    let gate = rand_tensor(&mut rng, &[n, c, 1, 1]);
    let (g1, g2, x1, x2) = (gate.clone(), gate.clone(), x.clone(), x.clone());
    push(
        "add d/dx",
        PLAIN_TOLERANCE,
        finite_diff_check(move |t, v| { let g = t.leaf(g1.clone(), false); let y = t.add(v, g)?; probe(t, y, seed) }, &x, STEP)?,
    );
    push(
        "add d/dbroadcast",
        PLAIN_TOLERANCE,
        finite_diff_check(move |t, g| { let xv = t.leaf(x1.clone(), false); let y = t.add(xv, g)?; probe(t, y, seed) }, &gate, STEP)?,
    );
    push(
        "mul d/dx",
        PLAIN_TOLERANCE,
        finite_diff_check(move |t, v| { let g = t.leaf(g2.clone(), false); let y = t.mul(v, g)?; probe(t, y, seed) }, &x, STEP)?,
    );
    push(
        "mul d/dbroadcast",
        PLAIN_TOLERANCE,
        finite_diff_check(move |t, g| { let xv = t.leaf(x2.clone(), false); let y = t.mul(xv, g)?; probe(t, y, seed) }, &gate, STEP)?,
    );

    // dense
    let n = rng.gen_range(1..=3);
    let f = rng.gen_range(1..=5);
    let g = rng.gen_range(1..=4);
    let x = rand_tensor(&mut rng, &[n, f]);
    let w = rand_tensor(&mut rng, &[g, f]);
    let b = rand_tensor(&mut rng, &[g]);
    let (wc, bc, xc, xc2, wc2) = (w.clone(), b.clone(), x.clone(), x.clone(), w.clone());
    let bc2 = b.clone();
    push(
        "dense d/dx",
        PLAIN_TOLERANCE,
        finite_diff_check(
            move |t, v| {
                let wv = t.leaf(wc.clone(), false);
                let bv = t.leaf(bc.clone(), false);
                let y = t.dense(v, wv, Some(bv))?;
                probe(t, y, seed)
            },
            &x,
            STEP,
        )?,
    );
    push(
        "dense d/dw",
        PLAIN_TOLERANCE,
        finite_diff_check(
            move |t, wv| {
                let xv = t.leaf(xc.clone(), false);
                let bv = t.leaf(bc2.clone(), false);
                let y = t.dense(xv, wv, Some(bv))?;
                probe(t, y, seed)
            },
            &w,
            STEP,
        )?,
    );
    push(
        "dense d/db",
        PLAIN_TOLERANCE,
        finite_diff_check(
            move |t, bv| {
                let xv = t.leaf(xc2.clone(), false);
                let wv = t.leaf(wc2.clone(), false);
                let y = t.dense(xv, wv, Some(bv))?;
                probe(t, y, seed)
            },
            &b,
            STEP,
        )?,
    );

    // softmax cross-entropy
    let n = rng.gen_range(1..=4);
    let k = rng.gen_range(2..=5);
    let logits = rand_tensor(&mut rng, &[n, k]);
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    push(
        "softmax_cross_entropy",
        PLAIN_TOLERANCE,
        finite_diff_check(move |t, v| Ok(t.softmax_cross_entropy(v, &labels)?.0), &logits, STEP)?,
    );

    // full MBConv block (expand, depthwise, SE, project, skip) in train mode
    let cin = rng.gen_range(2..=3);
    let mut store: ParamStore<f64> = ParamStore::new();
    let block = MbConvBlock::new(&mut store, "blk", cin, cin, 2, 3, 1, &mut rng)?;
    let x = rand_tensor(&mut rng, &[2, cin, 4, 4]);
    let (s1, b1) = (store.clone(), block.clone());
    push(
        "mbconv block d/dx",
        BATCHNORM_TOLERANCE,
        finite_diff_check(
            move |t, v| {
                let mut s = s1.clone();
                let bound = s.bind(t, false);
                let y = b1.forward(t, &bound, &mut s, v, BnMode::Train)?;
                probe(t, y, seed)
            },
            &x,
            STEP,
        )?,
    );
    let expand_w = block.expand.as_ref().expect("expansion 2 has an expand conv").weight;
    let w0 = store.get(expand_w).clone();
    push(
        "mbconv block d/dexpand",
        BATCHNORM_TOLERANCE,
        finite_diff_check(
            move |t, wv| {
                let mut s = store.clone();
                let mut bound = s.bind(t, false);
                bound.replace(expand_w, wv);
                let xv = t.leaf(x.clone(), false);
                let y = block.forward(t, &bound, &mut s, xv, BnMode::Train)?;
                probe(t, y, seed)
            },
            &w0,
            STEP,
        )?,
    );
    Ok(out)
}
