mod common;

use common::{executed_macs, toy_specs};
use hmgc::effnet::*;
use hmgc::tensorcore::{BnMode, ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_flops_equal_instrumented_counts() {
    for spec in toy_specs() {
        assert_eq!(estimate_flops(&spec).unwrap(), executed_macs(&spec), "{:?}", spec.network.stages);
    }
}

#[test]
fn phi_zero_is_identity_on_reference() {
    let base = NetworkSpec::reference();
    for (a, b, g) in [(2.0, 1.0, 1.0), (1.2, 1.1, 1.15), (1.9, 1.7, 1.3)] {
        let c = ScalingCoefficients::new(a, b, g, 0.0).unwrap();
        let s = apply_compound_scaling(&base, &c, DEFAULT_CHANNEL_DIVISOR).unwrap();
        assert_eq!(s.network, base);
    }
}

#[test]
fn alpha_two_doubles_mbconv_depth() {
    let base = NetworkSpec::reference();
    let c = ScalingCoefficients::new(2.0, 1.0, 1.0, 1.0).unwrap();
    let s = apply_compound_scaling(&base, &c, DEFAULT_CHANNEL_DIVISOR).unwrap();
    assert_eq!(s.stages()[6].layers, 8);
    for (orig, scaled) in base.stages.iter().zip(s.stages()) {
        let expect = match orig.kind {
            StageKind::MbConv { .. } => 2 * orig.layers,
            StageKind::Conv => 1,
        };
        assert_eq!(scaled.layers, expect);
        assert_eq!(scaled.channels, orig.channels);
        assert_eq!(scaled.resolution, orig.resolution);
    }
}

#[test]
fn channel_rounding_ties_up() {
    // 40 · 1.1 = 44 lies midway between 40 and 48
    let base = NetworkSpec::reference();
    let c = ScalingCoefficients::new(1.0, 1.1, 1.0, 1.0).unwrap();
    let s = apply_compound_scaling(&base, &c, 8).unwrap();
    assert_eq!(s.stages()[3].channels, 48);
    assert_eq!(round_to_divisor(44.0, 8), 48);
    assert_eq!(round_to_divisor(43.9, 8), 40);
    assert_eq!(round_to_divisor(0.2, 8), 8);
}

#[test]
fn zero_divisor_is_rejected() {
    let c = ScalingCoefficients::new(1.0, 1.0, 1.0, 1.0).unwrap();
    assert!(apply_compound_scaling(&NetworkSpec::reference(), &c, 0).is_err());
}

#[test]
fn nano_profile_shape() {
    let s = nano_spec(16).unwrap();
    let channels: Vec<usize> = s.stages().iter().map(|st| st.channels).collect();
    let layers: Vec<usize> = s.stages().iter().map(|st| st.layers).collect();
    assert_eq!(channels, [24, 16, 16, 32, 64, 88, 144, 240, 960]);
    assert_eq!(layers, [1, 1, 1, 1, 2, 2, 2, 1, 1]);
    let scaled = apply_compound_scaling(&NetworkSpec::reference(), &ScalingCoefficients::nano(), 8).unwrap();
    assert_eq!(scaled.input_resolution(), 148);
}

#[test]
fn backbone_forward_shapes() {
    let spec = nano_spec(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store: ParamStore<f32> = ParamStore::new();
    let net = build_backbone(&spec, &mut store, &mut rng).unwrap();
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_fn(&[2, 1, 32, 32], |i| (i % 7) as f32 / 7.0), false);
    let bound = store.bind(&mut tape, false);
    let f = net.forward(&mut tape, &bound, &mut store, x, BnMode::Train).unwrap();
    assert_eq!(tape.value(f).shape(), &[2, 960]);
    assert!(tape.value(f).all_finite());

    let reference = ScaledSpec::unscaled(NetworkSpec::reference()).unwrap();
    assert_eq!(reference.feature_width(), 1280);
}

#[test]
fn backbone_rejects_tiny_inputs() {
    let spec = nano_spec(6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store: ParamStore<f32> = ParamStore::new();
    assert!(build_backbone(&spec, &mut store, &mut rng).is_err());
}

#[test]
fn zeroed_block_is_pure_skip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store: ParamStore<f64> = ParamStore::new();
    let block = MbConvBlock::new(&mut store, "b", 4, 4, 6, 3, 1, &mut rng).unwrap();
    assert!(block.skip);
    for (_, t) in store.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut tape = Tape::new();
    let input = Tensor::from_fn(&[2, 4, 5, 5], |i| (i as f64 * 0.37).sin());
    let x = tape.leaf(input.clone(), false);
    let bound = store.bind(&mut tape, false);
    let y = block.forward(&mut tape, &bound, &mut store, x, BnMode::Train).unwrap();
    assert_eq!(tape.value(y).data(), input.data());
}

#[test]
fn constraint_examples() {
    let c = |a, b, g| ScalingCoefficients::new(a, b, g, 1.0).unwrap();
    assert!(check_constraint(&c(2.0, 1.0, 1.0), 0.1));
    assert!(check_constraint(&c(1.0, 2f64.sqrt(), 1.0), 0.1));
    assert!(!check_constraint(&c(1.0, 1.0, 1.0), 0.1));
    assert!(ScalingCoefficients::new(0.9, 1.0, 1.0, 1.0).is_err());
}

#[test]
fn grid_search_examples() {
    let base = NetworkSpec::reference();
    let picked = grid_search_coefficients(&base, &[(2.0, 1.0, 1.0), (1.0, 1.0, 1.0)], 8, |_| 0.0, 0.1).unwrap();
    assert_eq!((picked.alpha, picked.beta, picked.gamma), (2.0, 1.0, 1.0));

    let grid = coefficient_grid(0.1);
    let picked = grid_search_coefficients(&base, &grid, 8, |s| -(estimate_flops(s).unwrap() as f64), 0.1).unwrap();
    let cheapest = grid
        .iter()
        .filter_map(|&(a, b, g)| {
            let c = ScalingCoefficients::new(a, b, g, 1.0).unwrap();
            check_constraint(&c, 0.1).then(|| estimate_flops(&apply_compound_scaling(&base, &c, 8).unwrap()).unwrap())
        })
        .min()
        .unwrap();
    let got = estimate_flops(&apply_compound_scaling(&base, &picked, 8).unwrap()).unwrap();
    assert_eq!(got, cheapest);

    assert!(matches!(
        grid_search_coefficients(&base, &[(1.0, 1.0, 1.0)], 8, |_| 0.0, 0.1),
        Err(hmgc::Error::NoFeasibleCoefficients)
    ));
}

#[test]
fn spec_documents_round_trip() {
    let s = nano_spec(16).unwrap();
    assert_eq!(ScaledSpec::parse(&s.to_document()).unwrap(), s);
    let n = NetworkSpec::reference();
    assert_eq!(NetworkSpec::parse(&n.to_document()).unwrap(), n);
}

#[test]
fn audit_table_lists_every_stage() {
    let table = audit_table(&ScaledSpec::unscaled(NetworkSpec::reference()).unwrap()).unwrap();
    assert_eq!(table.lines().count(), 1 + 9 + 1 + 1);
    assert!(table.contains("MBConv6"));
}

proptest! {
    #[test]
    fn phi_zero_identity_any_coefficients(a in 1.0f64..3.0, b in 1.0f64..3.0, g in 1.0f64..3.0, d in 1usize..17) {
        let base = NetworkSpec::reference();
        let c = ScalingCoefficients::new(a, b, g, 0.0).unwrap();
        let s = apply_compound_scaling(&base, &c, d).unwrap();
        for (o, n) in base.stages.iter().zip(s.stages()) {
            prop_assert_eq!(n.layers, o.layers);
            prop_assert_eq!(n.resolution, o.resolution);
            prop_assert_eq!(n.channels, round_to_divisor(o.channels as f64, d));
        }
    }

    #[test]
    fn scaling_is_monotone_in_phi(a in 1.0f64..2.0, b in 1.0f64..2.0, g in 1.0f64..2.0, p1 in 0.0f64..3.0, dp in 0.0f64..2.0) {
        let base = NetworkSpec::reference();
        let s1 = apply_compound_scaling(&base, &ScalingCoefficients::new(a, b, g, p1).unwrap(), 8).unwrap();
        let s2 = apply_compound_scaling(&base, &ScalingCoefficients::new(a, b, g, p1 + dp).unwrap(), 8).unwrap();
        prop_assert!(s2.input_resolution() >= s1.input_resolution());
        for (x, y) in s1.stages().iter().zip(s2.stages()) {
            prop_assert!(y.layers >= x.layers);
            prop_assert!(y.channels >= x.channels);
            prop_assert!(y.resolution >= x.resolution);
        }
        prop_assert!(estimate_flops(&s2).unwrap() >= estimate_flops(&s1).unwrap());
    }

    #[test]
    fn scaled_invariants_hold(a in 1.0f64..2.0, b in 1.0f64..2.0, g in 1.0f64..2.0, phi in -4.0f64..3.0, d in 1usize..17) {
        let s = apply_compound_scaling(&NetworkSpec::reference(), &ScalingCoefficients::new(a, b, g, phi).unwrap(), d).unwrap();
        prop_assert!(s.input_resolution().is_multiple_of(2));
        for st in s.stages() {
            prop_assert!(st.layers >= 1);
            prop_assert!(st.channels >= d && st.channels % d == 0);
        }
        s.network.validate().unwrap();
    }
}
