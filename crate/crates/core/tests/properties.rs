//! Cross-module invariants as property tests.

use delta_lab::expander::{build_dual, cauchy_schwarz_holds, dual_transfer_violations, energy_count, PairSet};
use delta_lab::frostman::{
    cantor_set, dyadic_pigeonhole, uniform_subset_1d, validate_set_1d, CantorPattern, GenSpec, SetKind,
};
use delta_lab::grid::{dyadic_content, q, q_to_f64};
use delta_lab::harness::{generate_instance, run_pipeline, InstanceStyle, PipelineOptions, HYPOTHESIS_CONSTANT};
use delta_lab::incidence::{full_shading, incident};
use delta_lab::{GridSet1D, Scale};
use proptest::prelude::*;

fn sc(m: u32) -> Scale {
    Scale::new(m).unwrap()
}

/// A subset of `[0, 2^m)` from a bit mask, plus a superset of it.
fn nested_sets() -> impl Strategy<Value = (GridSet1D, GridSet1D)> {
    (2u32..=9).prop_flat_map(|m| {
        let n = 1usize << m;
        (Just(m), prop::collection::vec(0u8..4, n))
    })
    .prop_map(|(m, tags)| {
        // tag 0: in both, 1: superset only, else: neither
        let small = tags.iter().enumerate().filter(|(_, &t)| t == 0).map(|(k, _)| k as u32);
        let big = tags.iter().enumerate().filter(|(_, &t)| t <= 1).map(|(k, _)| k as u32);
        (GridSet1D::new(sc(m), small).unwrap(), GridSet1D::new(sc(m), big).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covering_monotone((a, b) in nested_sets(), drop in 0u32..3) {
        let m = a.scale().m();
        let t = sc(m.saturating_sub(drop));
        let coarser = sc(m.saturating_sub(drop + 1));
        prop_assert!(a.covering_number(t).unwrap() <= b.covering_number(t).unwrap());
        prop_assert!(b.covering_number(coarser).unwrap() <= b.covering_number(t).unwrap());
    }

    #[test]
    fn balls_nest((_, b) in nested_sets(), c in 0i128..1024, r1 in 0i128..64, extra in 0i128..64) {
        let side = b.scale().side() as i128;
        let center = q(c % (2 * side + 1), 2 * side);
        let small = b.restrict_to_ball(center, q(r1, side));
        let large = b.restrict_to_ball(center, q(r1 + extra, side));
        prop_assert!(small.cells().iter().all(|&k| large.contains(k)));
    }

    #[test]
    fn content_bounds((a, b) in nested_sets(), s in 0.05f64..1.0, ds in 0.0f64..0.5) {
        let delta = a.scale().delta();
        let ca = dyadic_content(&a, s).value;
        let cb = dyadic_content(&b, s).value;
        prop_assert!(ca >= 0.0 && cb <= 1.0 + 1e-12);
        prop_assert!(ca <= cb + 1e-12);
        prop_assert!(cb <= b.len() as f64 * delta.powf(s) + 1e-12);
        prop_assert!(dyadic_content(&b, (s + ds).min(1.0)).value <= cb + 1e-12);
    }

    #[test]
    fn kt_constant_is_exact((_, b) in nested_sets(), s in 0.0f64..1.0) {
        prop_assume!(!b.is_empty());
        let w = validate_set_1d(&b, SetKind::KatzTao, s);
        let m = b.scale().m();
        let side = b.scale().side() as i64;
        // midpoints in half-delta units
        let pts: Vec<i64> = b.cells().iter().map(|&k| 2 * k as i64 + 1).collect();
        let mut best = 0.0f64;
        for j in 0..=m {
            let r = 2i64 << j;
            for c in 0..=2 * side {
                let count = pts.iter().filter(|&&p| (p - c).abs() <= r).count();
                let bound = w.c * (j as f64 * s).exp2();
                prop_assert!(count as f64 <= bound * (1.0 + 1e-12));
                best = best.max(count as f64 / (j as f64 * s).exp2());
            }
        }
        prop_assert_eq!(best, w.c);
        let ball = w.violating_ball.unwrap();
        let j = (ball.radius / b.scale().delta()).log2().round();
        prop_assert!((ball.count as f64 / (j * s).exp2() - w.c).abs() < 1e-9);
    }

    #[test]
    fn pigeonhole_mass(keys in prop::collection::vec(1u32..5000, 1..200)) {
        let p = dyadic_pigeonhole(&keys, |&k| k as f64).unwrap();
        prop_assert!(p.mass * 2.0 * p.classes as f64 >= p.total_mass);
        prop_assert!(p.items.iter().all(|&k| (k as f64).log2().floor() as i32 == p.exponent));
    }

    #[test]
    fn uniform_subset_certifies(s in 0.3f64..0.9, seed in 0u64..1000, eps in 0.1f64..0.5) {
        let set = GenSpec::Random { m: None, s, seed: Some(seed) }.generate(sc(10), seed).unwrap();
        let (out, cert) = uniform_subset_1d(&set, eps).unwrap();
        prop_assert!(cert.ratio_bound <= cert.tolerance);
        prop_assert!(out.cells().iter().all(|&k| set.contains(k)));
        prop_assert!(out.len() as f64 >= cert.mass_bound - 1e-9);
    }

    #[test]
    fn expander_identities(sa in 0.5f64..1.0, seed in 0u64..500, dens in 0.2f64..1.0) {
        let a = GenSpec::Random { m: None, s: sa, seed: Some(seed) }.generate_upper_half(sc(6), seed).unwrap();
        let b = GenSpec::Random { m: None, s: sa, seed: Some(seed + 1) }.generate_upper_half(sc(6), seed).unwrap();
        let p = PairSet::random_dense(a, b, dens, seed).unwrap();
        prop_assume!(!p.is_empty());
        prop_assert!(cauchy_schwarz_holds(&p));
        prop_assert_eq!(dual_transfer_violations(&p), 0);
        prop_assert!(energy_count(&p) >= p.len() as u64);
        let dual = build_dual(&p).unwrap();
        prop_assert_eq!(dual.total_multiplicity(), dual.a_used.len() * dual.a_used.len());
        for line in &dual.lines {
            let (sl, ic) = (q_to_f64(line.slope), q_to_f64(line.intercept));
            prop_assert!((0.5..=2.0).contains(&sl));
            prop_assert!((-1.5..=1.5).contains(&ic));
        }
        for (&(level, n), tubes) in &dual.buckets {
            for &t in tubes {
                let tube = &dual.tubes[t];
                prop_assert_eq!(tube.level, level);
                prop_assert!(n as usize <= tube.multiplicity && tube.multiplicity < 2 * n as usize);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_instances_meet_hypotheses(seed in 0u64..10_000, s in 0.35f64..0.66, train in any::<bool>()) {
        let style = if train { InstanceStyle::Trainlike } else { InstanceStyle::Random };
        let inst = generate_instance(sc(8), s, style, seed).unwrap();
        prop_assert!(inst.witness.max() <= HYPOTHESIS_CONSTANT);
        prop_assert_eq!(&inst.shading, &full_shading(&inst.tubes, &inst.squares).unwrap());
        for (id, squares) in &inst.shading.entries {
            let tube = inst.tubes.tubes.iter().find(|t| t.id == *id).unwrap();
            for &p in squares {
                prop_assert!(incident(p, inst.scale, tube).unwrap());
            }
        }
        let st = run_pipeline(&inst, PipelineOptions { early_exit: false, ..Default::default() }).unwrap();
        prop_assert_eq!(st.partition_tubes.0, st.partition_tubes.1);
        prop_assert_eq!(st.partition_squares.0, st.partition_squares.1);
        if st.reached_rescaling() {
            prop_assert!(st.delta() / (st.length() * st.length_dual()) <= 1.0);
        }
    }
}

#[test]
fn cantor_cardinality() {
    for (keep, of, m) in [(1, 2, 6), (2, 4, 8), (3, 4, 8), (2, 8, 9), (4, 8, 12)] {
        let set = cantor_set(sc(m), keep, of, CantorPattern::Spread).unwrap();
        let depth = m / (of as f64).log2() as u32;
        assert_eq!(set.len(), (keep as usize).pow(depth), "keep {keep} of {of} at m = {m}");
        let (_, cert) = uniform_subset_1d(&set, 0.3).unwrap();
        assert_eq!(cert.ratio_bound, 1.0);
    }
}
