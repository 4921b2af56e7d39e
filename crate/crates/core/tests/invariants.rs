use std::sync::OnceLock;

use approx::assert_relative_eq;
use proptest::prelude::*;

use epilab::competitor::{build_competitor, gradient_flow, verify_epi, EpiParams, Outcome};
use epilab::decay::{integrate_excess, DecayParams};
use epilab::functional::{area_cone, area_sigma, second_variation_assemble, NormalField, RadialField};
use epilab::geometry::{build_cross_section, ConeFamily, ConeSpec, CrossSection};
use epilab::reduction::{Quartic, ReducedMap, Saddle};
use epilab::sampler::{sample, sample_one, NormKind, TraceClass, TraceEnsembleSpec};
use epilab::spectral::{eigendecompose, ModeClass, SpectralBasis};

fn clifford() -> &'static (CrossSection, SpectralBasis) {
    static CELL: OnceLock<(CrossSection, SpectralBasis)> = OnceLock::new();
    CELL.get_or_init(|| {
        let cs = build_cross_section(&ConeSpec::with_resolution(ConeFamily::CliffordTorus, 16)).unwrap();
        let b = eigendecompose(&second_variation_assemble(&cs), &cs);
        (cs, b)
    })
}

fn class_strategy() -> impl Strategy<Value = TraceClass> {
    prop_oneof![
        Just(TraceClass::PureKernel),
        Just(TraceClass::PurePositive),
        Just(TraceClass::PureNegative),
        Just(TraceClass::NonNegative),
        Just(TraceClass::Mixed),
    ]
}

fn lagrange_at(nodes: &[f64], values: &[&[f64]], x: f64) -> Vec<f64> {
    let mut out = vec![0.0; values[0].len()];
    for (i, &xi) in nodes.iter().enumerate() {
        let w: f64 = nodes.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &xj)| (x - xj) / (xi - xj)).product();
        for (o, v) in out.iter_mut().zip(values[i]) {
            *o += w * v;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampling_is_pure_and_scaled(seed in any::<u64>(), index in 0usize..40, target in 1e-3f64..0.2, class in class_strategy()) {
        let (cs, b) = clifford();
        let mut spec = TraceEnsembleSpec::new(seed, 40, target);
        spec.class = class;
        let a = sample_one(&spec, b, cs, index).unwrap();
        let again = sample_one(&spec, b, cs, index).unwrap();
        prop_assert_eq!(a.values(), again.values());
        let batch = sample(&spec, b, cs).unwrap();
        prop_assert_eq!(batch[index].values(), a.values());
        assert_relative_eq!(a.norms(cs).c1_alpha, target, max_relative = 1e-12);
        let coeffs = b.coefficients(cs, &a);
        for (j, x) in coeffs.iter().enumerate() {
            let admitted = match class {
                TraceClass::Mixed => true,
                TraceClass::PureKernel => b.classes[j] == ModeClass::Kernel,
                TraceClass::PurePositive => b.classes[j] == ModeClass::Positive,
                TraceClass::PureNegative => b.classes[j] == ModeClass::Negative,
                TraceClass::NonNegative => b.classes[j] != ModeClass::Negative,
            };
            if !admitted {
                prop_assert!(x.abs() <= 1e-12 * target);
            }
        }
    }

    #[test]
    fn h1_targets_are_exact(seed in any::<u64>(), target in 1e-3f64..1.0) {
        let (cs, b) = clifford();
        let mut spec = TraceEnsembleSpec::new(seed, 1, target);
        spec.norm = NormKind::H1;
        let a = sample_one(&spec, b, cs, 0).unwrap();
        assert_relative_eq!(b.h1_sq(&b.coefficients(cs, &a)).sqrt(), target, max_relative = 1e-9);
    }

    #[test]
    fn basis_round_trip(seed in any::<u64>()) {
        let (cs, b) = clifford();
        let c = sample_one(&TraceEnsembleSpec::new(seed, 1, 0.1), b, cs, 0).unwrap();
        let back = b.synthesize(&b.coefficients(cs, &c));
        let err = c.sub(&back).max_abs();
        prop_assert!(err <= 1e-12, "round trip error {}", err);
    }

    #[test]
    fn homogeneous_slicing(seed in any::<u64>(), target in 1e-3f64..0.1) {
        let (cs, b) = clifford();
        let c = sample_one(&TraceEnsembleSpec::new(seed, 1, target), b, cs, 0).unwrap();
        let az = area_sigma(cs, &c).unwrap() / cs.cone_dim() as f64;
        let ac = area_cone(cs, &RadialField::constant(&c, 16)).unwrap();
        prop_assert!((az - ac).abs() <= 1e-12);
    }

    #[test]
    fn competitor_keeps_the_trace(seed in any::<u64>(), index in 0usize..8) {
        let (cs, b) = clifford();
        let rm = ReducedMap::new(cs, b);
        let mut spec = TraceEnsembleSpec::new(seed, 8, 0.02);
        spec.class = TraceClass::NonNegative;
        let c = sample_one(&spec, b, cs, index).unwrap();
        let params = EpiParams::default();
        let comp = build_competitor(cs, b, &rm, &c, &params, 0.0).unwrap();
        let slices: Vec<&[f64]> = comp.h.slices.iter().map(NormalField::values).collect();
        let at_one = lagrange_at(&comp.h.radii, &slices, 1.0);
        let err = at_one.iter().zip(c.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-8 * c.max_abs(), "trace error {}", err);
        let rep = verify_epi(cs, b, &rm, &c, &params, 0.0);
        prop_assert!(rep.pass);
        prop_assert!(rep.outcome != Outcome::Refused);
    }

    #[test]
    fn quartic_flow_is_unit_speed_and_monotone(x in -0.03f64..0.03, y in -0.03f64..0.03, t in 1e-3f64..0.02) {
        prop_assume!(x.hypot(y) > 1e-3);
        let q = Quartic { dim: 2, radius: 0.05 };
        let traj = gradient_flow(&q, &[x, y], t, 1e-12, &[t / 2.0]);
        prop_assert!(traj.unit_speed_excess() <= 0.0);
        prop_assert!(traj.max_increase() <= 1e-14);
        let r_end = traj.states.last().unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
        let expect = (x.hypot(y) - t).max(0.0);
        prop_assert!((r_end - expect).abs() <= 1e-6 || r_end < 1e-3);
    }

    #[test]
    fn saddle_flow_descends(x in -0.04f64..0.04, y in -0.04f64..0.04) {
        let s = Saddle { radius: 0.05 };
        let traj = gradient_flow(&s, &[x, y], 0.005, 1e-12, &[]);
        prop_assert!(traj.unit_speed_excess() <= 0.0);
        prop_assert!(traj.max_increase() <= 1e-14);
    }

    #[test]
    fn decay_monitor_is_monotone(gamma in 0.0f64..0.9, eps in 0.02f64..0.2, e0 in 1e-3f64..1.0, c_am in 0.0f64..0.05) {
        let p = DecayParams { gamma, eps, e0, c_am, levels: 6, ..DecayParams::default() };
        let t = integrate_excess(&p).unwrap();
        prop_assert!(t.m_violation <= 0.0);
        prop_assert!(t.e.iter().zip(&t.e_tilde).all(|(e, et)| *e >= 0.0 && e <= et));
        prop_assert!(t.e_tilde.windows(2).all(|w| w[1] <= w[0]));
        if c_am == 0.0 {
            prop_assert!(t.bound_holds);
        }
    }

    #[test]
    fn epi_params_reject_out_of_range(eps in 0.25f64..2.0, gamma in 1.0f64..3.0) {
        let bad_eps = EpiParams { eps, ..EpiParams::default() };
        prop_assert!(bad_eps.validate().is_err());
        let bad_gamma = EpiParams { gamma: Some(gamma), ..EpiParams::default() };
        prop_assert!(bad_gamma.validate().is_err());
        prop_assert!(EpiParams::default().validate().is_ok());
    }
}
