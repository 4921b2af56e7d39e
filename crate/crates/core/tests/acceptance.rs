//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero when
//! any criterion fails.

use std::process::Command;
use std::time::Instant;

use epilab::competitor::{
    build_competitor, error_ledger, gradient_flow, run_ensemble, verify_epi, Case, EpiParams, FlowTrajectory,
};
use epilab::decay::{fit_rate, integrate_excess, DecayParams};
use epilab::functional::{
    area_cone, area_sigma, first_variation, second_variation_assemble, second_variation_at, NormalField,
    RadialField, FIRST_VARIATION_STEP,
};
use epilab::geometry::{build_cross_section, verify_stationarity, ConeFamily, ConeSpec, CrossSection};
use epilab::reduction::{
    integrability_test, lojasiewicz_fit, upsilon_exponent, Quartic, ReducedFunction, ReducedMap, Saddle, Verdict,
};
use epilab::sampler::{sample, sample_one, NormKind, TraceClass, TraceEnsembleSpec};
use epilab::spectral::{eigendecompose, SpectralBasis};

fn families() -> Vec<ConeFamily> {
    vec![
        ConeFamily::Plane { n: 2, k: 1 },
        ConeFamily::Plane { n: 3, k: 1 },
        ConeFamily::Plane { n: 2, k: 2 },
        ConeFamily::CliffordTorus,
        ConeFamily::SphereProduct { p: 1, q: 2 },
        ConeFamily::SphereProduct { p: 2, q: 2 },
    ]
}

fn setup(fam: ConeFamily, res: usize) -> (CrossSection, SpectralBasis) {
    let cs = build_cross_section(&ConeSpec::with_resolution(fam, res)).expect("cross-section");
    let b = eigendecompose(&second_variation_assemble(&cs), &cs);
    (cs, b)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Ratio test with an explicit round-off floor.
fn improves(coarse: f64, fine: f64, factor: f64, floor: f64) -> (bool, &'static str) {
    if fine * factor <= coarse {
        (true, "ratio")
    } else if coarse <= floor && fine <= floor {
        (true, "floor")
    } else {
        (false, "none")
    }
}

fn spectrum_oracle() -> Outcome {
    let (_, b) = setup(ConeFamily::CliffordTorus, 16);
    let mut expected = Vec::new();
    for k in 0..=4i32 {
        for m in 0..=4i32 {
            if k * k + m * m <= 16 {
                let mult = if k > 0 { 2 } else { 1 } * if m > 0 { 2 } else { 1 };
                for _ in 0..mult {
                    expected.push(2.0 * (k * k + m * m) as f64 - 4.0);
                }
            }
        }
    }
    expected.sort_by(f64::total_cmp);
    let top = expected[expected.len() - 1] + 1.0;
    let got: Vec<f64> = b.eigenvalues.iter().copied().filter(|&l| l <= top).collect();
    let err = if got.len() == expected.len() {
        got.iter().zip(&expected).map(|(a, e)| (a - e).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let mut ok = err <= 1e-8 && b.ell() == 4;
    let mut dims = Vec::new();
    for (n, k) in [(2, 1), (3, 1), (2, 2)] {
        let fam = ConeFamily::Plane { n, k };
        let (_, pb) = setup(fam, fam.reference_resolution());
        ok &= pb.ell() == n * k;
        dims.push(format!("{fam} {}", pb.ell()));
    }
    outcome(
        ok,
        format!("{} Clifford modes, max error {err:.2e}, kernel {}; {}", expected.len(), b.ell(), dims.join(", ")),
    )
}

fn stationarity() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for fam in families() {
        let r0 = fam.reference_resolution();
        let coarse = build_cross_section(&ConeSpec::with_resolution(fam, r0)).unwrap();
        let fine = build_cross_section(&ConeSpec::with_resolution(fam, 2 * r0)).unwrap();
        let a = verify_stationarity(&coarse, 1e-6);
        let f = verify_stationarity(&fine, 1e-6);
        let floor = 4.0 * f64::EPSILON * coarse.area() / FIRST_VARIATION_STEP;
        let (halves, how) = improves(a.residual, f.residual, 2.0, floor);
        let zero = NormalField::zeros(&coarse);
        let probe = NormalField::constant(&coarse, &vec![1.0; coarse.codim]);
        let exact = first_variation(&coarse, &zero, &probe).unwrap().analytic.abs() / probe.norms(&coarse).h1;
        ok &= a.pass && halves;
        parts.push(format!("{fam} {:.1e}->{:.1e} ({how}, exact {exact:.0e})", a.residual, f.residual));
    }
    outcome(ok, parts.join("; "))
}

fn slicing() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for fam in families() {
        let (cs, b) = setup(fam, fam.reference_resolution());
        let n = cs.cone_dim() as f64;
        let spec = TraceEnsembleSpec::new(11, 50, 0.1);
        let mut worst: f64 = 0.0;
        for c in sample(&spec, &b, &cs).unwrap() {
            let az = area_sigma(&cs, &c).unwrap() / n;
            let ac = area_cone(&cs, &RadialField::constant(&c, 32)).unwrap();
            worst = worst.max((ac - az).abs());
        }
        ok &= worst <= 1e-6;
        parts.push(format!("{fam} {worst:.1e}"));
    }
    outcome(ok, format!("max |A_C - A_S/n|: {}", parts.join(", ")))
}

fn hessian() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for fam in families() {
        let (cs, b) = setup(fam, fam.reference_resolution());
        let mut spec = TraceEnsembleSpec::new(21, 20, 1.0);
        spec.norm = NormKind::H1;
        let zero = NormalField::zeros(&cs);
        let mut worst: f64 = 0.0;
        for i in 0..20 {
            let z = sample_one(&spec, &b, &cs, i).unwrap();
            let a = b.coefficients(&cs, &z);
            let q = b.quadratic_form(&a);
            let fd = second_variation_at(&cs, &zero, &z).unwrap().value;
            worst = worst.max((q - fd).abs() / q.abs().max(1e-12));
        }
        ok &= worst <= 1e-4;
        parts.push(format!("{fam} {worst:.1e}"));
    }
    outcome(ok, format!("max relative gap: {}", parts.join(", ")))
}

fn lyapunov_schmidt() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let radii = [0.005, 0.01, 0.02, 0.04, 0.05];
    for fam in families() {
        let (cs, b) = setup(fam, fam.reference_resolution());
        let rm = ReducedMap::new(&cs, &b);
        let at0 = rm.solve_upsilon(&vec![0.0; rm.ell()]).unwrap();
        let u0 = at0.coeffs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut dir = vec![0.0; rm.ell()];
        dir[0] = 1.0;
        dir[rm.ell() - 1] += 0.5;
        let (slope, norms) = upsilon_exponent(&rm, &dir, &radii).unwrap();
        let resid = rm.max_cached_residual();
        let identically_zero = norms.iter().all(|&x| x <= 1e-13);
        let exp_ok = identically_zero || slope >= 1.9;
        ok &= u0 <= 1e-12 && resid <= 1e-9 && exp_ok;
        let exp = if identically_zero { "Upsilon = 0".to_string() } else { format!("exponent {slope:.3}") };
        parts.push(format!("{fam} |U(0)| {u0:.0e}, {exp}, residual {resid:.0e}"));
    }
    outcome(ok, parts.join("; "))
}

fn integrability() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for fam in [
        ConeFamily::Plane { n: 2, k: 1 },
        ConeFamily::Plane { n: 3, k: 1 },
        ConeFamily::Plane { n: 2, k: 2 },
        ConeFamily::CliffordTorus,
    ] {
        let r0 = fam.reference_resolution();
        let mut vals = Vec::new();
        let mut verdicts = Vec::new();
        let mut area = 0.0;
        for res in [r0 / 2, r0] {
            let (cs, b) = setup(fam, res);
            area = cs.area();
            let rm = ReducedMap::new(&cs, &b);
            let rep = integrability_test(&rm, 0.03, 48, 1e-7, 5).unwrap();
            vals.push(rep.max_abs_value);
            verdicts.push(rep.verdict);
        }
        let floor = 100.0 * f64::EPSILON * area;
        let (dec, how) = improves(vals[0], vals[1], 4.0, floor);
        ok &= verdicts[1] == Verdict::Integrable && vals[1] <= 1e-7 && dec;
        parts.push(format!("{fam} {:?} {:.1e}->{:.1e} ({how})", verdicts[1], vals[0], vals[1]));
    }
    let q = Quartic { dim: 2, radius: 0.05 };
    let rep = integrability_test(&q, 0.03, 48, 1e-7, 5).unwrap();
    let fit = lojasiewicz_fit(&q, 0.03, 16, 1e-7, 5).unwrap();
    ok &= rep.verdict == Verdict::NonIntegrable && fit.gamma == 0.25;
    parts.push(format!("quartic {:?} gamma_loj {}", rep.verdict, fit.gamma));
    outcome(ok, parts.join("; "))
}

fn epiperimetric() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let params = EpiParams::default();
    for fam in families() {
        let t = Instant::now();
        let (cs, b) = setup(fam, fam.reference_resolution());
        let rm = ReducedMap::new(&cs, &b);
        let mut spec = TraceEnsembleSpec::new(7, 500, params.delta);
        spec.class = TraceClass::NonNegative;
        let (_, s) = run_ensemble(&cs, &b, &rm, &spec, &params, 0.0).unwrap();
        let min = s.min_eps_achieved.unwrap_or(f64::NAN);
        ok &= s.pass_rate == 1.0 && s.fails == 0 && s.refused == 0 && min > 0.0;
        parts.push(format!(
            "{fam} pass {}/{} min eps {min:.4} calibrated {:?} ({:.0?})",
            s.passes,
            s.count,
            s.calibrated_eps.unwrap_or(f64::NAN),
            t.elapsed()
        ));
    }
    outcome(ok, format!("gamma 0, delta {}: {}", params.delta, parts.join("; ")))
}

fn flow_ok(traj: &FlowTrajectory) -> bool {
    let gmax = traj.gradients.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
    traj.unit_speed_excess() <= 0.0 && traj.max_increase() <= 1e-10 * gmax.max(1e-300)
}

fn flows() -> Outcome {
    let mut ok = true;
    let mut count = 0;
    let q = Quartic { dim: 2, radius: 0.05 };
    let traj = gradient_flow(&q, &[0.04, 0.0], 0.035, 1e-12, &[0.01, 0.02, 0.03]);
    let analytic = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, s)| ((s[0] * s[0] + s[1] * s[1]).sqrt() - (0.04 - t)).abs())
        .fold(0.0, f64::max);
    ok &= analytic <= 1e-6 && flow_ok(&traj);
    count += 1;
    let q4 = Quartic { dim: 4, radius: 0.05 };
    let s = Saddle { radius: 0.05 };
    let starts: [(&dyn ReducedFunction, Vec<f64>); 4] = [
        (&q4, vec![0.01, -0.02, 0.005, 0.0]),
        (&q4, vec![0.0, 0.0, 0.0, 0.03]),
        (&s, vec![0.01, 0.004]),
        (&s, vec![-0.02, 0.0]),
    ];
    for (rf, mu0) in starts.iter() {
        let t = gradient_flow(*rf, mu0, 0.01, 1e-12, &[0.0025, 0.005]);
        ok &= flow_ok(&t);
        count += 1;
    }
    let (cs, b) = setup(ConeFamily::CliffordTorus, 16);
    let rm = ReducedMap::new(&cs, &b);
    let t = gradient_flow(&rm, &[0.01, 0.0, 0.005, 0.0], 0.005, 1e-12, &[]);
    ok &= flow_ok(&t);
    count += 1;
    outcome(ok, format!("{count} trajectories unit-speed and monotone; quartic radial error {analytic:.1e}"))
}

fn decay() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for g in [0.25, 0.5] {
        let p = DecayParams { gamma: g, c_am: 0.0, ..DecayParams::default() };
        let t = integrate_excess(&p).unwrap();
        let rel = t.max_rel_closed_form;
        let f = fit_rate(&DecayParams { gamma: g, ..DecayParams::default() }).unwrap();
        ok &= rel <= 1e-6 && f.rel_error <= 0.02 && t.m_violation <= 0.0;
        parts.push(format!("gamma {g}: closed form {rel:.1e}, log rate {:.4} vs {:.4}", f.fitted, f.target));
    }
    let f0 = fit_rate(&DecayParams { gamma: 0.0, ..DecayParams::default() }).unwrap();
    ok &= f0.rel_error <= 0.02;
    parts.push(format!("gamma 0: power {:.6} vs {:.6}", f0.fitted, f0.target));
    outcome(ok, parts.join("; "))
}

fn ledger_signs() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let params = EpiParams::default();
    for fam in families() {
        let (cs, b) = setup(fam, fam.reference_resolution());
        let rm = ReducedMap::new(&cs, &b);
        let mut spec = TraceEnsembleSpec::new(13, 50, params.delta);
        spec.class = TraceClass::PurePositive;
        let mut checked = 0;
        let mut worst_perp = f64::NEG_INFINITY;
        for i in 0..spec.count {
            let c = sample_one(&spec, &b, &cs, i).unwrap();
            let rep = verify_epi(&cs, &b, &rm, &c, &params, 0.0);
            if rep.a_z <= 1e-10 {
                continue;
            }
            let comp = build_competitor(&cs, &b, &rm, &c, &params, 0.0).unwrap();
            let led = error_ledger(&cs, &rm, &comp, &c, &params).unwrap();
            ok &= led.e_perp < 0.0 && rep.a_h < rep.a_z;
            worst_perp = worst_perp.max(led.e_perp);
            checked += 1;
        }
        parts.push(format!("{fam} {checked} traces, max E_perp {worst_perp:.1e}"));
    }
    let (cs, b) = setup(ConeFamily::CliffordTorus, 16);
    let q = Quartic { dim: 4, radius: 0.05 };
    let mut c_t = Vec::new();
    for (k, m) in [(0, 0.005), (1, 0.01), (2, 0.015), (3, 0.01)] {
        let mut co = vec![0.0; b.len()];
        co[b.kernel[k]] = m;
        co[b.kernel[(k + 1) % 4]] = m / 3.0;
        co[b.positive[0]] = 1e-6;
        let c = b.synthesize(&co);
        let comp = build_competitor(&cs, &b, &q, &c, &params, 0.25).unwrap();
        let led = error_ledger(&cs, &q, &comp, &c, &params).unwrap();
        let ct = led.c_t.unwrap_or(f64::NAN);
        ok &= comp.case == Case::Flow && ct > 0.0;
        c_t.push(format!("{ct:.4}"));
    }
    parts.push(format!("case-2 fixture c_T [{}]", c_t.join(", ")));
    outcome(ok, parts.join("; "))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_epilab");
    let mut files = Vec::new();
    for jobs in ["1", "4", "4"] {
        let out = dir.path().join(format!("run{}", files.len()));
        let status = Command::new(bin)
            .args(["epi-check", "--cone", "clifford", "--seed", "42", "--ensemble-size", "60", "--no-timestamp"])
            .args(["--jobs", jobs, "--out"])
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(false, format!("epi-check exited with {:?}", status.status.code()));
        }
        let read = |n: &str| std::fs::read(out.join(n)).unwrap();
        files.push((read("epi.json"), read("epi_traces.csv")));
    }
    let same = files.windows(2).all(|w| w[0] == w[1]);
    outcome(same, format!("3 runs (--jobs 1, 4, 4), {} + {} bytes, identical: {same}", files[0].0.len(), files[0].1.len()))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        ("spectrum oracle", spectrum_oracle),
        ("stationarity", stationarity),
        ("slicing identity", slicing),
        ("FD-Hessian agreement", hessian),
        ("Lyapunov-Schmidt", lyapunov_schmidt),
        ("integrability", integrability),
        ("epiperimetric inequality", epiperimetric),
        ("flow properties", flows),
        ("decay dichotomy", decay),
        ("error-ledger signs", ledger_signs),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} [{:>2}] {name} ({:.1?}): {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            t.elapsed(),
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
