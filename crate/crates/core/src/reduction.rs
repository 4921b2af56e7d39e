//! Lyapunov–Schmidt reduction onto the Jacobi kernel, the reduced area
//! A(mu), integrability and Łojasiewicz fits.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{area_gradient, area_sigma, NormalField};
use crate::geometry::{dot, CrossSection};
use crate::spectral::{ModeClass, SpectralBasis};

pub const DEFAULT_RHO_K: f64 = 0.05;
pub const DEFAULT_NEWTON_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 50;
pub const GRADIENT_CHECK_TOL: f64 = 1e-4;
pub const GRADIENT_FD_STEP: f64 = 1e-4;
pub const INTEGRABILITY_TOL: f64 = 1e-7;
/// gamma grid of the Łojasiewicz fit: 0.05, 0.10, ..., 0.50.
pub const GAMMA_GRID: [f64; 10] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50];
/// Minimal log-log slope still counted as bounded.
pub const BOUNDED_SLOPE: f64 = -0.02;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpsilonSolution {
    pub mu: Vec<f64>,
    /// Coefficients in the eigenbasis; zero on the kernel.
    pub coeffs: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Newton solver state for Upsilon: K -> K-perp.
pub struct ReducedMap<'a> {
    pub cs: &'a CrossSection,
    pub basis: &'a SpectralBasis,
    pub newton_tol: f64,
    pub max_iter: usize,
    pub rho_k: f64,
    cache: Mutex<Vec<UpsilonSolution>>,
}

impl<'a> ReducedMap<'a> {
    pub fn new(cs: &'a CrossSection, basis: &'a SpectralBasis) -> Self {
        ReducedMap {
            cs,
            basis,
            newton_tol: DEFAULT_NEWTON_TOL,
            max_iter: DEFAULT_MAX_ITER,
            rho_k: DEFAULT_RHO_K,
            cache: Mutex::new(Vec::new()),
        }
    }

    pub fn with_radius(mut self, rho_k: f64) -> Self {
        self.rho_k = rho_k;
        self
    }

    pub fn ell(&self) -> usize {
        self.basis.ell()
    }

    /// Kernel coordinates embedded as eigen coefficients.
    pub fn kernel_coeffs(&self, mu: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.basis.len()];
        for (&j, &m) in self.basis.kernel.iter().zip(mu) {
            a[j] = m;
        }
        a
    }

    /// Kernel coordinates of an eigen coefficient vector.
    pub fn kernel_part(&self, coeffs: &[f64]) -> Vec<f64> {
        self.basis.kernel.iter().map(|&j| coeffs[j]).collect()
    }

    /// Eigen coefficients of the first variation: <grad A, phi_j>.
    fn variation_coeffs(&self, field: &NormalField) -> Result<Vec<f64>> {
        let g = area_gradient(self.cs, field)?;
        Ok(self.basis.fields.iter().map(|f| dot(f.values(), &g)).collect())
    }

    /// Snapshot of all cached solutions.
    pub fn cached(&self) -> Vec<UpsilonSolution> {
        self.cache.lock().map(|c| c.clone()).unwrap_or_default()
    }

    fn lookup(&self, mu: &[f64]) -> Option<UpsilonSolution> {
        let cache = self.cache.lock().ok()?;
        cache.iter().find(|s| s.mu == mu).cloned()
    }

    /// Frozen-Jacobian Newton iteration for P_{K-perp} dA(mu phi + v) = 0.
    pub fn solve_upsilon(&self, mu: &[f64]) -> Result<UpsilonSolution> {
        if mu.len() != self.ell() {
            return Err(Error::LengthMismatch { expected: self.ell(), got: mu.len() });
        }
        let norm = dot(mu, mu).sqrt();
        if norm > self.rho_k {
            return Err(Error::OutsideDomain { norm, radius: self.rho_k });
        }
        if let Some(s) = self.lookup(mu) {
            return Ok(s);
        }
        let base = self.kernel_coeffs(mu);
        let mut v = vec![0.0; self.basis.len()];
        let mut best = f64::INFINITY;
        let mut stalls = 0;
        let mut residual = f64::INFINITY;
        for it in 0..=self.max_iter {
            let total: Vec<f64> = base.iter().zip(&v).map(|(a, b)| a + b).collect();
            let field = self.basis.synthesize(&total);
            let r = match self.variation_coeffs(&field) {
                Ok(r) => r,
                Err(_) => return Err(Error::NewtonDiverged { iterations: it, residual }),
            };
            residual = self
                .basis
                .classes
                .iter()
                .zip(&r)
                .filter(|(c, _)| **c != ModeClass::Kernel)
                .map(|(_, x)| x * x)
                .sum::<f64>()
                .sqrt();
            if !residual.is_finite() {
                return Err(Error::NewtonDiverged { iterations: it, residual });
            }
            if residual <= self.newton_tol {
                let sol = UpsilonSolution { mu: mu.to_vec(), coeffs: v, iterations: it, residual };
                if let Ok(mut c) = self.cache.lock() {
                    c.push(sol.clone());
                }
                return Ok(sol);
            }
            if residual < 0.9 * best {
                best = residual;
                stalls = 0;
            } else {
                stalls += 1;
                if stalls >= 5 {
                    if residual > 10.0 * best {
                        return Err(Error::NewtonDiverged { iterations: it, residual });
                    }
                    return Err(Error::NewtonStagnated { iterations: it, residual });
                }
            }
            for (j, c) in self.basis.classes.iter().enumerate() {
                if *c != ModeClass::Kernel {
                    v[j] -= r[j] / self.basis.eigenvalues[j];
                }
            }
        }
        Err(Error::NewtonDiverged { iterations: self.max_iter, residual })
    }

    /// The field sum_j mu_j phi_j + Upsilon(mu).
    pub fn graph_field(&self, mu: &[f64]) -> Result<NormalField> {
        let sol = self.solve_upsilon(mu)?;
        let total: Vec<f64> = self.kernel_coeffs(mu).iter().zip(&sol.coeffs).map(|(a, b)| a + b).collect();
        Ok(self.basis.synthesize(&total))
    }

    /// Max Newton residual over the cache.
    pub fn max_cached_residual(&self) -> f64 {
        self.cached().iter().map(|s| s.residual).fold(0.0, f64::max)
    }
}

/// The reduced area and its gradient on kernel coordinates.
pub trait ReducedFunction: Sync {
    fn dim(&self) -> usize;
    fn domain_radius(&self) -> f64;
    fn value(&self, mu: &[f64]) -> Result<f64>;
    fn gradient(&self, mu: &[f64]) -> Result<Vec<f64>>;
    /// Upsilon(mu) as eigen coefficients; fixtures return zeros.
    fn upsilon(&self, mu: &[f64]) -> Result<Vec<f64>>;

    fn value_and_gradient(&self, mu: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(mu)?, self.gradient(mu)?))
    }

    fn label(&self) -> String {
        "reduced".into()
    }
}

impl ReducedFunction for ReducedMap<'_> {
    fn dim(&self) -> usize {
        self.ell()
    }

    fn domain_radius(&self) -> f64 {
        self.rho_k
    }

    fn value(&self, mu: &[f64]) -> Result<f64> {
        area_sigma(self.cs, &self.graph_field(mu)?)
    }

    fn gradient(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let field = self.graph_field(mu)?;
        let r = self.variation_coeffs(&field)?;
        Ok(self.basis.kernel.iter().map(|&j| r[j]).collect())
    }

    fn value_and_gradient(&self, mu: &[f64]) -> Result<(f64, Vec<f64>)> {
        let field = self.graph_field(mu)?;
        let r = self.variation_coeffs(&field)?;
        Ok((area_sigma(self.cs, &field)?, self.basis.kernel.iter().map(|&j| r[j]).collect()))
    }

    fn upsilon(&self, mu: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve_upsilon(mu)?.coeffs)
    }

    fn label(&self) -> String {
        self.cs.family().to_string()
    }
}

/// Synthetic A(mu) = |mu|^4.
#[derive(Debug, Clone, Copy)]
pub struct Quartic {
    pub dim: usize,
    pub radius: f64,
}

impl ReducedFunction for Quartic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn domain_radius(&self) -> f64 {
        self.radius
    }
    fn value(&self, mu: &[f64]) -> Result<f64> {
        Ok(dot(mu, mu).powi(2))
    }
    fn gradient(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let r2 = dot(mu, mu);
        Ok(mu.iter().map(|m| 4.0 * r2 * m).collect())
    }
    fn upsilon(&self, _mu: &[f64]) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
    fn label(&self) -> String {
        "quartic".into()
    }
}

/// Synthetic A(mu) = mu_1^2 - mu_2^2.
#[derive(Debug, Clone, Copy)]
pub struct Saddle {
    pub radius: f64,
}

impl ReducedFunction for Saddle {
    fn dim(&self) -> usize {
        2
    }
    fn domain_radius(&self) -> f64 {
        self.radius
    }
    fn value(&self, mu: &[f64]) -> Result<f64> {
        Ok(mu[0] * mu[0] - mu[1] * mu[1])
    }
    fn gradient(&self, mu: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![2.0 * mu[0], -2.0 * mu[1]])
    }
    fn upsilon(&self, _mu: &[f64]) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
    fn label(&self) -> String {
        "saddle".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub via_variation: Vec<f64>,
    pub via_differences: Vec<f64>,
    pub discrepancy: f64,
}

/// grad A(mu) from the first variation, cross-checked by central differences.
pub fn reduced_gradient(rf: &dyn ReducedFunction, mu: &[f64]) -> Result<GradientCheck> {
    let a = rf.gradient(mu)?;
    let h = GRADIENT_FD_STEP;
    let mut b = Vec::with_capacity(mu.len());
    for j in 0..mu.len() {
        let mut p = mu.to_vec();
        let mut m = mu.to_vec();
        p[j] += h;
        m[j] -= h;
        b.push((rf.value(&p)? - rf.value(&m)?) / (2.0 * h));
    }
    let discrepancy = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = dot(&a, &a).sqrt().max(dot(&b, &b).sqrt()).max(1.0);
    if discrepancy > GRADIENT_CHECK_TOL * scale {
        return Err(Error::GradientMismatch { discrepancy });
    }
    Ok(GradientCheck { via_variation: a, via_differences: b, discrepancy })
}

/// Radical inverse in the given base.
fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Halton point `i` of dimension `dim` in [-1, 1]^dim.
fn halton(i: u64, dim: usize) -> Vec<f64> {
    (0..dim).map(|d| 2.0 * radical_inverse(i, PRIMES[d % PRIMES.len()]) - 1.0).collect()
}

/// Quasi-random points in the closed ball: Halton points in the cube pushed
/// radially into the ball, plus the 2 dim axis points on the sphere.
pub fn ball_samples(dim: usize, radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count + 2 * dim);
    for j in 0..dim {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; dim];
            e[j] = s * radius;
            out.push(e);
        }
    }
    let offset = 1 + seed % 4096;
    for i in 0..count as u64 {
        let x = halton(offset + i, dim);
        let inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let two = dot(&x, &x).sqrt();
        let s = if two > 0.0 { radius * inf / two } else { 0.0 };
        out.push(x.iter().map(|v| v * s).collect());
    }
    out
}

/// Quasi-uniform unit directions plus the coordinate axes.
pub fn sphere_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = ball_samples(dim, 1.0, count, seed);
    for v in out.iter_mut() {
        let n = dot(v, v).sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
    }
    out.retain(|v| dot(v, v) > 0.5);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedSample {
    pub mu: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl ReducedSample {
    pub fn grad_norm(&self) -> f64 {
        dot(&self.gradient, &self.gradient).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Integrable,
    NonIntegrable,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    pub verdict: Verdict,
    pub integrable: bool,
    pub radius: f64,
    pub tol: f64,
    pub max_abs_value: f64,
    pub max_grad: f64,
    pub failures: usize,
    pub first_failure: Option<String>,
    pub samples: Vec<ReducedSample>,
}

fn evaluate(rf: &dyn ReducedFunction, points: Vec<Vec<f64>>) -> Vec<Result<ReducedSample>> {
    crate::par_map(points, |mu| {
        rf.value_and_gradient(&mu).map(|(value, gradient)| ReducedSample { mu, value, gradient })
    })
}

/// Samples A on the ball; integrable iff max |A| <= tol and no Newton failure.
pub fn integrability_test(
    rf: &dyn ReducedFunction,
    radius: f64,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<IntegrabilityReport> {
    if radius > rf.domain_radius() {
        return Err(Error::InvalidParameter(format!(
            "sample radius {radius} exceeds domain radius {}",
            rf.domain_radius()
        )));
    }
    let pts = ball_samples(rf.dim(), radius, n_samples, seed);
    let mut samples = Vec::new();
    let mut failures = 0;
    let mut first_failure = None;
    for r in evaluate(rf, pts) {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => {
                failures += 1;
                first_failure.get_or_insert(e.to_string());
            }
        }
    }
    let max_abs_value = samples.iter().map(|s| s.value.abs()).fold(0.0, f64::max);
    let max_grad = samples.iter().map(|s| s.grad_norm()).fold(0.0, f64::max);
    let verdict = if failures > 0 {
        Verdict::Inconclusive
    } else if max_abs_value <= tol {
        Verdict::Integrable
    } else {
        Verdict::NonIntegrable
    };
    Ok(IntegrabilityReport {
        verdict,
        integrable: verdict == Verdict::Integrable,
        radius,
        tol,
        max_abs_value,
        max_grad,
        failures,
        first_failure,
        samples,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LojasiewiczFit {
    pub gamma: f64,
    pub c_loj: f64,
    /// sup ratio on the innermost shell over the outermost one, at `gamma`.
    pub worst_ratio: f64,
    pub vacuous: bool,
    pub shell_radii: Vec<f64>,
    /// Fitted log-log slope of the shell sup of |A|^{1-g}/|grad A| per grid g.
    pub slopes: Vec<(f64, f64)>,
}

pub const N_SHELLS: usize = 8;

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Largest gamma on the grid for which |A|^{1-gamma}/|grad A| stays bounded
/// as the sampling shells shrink towards 0.
pub fn lojasiewicz_fit(
    rf: &dyn ReducedFunction,
    radius: f64,
    n_directions: usize,
    vacuous_tol: f64,
    seed: u64,
) -> Result<LojasiewiczFit> {
    let dirs = sphere_directions(rf.dim(), n_directions, seed);
    let shell_radii: Vec<f64> = (0..N_SHELLS)
        .map(|s| radius * 100f64.powf(-(s as f64) / (N_SHELLS - 1) as f64))
        .collect();
    let points: Vec<Vec<f64>> = shell_radii
        .iter()
        .flat_map(|&r| dirs.iter().map(move |d| d.iter().map(|x| x * r).collect::<Vec<f64>>()))
        .collect();
    let samples: Vec<ReducedSample> = evaluate(rf, points).into_iter().collect::<Result<_>>()?;
    let per_shell = dirs.len();
    let max_a = samples.iter().map(|s| s.value.abs()).fold(0.0, f64::max);
    if max_a <= vacuous_tol {
        let c = samples
            .iter()
            .filter(|s| s.grad_norm() > 0.0 && s.value != 0.0)
            .map(|s| s.value.abs().sqrt() / s.grad_norm())
            .fold(0.0, f64::max);
        return Ok(LojasiewiczFit {
            gamma: 0.5,
            c_loj: c,
            worst_ratio: 1.0,
            vacuous: true,
            shell_radii,
            slopes: vec![],
        });
    }
    if samples.iter().all(|s| s.grad_norm() == 0.0 || s.value.abs() <= vacuous_tol) {
        return Err(Error::FitImpossible("gradient vanishes on every sample with |A| > tol".into()));
    }
    let xs: Vec<f64> = shell_radii.iter().map(|r| r.ln()).collect();
    let mut slopes = Vec::new();
    let mut chosen: Option<(f64, Vec<f64>)> = None;
    for &g in GAMMA_GRID.iter() {
        let sups: Vec<f64> = (0..N_SHELLS)
            .map(|s| {
                samples[s * per_shell..(s + 1) * per_shell]
                    .iter()
                    .filter(|x| x.value != 0.0)
                    .map(|x| {
                        let gn = x.grad_norm();
                        if gn == 0.0 {
                            f64::INFINITY
                        } else {
                            x.value.abs().powf(1.0 - g) / gn
                        }
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        if sups.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            slopes.push((g, f64::NEG_INFINITY));
            continue;
        }
        let ys: Vec<f64> = sups.iter().map(|v| v.ln()).collect();
        let sl = slope(&xs, &ys);
        slopes.push((g, sl));
        if sl >= BOUNDED_SLOPE {
            chosen = Some((g, sups));
        }
    }
    let (gamma, sups) = chosen.ok_or_else(|| Error::FitImpossible("no grid exponent gives a bounded ratio".into()))?;
    Ok(LojasiewiczFit {
        gamma,
        c_loj: sups.iter().copied().fold(0.0, f64::max),
        worst_ratio: sups[N_SHELLS - 1] / sups[0],
        vacuous: false,
        shell_radii,
        slopes,
    })
}

/// Fitted exponent of ||Upsilon(mu)||_{L2} against |mu| along a direction.
pub fn upsilon_exponent(rm: &ReducedMap, direction: &[f64], radii: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = dot(direction, direction).sqrt();
    let mut norms = Vec::with_capacity(radii.len());
    for &r in radii {
        let mu: Vec<f64> = direction.iter().map(|d| d * r / n).collect();
        let sol = rm.solve_upsilon(&mu)?;
        norms.push(dot(&sol.coeffs, &sol.coeffs).sqrt());
    }
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    Ok((slope(&xs, &ys), norms))
}

/// (mu, A, grad A) rows.
pub fn samples_csv(samples: &[ReducedSample]) -> String {
    let ell = samples.first().map(|s| s.mu.len()).unwrap_or(0);
    let mut out = String::new();
    let mu_cols: Vec<String> = (0..ell).map(|j| format!("mu{j}")).collect();
    let g_cols: Vec<String> = (0..ell).map(|j| format!("grad{j}")).collect();
    out.push_str(&format!("{},A,{},grad_norm\n", mu_cols.join(","), g_cols.join(",")));
    for s in samples {
        let mu: Vec<String> = s.mu.iter().map(|v| format!("{v:.12e}")).collect();
        let g: Vec<String> = s.gradient.iter().map(|v| format!("{v:.12e}")).collect();
        out.push_str(&format!("{},{:.12e},{},{:.12e}\n", mu.join(","), s.value, g.join(","), s.grad_norm()));
    }
    out
}
