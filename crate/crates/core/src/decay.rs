//! Scalar decay model for the density excess: the equality version of
//! r e~'(r) = n eps e~(r)^{1+gamma}, integrated downward in log r, and the
//! dyadic flat-norm sums built from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecayParams {
    pub n: usize,
    pub eps: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub c_am: f64,
    pub r0: f64,
    /// e~(r0).
    pub e0: f64,
    /// The trajectory reaches r0 2^{-2^levels}.
    pub levels: u32,
}

impl Default for DecayParams {
    fn default() -> Self {
        DecayParams { n: 3, eps: 0.1, gamma: 0.5, alpha: 0.5, c_am: 0.01, r0: 1.0, e0: 0.1, levels: 10 }
    }
}

pub const DECAY_TOL: f64 = 1e-10;
pub const MIN_GRID_POINTS: usize = 256;
/// Extra dyadic levels integrated for the rate fits.
pub const FIT_EXTRA_LEVELS: u32 = 8;

impl DecayParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps = {} must be positive", self.eps));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma = {} outside [0, 1)", self.gamma));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha = {} outside (0, 1]", self.alpha));
        }
        if !(self.r0 > 0.0 && self.r0 <= 1.0) {
            return bad(format!("r0 = {} outside (0, 1]", self.r0));
        }
        if !(self.e0 >= 0.0 && self.e0.is_finite()) {
            return bad(format!("e0 = {} must be non-negative", self.e0));
        }
        if !(self.c_am >= 0.0 && self.c_am.is_finite()) {
            return bad(format!("C_am = {} must be non-negative", self.c_am));
        }
        if self.levels == 0 || self.levels > 40 {
            return bad(format!("levels = {} outside [1, 40]", self.levels));
        }
        Ok(())
    }

    fn rate(&self) -> f64 {
        self.n as f64 * self.eps
    }

    /// Closed-form solution of the equality ODE at s = log(r0/r).
    pub fn closed_form(&self, s: f64) -> f64 {
        if self.e0 == 0.0 {
            return 0.0;
        }
        if self.gamma == 0.0 {
            self.e0 * (-self.rate() * s).exp()
        } else {
            (self.e0.powf(-self.gamma) + self.rate() * self.gamma * s).powf(-1.0 / self.gamma)
        }
    }

    /// 2 alpha^{-1} C r^alpha at s = log(r0/r).
    pub fn source(&self, s: f64) -> f64 {
        2.0 * self.c_am / self.alpha * (self.alpha * (self.r0.ln() - s)).exp()
    }

    /// The final bound 2 (n eps gamma log(r0/r))^{-1/gamma}, or
    /// e0 (r/r0)^{n eps} when gamma = 0.
    pub fn final_bound(&self, s: f64) -> f64 {
        if self.gamma == 0.0 {
            self.e0 * (-self.rate() * s).exp()
        } else {
            2.0 * (self.rate() * self.gamma * s).powf(-1.0 / self.gamma)
        }
    }

    /// log(r0/r) at the dyadic radius r0 2^{-2^k}.
    pub fn dyadic_s(k: u32) -> f64 {
        2f64.powi(k as i32) * std::f64::consts::LN_2
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayTrajectory {
    pub params: DecayParams,
    /// log(r0/r), increasing.
    pub s: Vec<f64>,
    pub log_r: Vec<f64>,
    pub e: Vec<f64>,
    pub e_tilde: Vec<f64>,
    /// -e~^{-gamma} - n eps gamma log r (gamma > 0); log e~ - n eps log r
    /// for gamma = 0; 0 where e~ = 0.
    pub m: Vec<f64>,
    /// Closed-form comparison value at each radius.
    pub bound: Vec<f64>,
    /// Grid index of the dyadic radius r0 2^{-2^k}, k = 0..=levels.
    pub dyadic_index: Vec<usize>,
    /// First log r (going inward) where the source term is at most e~/10.
    pub absorption_log_r: Option<f64>,
    /// Largest decrease of M toward larger r beyond the integrator tolerance.
    pub m_violation: f64,
    pub max_rel_closed_form: f64,
    pub bound_holds: bool,
    pub final_bound_holds: bool,
    pub steps: usize,
}

fn output_grid(levels: u32) -> (Vec<f64>, Vec<f64>) {
    let s_max = DecayParams::dyadic_s(levels);
    let s_min: f64 = 1e-3;
    let count = MIN_GRID_POINTS;
    let mut s: Vec<f64> = vec![0.0];
    let ratio = (s_max / s_min).ln() / (count - 1) as f64;
    s.extend((0..count).map(|i| s_min * (ratio * i as f64).exp()));
    let dyadic: Vec<f64> = (0..=levels).map(DecayParams::dyadic_s).collect();
    s.extend(&dyadic);
    s.sort_by(f64::total_cmp);
    s.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-300));
    (s, dyadic)
}

/// u = log e~ along s = log(r0/r): u' = -n eps e^{gamma u}.
fn integrate_log(p: &DecayParams, grid: &[f64]) -> Result<(Vec<f64>, usize)> {
    let rate = p.rate();
    let g = p.gamma;
    let f = |u: f64| -rate * (g * u).exp();
    let rk4 = |u: f64, h: f64| {
        let k1 = f(u);
        let k2 = f(u + h / 2.0 * k1);
        let k3 = f(u + h / 2.0 * k2);
        let k4 = f(u + h * k3);
        u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    let mut u = p.e0.ln();
    let mut out = vec![u];
    let mut s = grid[0];
    let mut h: f64 = 1e-3;
    let mut steps = 0;
    for &target in &grid[1..] {
        while s < target {
            let step = h.min(target - s);
            let full = rk4(u, step);
            let half = rk4(rk4(u, step / 2.0), step / 2.0);
            let err = (full - half).abs() / 15.0;
            if !half.is_finite() {
                return Err(Error::BlowUp(p.r0.ln() - s));
            }
            if err > DECAY_TOL && step > 1e-14 {
                h = step / 2.0;
                continue;
            }
            u = half + (half - full) / 15.0;
            s = if target - s <= step { target } else { s + step };
            steps += 1;
            if err < DECAY_TOL / 64.0 {
                h = step * 2.0;
            }
        }
        out.push(u);
    }
    Ok((out, steps))
}

/// Integrates the excess ODE on a log-spaced grid down to r0 2^{-2^levels}.
pub fn integrate_excess(p: &DecayParams) -> Result<DecayTrajectory> {
    p.validate()?;
    let (s, dyadic) = output_grid(p.levels);
    let log_r: Vec<f64> = s.iter().map(|x| p.r0.ln() - x).collect();
    let (e_tilde, steps) = if p.e0 == 0.0 {
        (vec![0.0; s.len()], 0)
    } else {
        let (u, steps) = integrate_log(p, &s)?;
        (u.into_iter().map(f64::exp).collect(), steps)
    };
    let e: Vec<f64> = s.iter().zip(&e_tilde).map(|(&x, &et)| (et - p.source(x)).max(0.0)).collect();
    let rate = p.rate();
    let m: Vec<f64> = e_tilde
        .iter()
        .zip(&log_r)
        .map(|(&et, &lr)| {
            if et == 0.0 {
                0.0
            } else if p.gamma == 0.0 {
                et.ln() - rate * lr
            } else {
                -et.powf(-p.gamma) - rate * p.gamma * lr
            }
        })
        .collect();
    let bound: Vec<f64> = s.iter().map(|&x| p.closed_form(x)).collect();
    let mut m_violation = f64::NEG_INFINITY;
    for i in 1..s.len() {
        let scale = if p.gamma == 0.0 { 1.0 } else { e_tilde[i].powf(-p.gamma).max(1.0) };
        let tol = 1e-8 * scale;
        // M at the smaller radius must not exceed M at the larger one.
        m_violation = m_violation.max(m[i] - m[i - 1] - tol);
    }
    let max_rel_closed_form = e_tilde
        .iter()
        .zip(&bound)
        .filter(|(_, &b)| b > 0.0)
        .map(|(&a, &b)| ((a - b) / b).abs())
        .fold(0.0, f64::max);
    let bound_holds = e_tilde.iter().zip(&bound).all(|(&a, &b)| a <= b * (1.0 + 1e-8));
    let final_bound_holds = p.e0 > 1.0
        || s.iter()
            .zip(&e)
            .filter(|(&x, _)| x >= std::f64::consts::LN_2)
            .all(|(&x, &ev)| ev <= p.final_bound(x) * (1.0 + 1e-8));
    let absorption_log_r = s
        .iter()
        .zip(&e_tilde)
        .zip(&log_r)
        .find(|((&x, &et), _)| et > 0.0 && p.source(x) <= et / 10.0)
        .map(|(_, &lr)| lr);
    let dyadic_index = dyadic
        .iter()
        .map(|d| s.iter().position(|x| (x - d).abs() <= 1e-12 * d).unwrap_or(0))
        .collect();
    Ok(DecayTrajectory {
        params: *p,
        s,
        log_r,
        e,
        e_tilde,
        m,
        bound,
        dyadic_index,
        absorption_log_r,
        m_violation,
        max_rel_closed_form,
        bound_holds,
        final_bound_holds,
        steps,
    })
}

impl DecayTrajectory {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// e at r0 2^{-2^k}.
    pub fn dyadic_excess(&self, k: u32) -> Result<f64> {
        self.dyadic_index.get(k as usize).map(|&i| self.e[i]).ok_or(Error::TrajectoryTooShort {
            needed: self.params.r0.ln() - DecayParams::dyadic_s(k),
            reached: *self.log_r.last().unwrap_or(&0.0),
        })
    }

    /// r, log r, e, e~, M, bound.
    pub fn csv(&self) -> String {
        let mut out = String::from("r,log_r,e,e_tilde,M,bound\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e}\n",
                self.log_r[i].exp(),
                self.log_r[i],
                self.e[i],
                self.e_tilde[i],
                self.m[i],
                self.bound[i]
            ));
        }
        out
    }
}

/// S(j, i) = sum_{k=j}^{i} 2^{k/2} e(r0 2^{-2^k})^{1/2}.
pub fn dyadic_flat_sum(traj: &DecayTrajectory, j: u32, i: u32) -> Result<f64> {
    (j..=i).map(|k| Ok(2f64.powf(k as f64 / 2.0) * traj.dyadic_excess(k)?.sqrt())).sum()
}

/// S(j, i) plus a geometric tail continued from the last two terms.
pub fn dyadic_flat_sum_completed(traj: &DecayTrajectory, j: u32, i: u32) -> Result<f64> {
    let partial = dyadic_flat_sum(traj, j, i)?;
    if i == 0 {
        return Ok(partial);
    }
    let term = |k: u32| -> Result<f64> { Ok(2f64.powf(k as f64 / 2.0) * traj.dyadic_excess(k)?.sqrt()) };
    let (a, b) = (term(i - 1)?, term(i)?);
    if a <= 0.0 || b <= 0.0 || b >= a {
        return Ok(partial);
    }
    let q = b / a;
    Ok(partial + b * q / (1.0 - q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// "log" for gamma > 0, "power" for gamma = 0.
    pub kind: String,
    pub target: f64,
    pub fitted: f64,
    pub rel_error: f64,
    /// exp(intercept) of the fit.
    pub constant: f64,
    /// Largest S(j, inf) / 2^{(1 - 1/gamma) j / 2} over j <= levels (gamma > 0).
    pub geometric_constant: Option<f64>,
    /// S(i+1)/S(i) at the end of the fit window.
    pub tail_ratio: f64,
    /// Dyadic levels used.
    pub window: (u32, u32),
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits the decay rate of the model: for gamma > 0 the exponent of
/// S(j, inf) against log(r0/t) at t = r0 2^{-2^j}, with target
/// (gamma - 1)/(2 gamma); for gamma = 0 the power of e in r, target n eps.
pub fn fit_rate(p: &DecayParams) -> Result<RateFit> {
    if p.e0 == 0.0 {
        return Err(Error::FitImpossible("zero excess".into()));
    }
    if p.gamma == 0.0 {
        let traj = integrate_excess(p)?;
        let target = p.rate();
        let half = traj.s[traj.len() - 1] / 2.0;
        let (xs, ys): (Vec<f64>, Vec<f64>) = traj
            .s
            .iter()
            .zip(&traj.e)
            .filter(|(&x, &e)| x >= half && e > 0.0)
            .map(|(&x, &e)| (-x, e.ln()))
            .unzip();
        if xs.len() < 2 {
            return Err(Error::FitImpossible("excess underflows before the fit window".into()));
        }
        let (fitted, icpt) = linear_fit(&xs, &ys);
        let last = p.levels;
        let tail_ratio = dyadic_flat_sum(&traj, last, last)? / dyadic_flat_sum(&traj, last - 1, last - 1)?;
        return Ok(RateFit {
            kind: "power".into(),
            target,
            fitted,
            rel_error: (fitted / target - 1.0).abs(),
            constant: icpt.exp(),
            geometric_constant: None,
            tail_ratio,
            window: (0, p.levels),
        });
    }
    let deep = DecayParams { levels: p.levels + FIT_EXTRA_LEVELS, ..*p };
    let traj = integrate_excess(&deep)?;
    let top = deep.levels;
    let (j0, j1) = (p.levels + 2, p.levels + 6);
    let sums: Vec<f64> = (j0..=j1 + 1).map(|j| dyadic_flat_sum_completed(&traj, j, top)).collect::<Result<_>>()?;
    let xs: Vec<f64> = (j0..=j1).map(|j| DecayParams::dyadic_s(j).ln()).collect();
    let ys: Vec<f64> = sums[..sums.len() - 1].iter().map(|s| s.ln()).collect();
    let (fitted, icpt) = linear_fit(&xs, &ys);
    let target = (p.gamma - 1.0) / (2.0 * p.gamma);
    let geo = (1.0 - 1.0 / p.gamma) / 2.0;
    let geometric_constant = (0..=p.levels)
        .map(|j| Ok(dyadic_flat_sum_completed(&traj, j, top)? / 2f64.powf(geo * j as f64)))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(RateFit {
        kind: "log".into(),
        target,
        fitted,
        rel_error: (fitted / target - 1.0).abs(),
        constant: icpt.exp(),
        geometric_constant: Some(geometric_constant),
        tail_ratio: sums[sums.len() - 1] / sums[sums.len() - 2],
        window: (j0, j1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_excess_stays_zero() {
        let p = DecayParams { e0: 0.0, c_am: 0.0, ..DecayParams::default() };
        let t = integrate_excess(&p).unwrap();
        assert!(t.e.iter().chain(&t.e_tilde).chain(&t.m).chain(&t.bound).all(|&x| x == 0.0));
        assert_eq!(dyadic_flat_sum(&t, 0, p.levels).unwrap(), 0.0);
    }

    #[test]
    fn grid_covers_depth() {
        let t = integrate_excess(&DecayParams::default()).unwrap();
        assert!(t.len() >= 200);
        assert_eq!(t.dyadic_index.len(), 11);
        let last = *t.s.last().unwrap();
        assert!((last - 1024.0 * std::f64::consts::LN_2).abs() < 1e-9);
        for (k, &i) in t.dyadic_index.iter().enumerate() {
            assert_eq!(t.s[i], DecayParams::dyadic_s(k as u32));
        }
    }

    #[test]
    fn closed_form_and_monotone_quantity() {
        for g in [0.0, 0.25, 0.5] {
            let p = DecayParams { gamma: g, c_am: 0.0, ..DecayParams::default() };
            let t = integrate_excess(&p).unwrap();
            assert!(t.max_rel_closed_form < 1e-6, "{g}: {}", t.max_rel_closed_form);
            assert!(t.m_violation <= 0.0, "{g}: {}", t.m_violation);
            assert!(t.final_bound_holds);
        }
    }

    #[test]
    fn small_gamma_limit_matches_power_branch() {
        let p0 = DecayParams { gamma: 0.0, ..DecayParams::default() };
        let pg = DecayParams { gamma: 1e-4, ..DecayParams::default() };
        for i in 0..=100 {
            let s = i as f64 / 10.0;
            let (a, b) = (p0.closed_form(s), pg.closed_form(s));
            assert!((a / b - 1.0).abs() < 0.01, "{s}");
        }
    }

    #[test]
    fn too_short_trajectory_errors() {
        let t = integrate_excess(&DecayParams { levels: 3, ..DecayParams::default() }).unwrap();
        assert!(matches!(dyadic_flat_sum(&t, 0, 5), Err(Error::TrajectoryTooShort { .. })));
    }

    #[test]
    fn rates() {
        let f = fit_rate(&DecayParams::default()).unwrap();
        assert!(f.rel_error < 0.02, "{f:?}");
        assert!((f.tail_ratio / 2f64.powf(-0.5) - 1.0).abs() < 0.02, "{f:?}");
        let f0 = fit_rate(&DecayParams { gamma: 0.0, ..DecayParams::default() }).unwrap();
        assert!(f0.rel_error < 0.02, "{f0:?}");
        assert!(f0.tail_ratio < 1e-3);
    }

    #[test]
    fn invalid_params() {
        assert!(DecayParams { eps: 0.0, ..DecayParams::default() }.validate().is_err());
        assert!(DecayParams { gamma: 1.0, ..DecayParams::default() }.validate().is_err());
        assert!(DecayParams { r0: 1.5, ..DecayParams::default() }.validate().is_err());
    }
}
