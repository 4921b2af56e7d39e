//! Round circle and round 2-sphere factors: grids, weights, embeddings and
//! real harmonic bases.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::quad::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorKind {
    Circle,
    Sphere,
}

impl FactorKind {
    pub fn dim(self) -> usize {
        match self {
            FactorKind::Circle => 1,
            FactorKind::Sphere => 2,
        }
    }

    /// Dimension of the Euclidean space the unit factor lives in.
    pub fn ambient(self) -> usize {
        self.dim() + 1
    }
}

/// A harmonic on one factor, sampled at the factor's nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorMode {
    /// Circle: signed frequency (positive = cosine, negative = sine).
    /// Sphere: (l, signed m).
    pub label: (i32, i32),
    pub degree: usize,
    /// Laplace–Beltrami eigenvalue on the factor of the given radius.
    pub laplace: f64,
    pub values: Vec<f64>,
    /// Coordinate derivatives, `derivs[c][node]`.
    pub derivs: Vec<Vec<f64>>,
}

impl FactorMode {
    pub fn describe(&self, kind: FactorKind) -> String {
        match kind {
            FactorKind::Circle => {
                let m = self.label.0;
                if m == 0 {
                    "1".into()
                } else if m > 0 {
                    format!("cos{m}")
                } else {
                    format!("sin{}", -m)
                }
            }
            FactorKind::Sphere => format!("Y{},{}", self.label.0, self.label.1),
        }
    }
}

/// One round factor S^1(R) or S^2(R) discretized on a tensor grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Factor {
    pub kind: FactorKind,
    pub radius: f64,
    pub resolution: usize,
    /// Intrinsic coordinates per node: (phi) or (polar angle, phi).
    pub coords: Vec<Vec<f64>>,
    /// Unit-sphere point per node, length `kind.ambient()`.
    pub points: Vec<Vec<f64>>,
    /// `partials[node][c]`: derivative of the unit point along coordinate c.
    pub partials: Vec<Vec<Vec<f64>>>,
    /// `second[node][c][d]`: second derivatives of the unit point.
    pub second: Vec<Vec<Vec<Vec<f64>>>>,
    /// Area weights on the factor of the given radius.
    pub weights: Vec<f64>,
    /// Row-major `n x n` differentiation matrix per coordinate, exact on the
    /// full resolvable harmonic band.
    pub diff: Vec<Vec<f64>>,
    /// Retained harmonics (spectral cutoff band), orthonormal in the
    /// weighted inner product.
    pub modes: Vec<FactorMode>,
}

impl Factor {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn area(&self) -> f64 {
        match self.kind {
            FactorKind::Circle => 2.0 * PI * self.radius,
            FactorKind::Sphere => 4.0 * PI * self.radius * self.radius,
        }
    }

    /// Build a factor with `resolution` points along phi (and resolution/2
    /// Gauss–Legendre rings for the sphere). `cutoff` is the largest retained
    /// harmonic degree.
    pub fn new(kind: FactorKind, radius: f64, resolution: usize, cutoff: usize) -> Factor {
        match kind {
            FactorKind::Circle => circle(radius, resolution, cutoff),
            FactorKind::Sphere => sphere(radius, resolution, cutoff),
        }
    }

    pub fn unit_point(kind: FactorKind, coords: &[f64]) -> Vec<f64> {
        match kind {
            FactorKind::Circle => vec![coords[0].cos(), coords[0].sin()],
            FactorKind::Sphere => {
                let (t, p) = (coords[0], coords[1]);
                vec![t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]
            }
        }
    }

    fn unit_partials(kind: FactorKind, coords: &[f64]) -> Vec<Vec<f64>> {
        match kind {
            FactorKind::Circle => vec![vec![-coords[0].sin(), coords[0].cos()]],
            FactorKind::Sphere => {
                let (t, p) = (coords[0], coords[1]);
                vec![
                    vec![t.cos() * p.cos(), t.cos() * p.sin(), -t.sin()],
                    vec![-t.sin() * p.sin(), t.sin() * p.cos(), 0.0],
                ]
            }
        }
    }

    fn unit_second(kind: FactorKind, coords: &[f64]) -> Vec<Vec<Vec<f64>>> {
        match kind {
            FactorKind::Circle => vec![vec![vec![-coords[0].cos(), -coords[0].sin()]]],
            FactorKind::Sphere => {
                let (t, p) = (coords[0], coords[1]);
                let tt = vec![-t.sin() * p.cos(), -t.sin() * p.sin(), -t.cos()];
                let tp = vec![-t.cos() * p.sin(), t.cos() * p.cos(), 0.0];
                let pp = vec![-t.sin() * p.cos(), -t.sin() * p.sin(), 0.0];
                vec![vec![tt, tp.clone()], vec![tp, pp]]
            }
        }
    }

    fn finish(
        kind: FactorKind,
        radius: f64,
        resolution: usize,
        coords: Vec<Vec<f64>>,
        weights: Vec<f64>,
        full: Vec<FactorMode>,
        cutoff: usize,
    ) -> Factor {
        let n = coords.len();
        let points = coords.iter().map(|c| Self::unit_point(kind, c)).collect();
        let partials = coords.iter().map(|c| Self::unit_partials(kind, c)).collect();
        let second = coords.iter().map(|c| Self::unit_second(kind, c)).collect();
        let dim = kind.dim();
        let mut diff = vec![vec![0.0; n * n]; dim];
        for mode in &full {
            for (c, dc) in diff.iter_mut().enumerate() {
                for i in 0..n {
                    let di = mode.derivs[c][i];
                    if di == 0.0 {
                        continue;
                    }
                    let row = &mut dc[i * n..(i + 1) * n];
                    for j in 0..n {
                        row[j] += di * mode.values[j] * weights[j];
                    }
                }
            }
        }
        let modes = full.into_iter().filter(|m| m.degree <= cutoff).collect();
        Factor {
            kind,
            radius,
            resolution,
            coords,
            points,
            partials,
            second,
            weights,
            diff,
            modes,
        }
    }
}

fn circle(radius: f64, n: usize, cutoff: usize) -> Factor {
    let coords: Vec<Vec<f64>> = (0..n).map(|j| vec![2.0 * PI * j as f64 / n as f64]).collect();
    let weights = vec![2.0 * PI * radius / n as f64; n];
    let c0 = 1.0 / (2.0 * PI * radius).sqrt();
    let c1 = 1.0 / (PI * radius).sqrt();
    let mut full = Vec::new();
    // frequencies strictly below Nyquist
    let max_m = (n - 1) / 2;
    for m in 0..=max_m {
        let lap = (m * m) as f64 / (radius * radius);
        if m == 0 {
            full.push(FactorMode {
                label: (0, 0),
                degree: 0,
                laplace: 0.0,
                values: vec![c0; n],
                derivs: vec![vec![0.0; n]],
            });
            continue;
        }
        let mf = m as f64;
        let phis: Vec<f64> = coords.iter().map(|c| c[0]).collect();
        full.push(FactorMode {
            label: (m as i32, 0),
            degree: m,
            laplace: lap,
            values: phis.iter().map(|p| c1 * (mf * p).cos()).collect(),
            derivs: vec![phis.iter().map(|p| -c1 * mf * (mf * p).sin()).collect()],
        });
        full.push(FactorMode {
            label: (-(m as i32), 0),
            degree: m,
            laplace: lap,
            values: phis.iter().map(|p| c1 * (mf * p).sin()).collect(),
            derivs: vec![phis.iter().map(|p| c1 * mf * (mf * p).cos()).collect()],
        });
    }
    Factor::finish(FactorKind::Circle, radius, n, coords, weights, full, cutoff)
}

/// Orthonormal associated Legendre functions `pbar[l][m]` at x = cos(polar),
/// normalized so that the real spherical harmonics built from them are
/// orthonormal on the unit sphere. No Condon–Shortley phase.
pub(crate) fn normalized_legendre(lmax: usize, x: f64) -> Vec<Vec<f64>> {
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut p = vec![vec![0.0; lmax + 1]; lmax + 1];
    p[0][0] = 1.0 / (4.0 * PI).sqrt();
    for m in 1..=lmax {
        let mf = m as f64;
        p[m][m] = ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * p[m - 1][m - 1];
    }
    for m in 0..lmax {
        p[m + 1][m] = (2.0 * m as f64 + 3.0).sqrt() * x * p[m][m];
    }
    for m in 0..=lmax {
        for l in (m + 2)..=lmax {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            p[l][m] = a * (x * p[l - 1][m] - b * p[l - 2][m]);
        }
    }
    p
}

fn sphere(radius: f64, n: usize, cutoff: usize) -> Factor {
    let nphi = n;
    let ntheta = n / 2;
    let (xs, wx) = gauss_legendre(ntheta);
    let mut coords = Vec::with_capacity(ntheta * nphi);
    let mut weights = Vec::with_capacity(ntheta * nphi);
    // polar angle descending in x so the first ring is near the north pole
    for it in 0..ntheta {
        let x = xs[ntheta - 1 - it];
        let wt = wx[ntheta - 1 - it];
        for ip in 0..nphi {
            coords.push(vec![x.acos(), 2.0 * PI * ip as f64 / nphi as f64]);
            weights.push(radius * radius * wt * 2.0 * PI / nphi as f64);
        }
    }
    let lmax = ntheta - 1;
    let mmax = (nphi - 1) / 2;
    let tables: Vec<Vec<Vec<f64>>> = coords
        .iter()
        .map(|c| normalized_legendre(lmax, c[0].cos()))
        .collect();
    let mut full = Vec::new();
    let nn = coords.len();
    for l in 0..=lmax {
        let lf = l as f64;
        for m in 0..=l.min(mmax) {
            let mf = m as f64;
            let lap = lf * (lf + 1.0) / (radius * radius);
            let mut pv = vec![0.0; nn];
            let mut dpv = vec![0.0; nn];
            for i in 0..nn {
                let t = coords[i][0];
                let x = t.cos();
                let s = t.sin();
                let plm = tables[i][l][m];
                let prev = if l > m { tables[i][l - 1][m] } else { 0.0 };
                let coef = if l >= 1 {
                    ((2.0 * lf + 1.0) * (lf - mf) * (lf + mf) / (2.0 * lf - 1.0)).sqrt()
                } else {
                    0.0
                };
                pv[i] = plm / radius;
                dpv[i] = (lf * x * plm - coef * prev) / s / radius;
            }
            if m == 0 {
                full.push(FactorMode {
                    label: (l as i32, 0),
                    degree: l,
                    laplace: lap,
                    values: pv,
                    derivs: vec![dpv, vec![0.0; nn]],
                });
                continue;
            }
            let r2 = 2f64.sqrt();
            let mut vc = vec![0.0; nn];
            let mut vs = vec![0.0; nn];
            let mut dc = [vec![0.0; nn], vec![0.0; nn]];
            let mut ds = [vec![0.0; nn], vec![0.0; nn]];
            for i in 0..nn {
                let phi = coords[i][1];
                let (cm, sm) = ((mf * phi).cos(), (mf * phi).sin());
                vc[i] = r2 * pv[i] * cm;
                vs[i] = r2 * pv[i] * sm;
                dc[0][i] = r2 * dpv[i] * cm;
                ds[0][i] = r2 * dpv[i] * sm;
                dc[1][i] = -r2 * pv[i] * mf * sm;
                ds[1][i] = r2 * pv[i] * mf * cm;
            }
            let [dc0, dc1] = dc;
            let [ds0, ds1] = ds;
            full.push(FactorMode {
                label: (l as i32, m as i32),
                degree: l,
                laplace: lap,
                values: vc,
                derivs: vec![dc0, dc1],
            });
            full.push(FactorMode {
                label: (l as i32, -(m as i32)),
                degree: l,
                laplace: lap,
                values: vs,
                derivs: vec![ds0, ds1],
            });
        }
    }
    Factor::finish(FactorKind::Sphere, radius, n, coords, weights, full, cutoff)
}
