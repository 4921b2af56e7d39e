//! Renormalized areas of spherical graphs and cones, their variations, and
//! the Jacobi operator.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, CrossSection};
use crate::quad::{gauss_legendre_unit, lagrange_diff_matrix, legendre_all};

/// Hölder exponent of the C^{1,alpha} proxy.
pub const HOLDER_ALPHA: f64 = 0.5;
/// Grid reach of the Hölder difference quotients.
pub const HOLDER_REACH: usize = 3;
pub const FIRST_VARIATION_STEP: f64 = 1e-5;
pub const SECOND_VARIATION_STEP: f64 = 1e-3;
pub const DEFAULT_RADIAL_NODES: usize = 32;
pub const RADIAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldNorms {
    pub l2: f64,
    pub h1: f64,
    pub c0: f64,
    pub c1: f64,
    pub holder: f64,
    /// max(c1, holder): the C^{1,alpha} proxy.
    pub c1_alpha: f64,
}

/// A section of the normal bundle over Sigma, stored as normal-frame
/// components per node (node-major, `codim` entries per node).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalField {
    k: usize,
    values: Vec<f64>,
    /// Coefficients in a spectral basis, when known.
    pub coeffs: Option<Vec<f64>>,
    #[serde(skip)]
    norms: OnceLock<FieldNorms>,
}

impl PartialEq for NormalField {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k && self.values == other.values && self.coeffs == other.coeffs
    }
}

impl NormalField {
    pub fn zeros(cs: &CrossSection) -> Self {
        Self::from_values(cs.codim, vec![0.0; cs.n_nodes * cs.codim])
    }

    pub fn constant(cs: &CrossSection, comps: &[f64]) -> Self {
        let mut v = Vec::with_capacity(cs.n_nodes * cs.codim);
        for _ in 0..cs.n_nodes {
            v.extend_from_slice(&comps[..cs.codim]);
        }
        Self::from_values(cs.codim, v)
    }

    pub fn from_values(k: usize, values: Vec<f64>) -> Self {
        NormalField { k, values, coeffs: None, norms: OnceLock::new() }
    }

    /// Builds a field from per-node ambient vectors by projecting on the
    /// normal frame.
    pub fn from_ambient(cs: &CrossSection, ambient: &[f64]) -> Self {
        let n = cs.ambient;
        let mut v = vec![0.0; cs.n_nodes * cs.codim];
        for i in 0..cs.n_nodes {
            for a in 0..cs.codim {
                v[i * cs.codim + a] = dot(cs.normal(i, a), &ambient[i * n..(i + 1) * n]);
            }
        }
        Self::from_values(cs.codim, v)
    }

    pub fn codim(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access; invalidates cached norms.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.norms = OnceLock::new();
        self.coeffs = None;
        &mut self.values
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn check(&self, cs: &CrossSection) -> Result<()> {
        if self.k != cs.codim || self.values.len() != cs.n_nodes * cs.codim {
            return Err(Error::LengthMismatch {
                expected: cs.n_nodes * cs.codim,
                got: self.values.len(),
            });
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = Self::from_values(self.k, self.values.iter().map(|v| v * s).collect());
        out.coeffs = self.coeffs.as_ref().map(|c| c.iter().map(|v| v * s).collect());
        out
    }

    /// self + s * other
    pub fn axpy(&self, s: f64, other: &NormalField) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect();
        let mut out = Self::from_values(self.k, values);
        if let (Some(a), Some(b)) = (&self.coeffs, &other.coeffs) {
            out.coeffs = Some(a.iter().zip(b).map(|(x, y)| x + s * y).collect());
        }
        out
    }

    pub fn add(&self, other: &NormalField) -> Self {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &NormalField) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Weighted L2 inner product.
    pub fn inner(&self, cs: &CrossSection, other: &NormalField) -> f64 {
        let k = self.k;
        (0..cs.n_nodes)
            .map(|i| cs.weights[i] * dot(&self.values[i * k..(i + 1) * k], &other.values[i * k..(i + 1) * k]))
            .sum()
    }

    /// Norms, computed once per value state.
    pub fn norms(&self, cs: &CrossSection) -> FieldNorms {
        *self.norms.get_or_init(|| compute_norms(cs, self))
    }

    /// Ambient vector U = sum_a u_a nu_a at node i.
    pub fn ambient_at(&self, cs: &CrossSection, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; cs.ambient];
        for a in 0..self.k {
            let ua = self.values[i * self.k + a];
            for (o, v) in out.iter_mut().zip(cs.normal(i, a)) {
                *o += ua * v;
            }
        }
        out
    }
}

/// Normal-connection coefficient (d_c nu_b) . nu_a at node i.
fn connection(cs: &CrossSection, i: usize, c: usize, b: usize, a: usize) -> f64 {
    dot(cs.normal_deriv(i, c, b), cs.normal(i, a))
}

/// Covariant derivatives of u: layout `[(i*d + c)*k + a]`, coordinate frame.
pub fn covariant_derivatives(cs: &CrossSection, u: &NormalField) -> Vec<f64> {
    let (d, k) = (cs.dim_sigma, cs.codim);
    let mut du = cs.coord_derivatives(u.values(), k);
    for i in 0..cs.n_nodes {
        for c in 0..d {
            for a in 0..k {
                let mut corr = 0.0;
                for b in 0..k {
                    corr += u.values[i * k + b] * connection(cs, i, c, b, a);
                }
                du[(i * d + c) * k + a] += corr;
            }
        }
    }
    du
}

fn compute_norms(cs: &CrossSection, u: &NormalField) -> FieldNorms {
    let (d, k, n) = (cs.dim_sigma, cs.codim, cs.ambient);
    let du = covariant_derivatives(cs, u);
    let mut l2 = 0.0;
    let mut grad2 = 0.0;
    let mut c0: f64 = 0.0;
    let mut c1: f64 = 0.0;
    for i in 0..cs.n_nodes {
        let ui = u.at(i);
        let s: f64 = ui.iter().map(|v| v * v).sum();
        let mut g = 0.0;
        for c in 0..d {
            let inv = 1.0 / cs.metric[i * d + c];
            for a in 0..k {
                g += du[(i * d + c) * k + a].powi(2) * inv;
            }
        }
        l2 += cs.weights[i] * s;
        grad2 += cs.weights[i] * g;
        c0 = c0.max(s.sqrt());
        c1 = c1.max(g.sqrt());
    }
    // ambient differential of U per node in the orthonormal tangent frame
    let mut jac = vec![0.0; cs.n_nodes * d * n];
    let raw = cs.coord_derivatives(u.values(), k);
    for i in 0..cs.n_nodes {
        for c in 0..d {
            let inv = 1.0 / cs.metric[i * d + c].sqrt();
            let row = &mut jac[(i * d + c) * n..(i * d + c + 1) * n];
            for a in 0..k {
                let dua = raw[(i * d + c) * k + a];
                let ua = u.values[i * k + a];
                for ((r, nu), dnu) in row.iter_mut().zip(cs.normal(i, a)).zip(cs.normal_deriv(i, c, a)) {
                    *r += (dua * nu + ua * dnu) * inv;
                }
            }
        }
    }
    let mut holder: f64 = 0.0;
    for (i, j) in cs.grid_neighbours(HOLDER_REACH) {
        // differential as the matrix sum_c dU_c (x) tau_c
        let mut diff2 = 0.0;
        for p in 0..n {
            for q in 0..n {
                let mut v = 0.0;
                for c in 0..d {
                    v += jac[(i * d + c) * n + p] * cs.tangent(i, c)[q]
                        - jac[(j * d + c) * n + p] * cs.tangent(j, c)[q];
                }
                diff2 += v * v;
            }
        }
        let dist: f64 = cs.node(i).iter().zip(cs.node(j)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        if dist > 0.0 {
            holder = holder.max(diff2.sqrt() / dist.powf(HOLDER_ALPHA));
        }
    }
    let c1 = c1.max(c0);
    FieldNorms {
        l2: l2.sqrt(),
        h1: (l2 + grad2).sqrt(),
        c0,
        c1,
        holder,
        c1_alpha: c1.max(holder),
    }
}

/// Per-node evaluation of the graph map theta -> (theta + U)/sqrt(1 + |U|^2)
/// and its area density, with reusable scratch space.
struct GraphKernel<'a> {
    cs: &'a CrossSection,
    u_amb: Vec<f64>,
    uc: Vec<f64>,
    x: Vec<f64>,
    fc: Vec<f64>,
    ur: Vec<f64>,
    v0: Vec<f64>,
    y: Vec<f64>,
    g_uc: Vec<f64>,
    g_u: Vec<f64>,
}

const MAXD: usize = 5;

fn det_small(m: &[[f64; MAXD]; MAXD], n: usize) -> f64 {
    let mut a = *m;
    let mut det = 1.0;
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            a.swap(piv, col);
            det = -det;
        }
        det *= a[col][col];
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for cc in col..n {
                a[r][cc] -= f * a[col][cc];
            }
        }
    }
    det
}

fn inverse_small(m: &[[f64; MAXD]; MAXD], n: usize) -> [[f64; MAXD]; MAXD] {
    let mut a = *m;
    let mut inv = [[0.0; MAXD]; MAXD];
    for (i, row) in inv.iter_mut().enumerate().take(n) {
        row[i] = 1.0;
    }
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        a.swap(piv, col);
        inv.swap(piv, col);
        let p = a[col][col];
        for cc in 0..n {
            a[col][cc] /= p;
            inv[col][cc] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                for cc in 0..n {
                    a[r][cc] -= f * a[col][cc];
                    inv[r][cc] -= f * inv[col][cc];
                }
            }
        }
    }
    inv
}

impl<'a> GraphKernel<'a> {
    fn new(cs: &'a CrossSection) -> Self {
        let (d, n) = (cs.dim_sigma, cs.ambient);
        GraphKernel {
            cs,
            u_amb: vec![0.0; n],
            uc: vec![0.0; d * n],
            x: vec![0.0; n],
            fc: vec![0.0; d * n],
            ur: vec![0.0; n],
            v0: vec![0.0; n],
            y: vec![0.0; d * n],
            g_uc: vec![0.0; d * n],
            g_u: vec![0.0; n],
        }
    }

    /// Fills U, U_c, X and F_c at node i; returns s = sqrt(1 + |U|^2).
    fn prepare(&mut self, i: usize, u: &[f64], du: &[f64]) -> f64 {
        let cs = self.cs;
        let (d, k, n) = (cs.dim_sigma, cs.codim, cs.ambient);
        self.u_amb.iter_mut().for_each(|v| *v = 0.0);
        self.uc.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..k {
            let nu = cs.normal(i, a);
            for p in 0..n {
                self.u_amb[p] += u[a] * nu[p];
            }
            for c in 0..d {
                let dnu = cs.normal_deriv(i, c, a);
                let dua = du[c * k + a];
                for p in 0..n {
                    self.uc[c * n + p] += dua * nu[p] + u[a] * dnu[p];
                }
            }
        }
        let s2 = 1.0 + dot(&self.u_amb, &self.u_amb);
        let s = s2.sqrt();
        let th = cs.node(i);
        for p in 0..n {
            self.x[p] = th[p] + self.u_amb[p];
        }
        for c in 0..d {
            let tc = cs.coord_tangent(i, c);
            let uc = &self.uc[c * n..(c + 1) * n];
            let uu = dot(&self.u_amb, uc);
            for p in 0..n {
                self.fc[c * n + p] = (tc[p] + uc[p]) / s - self.x[p] * uu / (s * s2);
            }
        }
        s
    }

    fn metric_det(&self, i: usize) -> f64 {
        let d = self.cs.dim_sigma;
        self.cs.metric[i * d..(i + 1) * d].iter().product()
    }

    fn gram(&self) -> [[f64; MAXD]; MAXD] {
        let (d, n) = (self.cs.dim_sigma, self.cs.ambient);
        let mut g = [[0.0; MAXD]; MAXD];
        for c in 0..d {
            for e in c..d {
                let v = dot(&self.fc[c * n..(c + 1) * n], &self.fc[e * n..(e + 1) * n]);
                g[c][e] = v;
                g[e][c] = v;
            }
        }
        g
    }

    /// Area density ratio J = sqrt(det G / det g) at node i.
    fn density(&mut self, i: usize, u: &[f64], du: &[f64]) -> Result<f64> {
        self.prepare(i, u, du);
        let det = det_small(&self.gram(), self.cs.dim_sigma);
        if !(det > 0.0) {
            return Err(Error::DegenerateGraph { node: i, det });
        }
        Ok((det / self.metric_det(i)).sqrt())
    }

    /// Density and its partial derivatives with respect to the normal-frame
    /// components u_a and their coordinate derivatives.
    fn density_grad(&mut self, i: usize, u: &[f64], du: &[f64], gu: &mut [f64], gdu: &mut [f64]) -> Result<f64> {
        let cs = self.cs;
        let (d, k, n) = (cs.dim_sigma, cs.codim, cs.ambient);
        let s = self.prepare(i, u, du);
        let s3 = s * s * s;
        let s5 = s3 * s * s;
        let g = self.gram();
        let det = det_small(&g, d);
        if !(det > 0.0) {
            return Err(Error::DegenerateGraph { node: i, det });
        }
        let j = (det / self.metric_det(i)).sqrt();
        let m = inverse_small(&g, d);
        for c in 0..d {
            for p in 0..n {
                let mut v = 0.0;
                for e in 0..d {
                    v += m[c][e] * self.fc[e * n + p];
                }
                self.y[c * n + p] = j * v;
            }
        }
        self.g_u.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..d {
            let yc = &self.y[c * n..(c + 1) * n];
            let ucv = &self.uc[c * n..(c + 1) * n];
            let xy = dot(&self.x, yc);
            let uu = dot(&self.u_amb, ucv);
            let tc = cs.coord_tangent(i, c);
            let mut yt = 0.0;
            for p in 0..n {
                yt += yc[p] * (tc[p] + ucv[p]);
            }
            for p in 0..n {
                self.g_uc[c * n + p] = yc[p] / s - self.u_amb[p] * xy / s3;
                self.g_u[p] += -self.u_amb[p] * yt / s3 - yc[p] * uu / s3 - ucv[p] * xy / s3
                    + 3.0 * self.u_amb[p] * uu * xy / s5;
            }
        }
        for a in 0..k {
            let nu = cs.normal(i, a);
            let mut v = dot(nu, &self.g_u);
            for c in 0..d {
                v += dot(cs.normal_deriv(i, c, a), &self.g_uc[c * n..(c + 1) * n]);
                gdu[c * k + a] = dot(nu, &self.g_uc[c * n..(c + 1) * n]);
            }
            gu[a] = v;
        }
        Ok(j)
    }

    /// Cone density: sqrt(det Gram[F + r dF/dr, dF/dc] / det g).
    fn cone_density(&mut self, i: usize, r: f64, u: &[f64], du: &[f64], dr: &[f64]) -> Result<f64> {
        let cs = self.cs;
        let (d, k, n) = (cs.dim_sigma, cs.codim, cs.ambient);
        let s = self.prepare(i, u, du);
        let s3 = s * s * s;
        self.ur.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..k {
            for (o, nu) in self.ur.iter_mut().zip(cs.normal(i, a)) {
                *o += dr[a] * nu;
            }
        }
        let uur = dot(&self.u_amb, &self.ur);
        for p in 0..n {
            let f = self.x[p] / s;
            let df = self.ur[p] / s - self.x[p] * uur / s3;
            self.v0[p] = f + r * df;
        }
        let mut g = [[0.0; MAXD]; MAXD];
        g[0][0] = dot(&self.v0, &self.v0);
        for c in 0..d {
            let v = dot(&self.v0, &self.fc[c * n..(c + 1) * n]);
            g[0][c + 1] = v;
            g[c + 1][0] = v;
            for e in c..d {
                let w = dot(&self.fc[c * n..(c + 1) * n], &self.fc[e * n..(e + 1) * n]);
                g[c + 1][e + 1] = w;
                g[e + 1][c + 1] = w;
            }
        }
        let det = det_small(&g, d + 1);
        if !(det > 0.0) {
            return Err(Error::DegenerateGraph { node: i, det });
        }
        Ok((det / self.metric_det(i)).sqrt())
    }
}

fn check_size(cs: &CrossSection, u: &NormalField) -> Result<()> {
    u.check(cs)?;
    let c0 = u.max_abs();
    if !c0.is_finite() {
        return Err(Error::FieldTooLarge(c0));
    }
    Ok(())
}

/// Renormalized area of the spherical graph of u.
pub fn area_sigma(cs: &CrossSection, u: &NormalField) -> Result<f64> {
    check_size(cs, u)?;
    let (d, k) = (cs.dim_sigma, cs.codim);
    let du = cs.coord_derivatives(u.values(), k);
    let mut ker = GraphKernel::new(cs);
    let mut total = 0.0;
    for i in 0..cs.n_nodes {
        let j = ker.density(i, u.at(i), &du[i * d * k..(i + 1) * d * k])?;
        total += cs.weights[i] * (j - 1.0);
    }
    Ok(total)
}

/// Gradient of the discrete renormalized area with respect to the nodal
/// normal-frame values (node-major, `codim` per node).
pub fn area_gradient(cs: &CrossSection, u: &NormalField) -> Result<Vec<f64>> {
    check_size(cs, u)?;
    let (d, k) = (cs.dim_sigma, cs.codim);
    let du = cs.coord_derivatives(u.values(), k);
    let mut ker = GraphKernel::new(cs);
    let mut grad = vec![0.0; cs.n_nodes * k];
    let mut q = vec![0.0; cs.n_nodes * d * k];
    for i in 0..cs.n_nodes {
        let w = cs.weights[i];
        let (gu, gdu) = (&mut grad[i * k..(i + 1) * k], &mut q[i * d * k..(i + 1) * d * k]);
        ker.density_grad(i, u.at(i), &du[i * d * k..(i + 1) * d * k], gu, gdu)?;
        gu.iter_mut().for_each(|v| *v *= w);
        gdu.iter_mut().for_each(|v| *v *= w);
    }
    cs.coord_derivatives_adjoint(&q, k, &mut grad);
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstVariation {
    /// Richardson-extrapolated central difference.
    pub value: f64,
    /// Truncation plus round-off estimate.
    pub error: f64,
    /// Exact derivative of the discrete area.
    pub analytic: f64,
    /// Round-off dominates the estimate (step too small for the area scale).
    pub step_limited: bool,
}

/// Directional derivative of t -> area_sigma(u + t zeta) at t = 0.
pub fn first_variation(cs: &CrossSection, u: &NormalField, zeta: &NormalField) -> Result<FirstVariation> {
    zeta.check(cs)?;
    let h = FIRST_VARIATION_STEP;
    let f = |t: f64| area_sigma(cs, &u.axpy(t, zeta));
    let d1 = (f(h)? - f(-h)?) / (2.0 * h);
    let d2 = (f(h / 2.0)? - f(-h / 2.0)?) / h;
    let value = (4.0 * d2 - d1) / 3.0;
    let area = cs.area();
    let roundoff = 4.0 * f64::EPSILON * area / h;
    let trunc = (d2 - d1).abs() / 3.0;
    let grad = area_gradient(cs, u)?;
    let analytic = dot(&grad, zeta.values());
    Ok(FirstVariation { value, error: trunc + roundoff, analytic, step_limited: roundoff > trunc })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondVariation {
    pub value: f64,
    pub error: f64,
}

/// delta^2 A_Sigma(g)[zeta, zeta] by a five-point stencil.
pub fn second_variation_at(cs: &CrossSection, g: &NormalField, zeta: &NormalField) -> Result<SecondVariation> {
    zeta.check(cs)?;
    if zeta.is_zero() {
        return Ok(SecondVariation { value: 0.0, error: 0.0 });
    }
    let h = SECOND_VARIATION_STEP;
    let f = |t: f64| area_sigma(cs, &g.axpy(t, zeta));
    let (fm2, fm1, f0, fp1, fp2) = (f(-2.0 * h)?, f(-h)?, f(0.0)?, f(h)?, f(2.0 * h)?);
    let five = (-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) / (12.0 * h * h);
    let three = (fp1 - 2.0 * f0 + fm1) / (h * h);
    let roundoff = 64.0 * f64::EPSILON * cs.area() / (12.0 * h * h);
    Ok(SecondVariation { value: five, error: (five - three).abs() / 15.0 + roundoff })
}

/// One basis function of the tensor harmonic basis: a product of factor
/// harmonics in one normal direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisFunction {
    pub modes: Vec<usize>,
    pub direction: usize,
    pub laplace: f64,
    pub label: String,
}

impl BasisFunction {
    /// Scalar harmonic value at node i.
    pub fn scalar_at(&self, cs: &CrossSection, local: &[usize]) -> f64 {
        self.modes
            .iter()
            .zip(local)
            .enumerate()
            .map(|(f, (&m, &li))| cs.factors[f].modes[m].values[li])
            .product()
    }
}

/// The Jacobi operator in the tensor harmonic basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobiOperator {
    pub basis: Vec<BasisFunction>,
    /// Symmetric matrix of the quadratic form delta^2 A_Sigma(0).
    pub matrix: DMatrix<f64>,
    /// Stiffness matrix of the normal Laplacian (Dirichlet form).
    pub stiffness: DMatrix<f64>,
    /// Basis values, `values[(b, node*k + a)]`.
    pub values: DMatrix<f64>,
    pub asymmetry: f64,
}

impl JacobiOperator {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// L + s I.
    pub fn shifted(&self, s: f64) -> Self {
        let mut out = self.clone();
        for i in 0..out.dim() {
            out.matrix[(i, i)] += s;
        }
        out
    }

    /// Quadratic form on a coefficient vector.
    pub fn quadratic_form(&self, coeffs: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(coeffs);
        v.dot(&(&self.matrix * &v))
    }

    /// Node values of a coefficient vector.
    pub fn synthesize(&self, k: usize, coeffs: &[f64]) -> NormalField {
        let v = nalgebra::DVector::from_column_slice(coeffs);
        let vals = self.values.tr_mul(&v);
        let mut f = NormalField::from_values(k, vals.as_slice().to_vec());
        f.coeffs = None;
        f
    }
}

fn tensor_basis(cs: &CrossSection) -> Vec<BasisFunction> {
    let mut combos: Vec<Vec<usize>> = vec![vec![]];
    for fac in &cs.factors {
        let mut next = Vec::new();
        for c in &combos {
            for m in 0..fac.modes.len() {
                let mut v = c.clone();
                v.push(m);
                next.push(v);
            }
        }
        combos = next;
    }
    let mut out = Vec::new();
    for modes in combos {
        let laplace: f64 = modes.iter().enumerate().map(|(f, &m)| cs.factors[f].modes[m].laplace).sum();
        let name: Vec<String> = modes
            .iter()
            .enumerate()
            .map(|(f, &m)| cs.factors[f].modes[m].describe(cs.factors[f].kind))
            .collect();
        for a in 0..cs.codim {
            let label = if cs.codim > 1 { format!("{}|n{a}", name.join("*")) } else { name.join("*") };
            out.push(BasisFunction { modes: modes.clone(), direction: a, laplace, label });
        }
    }
    out
}

/// Assembles the second variation L = -Delta^perp - B-term - (n-1) by
/// quadrature in the tensor harmonic basis.
pub fn second_variation_assemble(cs: &CrossSection) -> JacobiOperator {
    let (d, k, m) = (cs.dim_sigma, cs.codim, cs.n_nodes);
    let basis = tensor_basis(cs);
    let nb = basis.len();
    let locals: Vec<Vec<usize>> = (0..m).map(|i| cs.factor_indices(i)).collect();
    let mut values = DMatrix::<f64>::zeros(nb, m * k);
    let mut grads = DMatrix::<f64>::zeros(m * d * k, nb);
    let mut pot = DMatrix::<f64>::zeros(m * k, nb);
    let nm1 = (cs.cone_dim() - 1) as f64;
    for (bi, bf) in basis.iter().enumerate() {
        let a = bf.direction;
        for i in 0..m {
            let local = &locals[i];
            let val = bf.scalar_at(cs, local);
            values[(bi, i * k + a)] = val;
            let w = cs.weights[i];
            for (c, &(f, lc)) in cs.coord_owner.iter().enumerate() {
                let mut dv = 1.0;
                for (g, (&mode, &li)) in bf.modes.iter().zip(local).enumerate() {
                    let fm = &cs.factors[g].modes[mode];
                    dv *= if g == f { fm.derivs[lc][li] } else { fm.values[li] };
                }
                let scale = (w / cs.metric[i * d + c]).sqrt();
                for b in 0..k {
                    let mut comp = if b == a { dv } else { 0.0 };
                    comp += val * connection(cs, i, c, a, b);
                    grads[((i * d + c) * k + b, bi)] = scale * comp;
                }
            }
            for b in 0..k {
                let mut bsq = 0.0;
                for c1 in 0..d {
                    for c2 in 0..d {
                        bsq += cs.sff_component(i, b, c1, c2) * cs.sff_component(i, a, c1, c2);
                    }
                }
                if a == b {
                    bsq += nm1;
                }
                pot[(i * k + b, bi)] = w * bsq * val;
            }
        }
    }
    let stiffness = grads.tr_mul(&grads);
    let mass_pot = &values * &pot;
    let mut matrix = &stiffness - &mass_pot;
    let asymmetry = (&matrix - matrix.transpose()).abs().max();
    matrix = (&matrix + matrix.transpose()) * 0.5;
    let stiffness = (&stiffness + stiffness.transpose()) * 0.5;
    JacobiOperator { basis, matrix, stiffness, values, asymmetry }
}

/// A field on the cone's truncated radial grid: g(r_m, .) at Gauss–Legendre
/// radii with radial derivatives, plus the exact trace at r = 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialField {
    pub radii: Vec<f64>,
    pub radial_weights: Vec<f64>,
    pub slices: Vec<NormalField>,
    pub radial_derivs: Vec<NormalField>,
    pub boundary: NormalField,
}

impl RadialField {
    /// Samples g(r) at Gauss–Legendre radii; the radial derivative is the
    /// exact derivative of the interpolating polynomial.
    pub fn from_fn(n_radial: usize, mut g: impl FnMut(f64) -> NormalField) -> Self {
        let (radii, radial_weights) = gauss_legendre_unit(n_radial);
        let slices: Vec<NormalField> = radii.iter().map(|&r| g(r)).collect();
        let boundary = g(1.0);
        let dm = lagrange_diff_matrix(&radii);
        let k = boundary.codim();
        let len = boundary.values().len();
        let radial_derivs = (0..n_radial)
            .map(|mi| {
                let mut v = vec![0.0; len];
                for (j, s) in slices.iter().enumerate() {
                    let c = dm[mi][j];
                    for (o, x) in v.iter_mut().zip(s.values()) {
                        *o += c * x;
                    }
                }
                NormalField::from_values(k, v)
            })
            .collect();
        RadialField { radii, radial_weights, slices, radial_derivs, boundary }
    }

    /// Samples g and its analytic radial derivative.
    pub fn from_fn_with_derivative(
        n_radial: usize,
        mut g: impl FnMut(f64) -> (NormalField, NormalField),
    ) -> Self {
        let (radii, radial_weights) = gauss_legendre_unit(n_radial);
        let (slices, radial_derivs): (Vec<_>, Vec<_>) = radii.iter().map(|&r| g(r)).unzip();
        let boundary = g(1.0).0;
        RadialField { radii, radial_weights, slices, radial_derivs, boundary }
    }

    /// g(r, .) = c.
    pub fn constant(c: &NormalField, n_radial: usize) -> Self {
        let zero = c.scaled(0.0);
        Self::from_fn_with_derivative(n_radial, |_| (c.clone(), zero.clone()))
    }

    /// g(r, .) = r c.
    pub fn linear(c: &NormalField, n_radial: usize) -> Self {
        let mut out = Self::from_fn_with_derivative(n_radial, |r| (c.scaled(r), c.clone()));
        out.boundary = c.clone();
        out
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn sup_c1_alpha(&self, cs: &CrossSection) -> f64 {
        self.slices.iter().map(|s| s.norms(cs).c1_alpha).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeArea {
    pub value: f64,
    /// Size of the trailing Legendre coefficients of the radial integrand.
    pub radial_error: f64,
}

/// Legendre tail estimate for an integrand sampled at Gauss–Legendre radii.
fn legendre_tail(radii: &[f64], weights: &[f64], f: &[f64]) -> f64 {
    let n = radii.len();
    if n < 4 {
        return 0.0;
    }
    let mut coef = vec![0.0; n];
    for ((r, w), v) in radii.iter().zip(weights).zip(f) {
        let p = legendre_all(n, 2.0 * r - 1.0);
        for (l, c) in coef.iter_mut().enumerate() {
            *c += (2 * l + 1) as f64 * w * v * p[l];
        }
    }
    (coef[n - 1].abs() + coef[n - 2].abs()) / 2.0
}

/// Renormalized area A_C of the cone graph G(r, theta) = r (theta + g)/sqrt(1 + |g|^2).
pub fn area_cone_detailed(cs: &CrossSection, g: &RadialField) -> Result<ConeArea> {
    let (d, k) = (cs.dim_sigma, cs.codim);
    let n = cs.cone_dim() as i32;
    let mut ker = GraphKernel::new(cs);
    let mut slices = Vec::with_capacity(g.len());
    for (mi, &r) in g.radii.iter().enumerate() {
        let s = &g.slices[mi];
        let dr = &g.radial_derivs[mi];
        check_size(cs, s)?;
        dr.check(cs)?;
        let du = cs.coord_derivatives(s.values(), k);
        let mut acc = 0.0;
        for i in 0..cs.n_nodes {
            let j = ker.cone_density(i, r, s.at(i), &du[i * d * k..(i + 1) * d * k], dr.at(i))?;
            acc += cs.weights[i] * (j - 1.0);
        }
        slices.push(acc * r.powi(n - 1));
    }
    let value: f64 = slices.iter().zip(&g.radial_weights).map(|(s, w)| s * w).sum();
    let radial_error = legendre_tail(&g.radii, &g.radial_weights, &slices);
    Ok(ConeArea { value, radial_error })
}

pub fn area_cone(cs: &CrossSection, g: &RadialField) -> Result<f64> {
    let a = area_cone_detailed(cs, g)?;
    if a.radial_error > RADIAL_TOL {
        return Err(Error::RadialGridTooCoarse { estimate: a.radial_error, tol: RADIAL_TOL });
    }
    Ok(a.value)
}

/// Slicing integral and the radial energy of a radial field.
pub fn slicing_terms(cs: &CrossSection, g: &RadialField) -> Result<(f64, f64)> {
    let n = cs.cone_dim() as i32;
    let mut slice_int = 0.0;
    let mut radial = 0.0;
    for (mi, &r) in g.radii.iter().enumerate() {
        let w = g.radial_weights[mi];
        slice_int += w * area_sigma(cs, &g.slices[mi])? * r.powi(n - 1);
        let dr = &g.radial_derivs[mi];
        radial += w * dr.inner(cs, dr) * r.powi(n + 1);
    }
    Ok((slice_int, radial))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicingCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    /// Smallest constant making the margin nonnegative for this field.
    pub c_min: f64,
    pub c_sl: f64,
}

/// Compares A_C(g) with the slicing bound at constant `c_sl`.
pub fn slicing_check(cs: &CrossSection, g: &RadialField, c_sl: f64) -> Result<SlicingCheck> {
    let lhs = area_cone(cs, g)?;
    let (slice_int, radial) = slicing_terms(cs, g)?;
    let factor = (1.0 + g.sup_c1_alpha(cs)) * radial;
    let rhs = slice_int + c_sl * factor;
    let c_min = if factor > 0.0 { ((lhs - slice_int) / factor).max(0.0) } else { 0.0 };
    Ok(SlicingCheck { lhs, rhs, margin: rhs - lhs, c_min, c_sl })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cross_section, ConeFamily, ConeSpec};

    fn smooth_field(cs: &CrossSection, scale: f64) -> NormalField {
        let mut v = vec![0.0; cs.n_nodes * cs.codim];
        for i in 0..cs.n_nodes {
            let th = cs.node(i);
            for a in 0..cs.codim {
                v[i * cs.codim + a] = scale * (0.3 + th[0] * th[1] - 0.5 * th[th.len() - 1] + 0.2 * a as f64 * th[0]);
            }
        }
        NormalField::from_values(cs.codim, v)
    }

    fn cs(fam: ConeFamily) -> CrossSection {
        build_cross_section(&ConeSpec::new(fam)).unwrap()
    }

    #[test]
    fn zero_field_has_zero_area_and_norms() {
        let c = cs(ConeFamily::CliffordTorus);
        let z = NormalField::zeros(&c);
        assert!(area_sigma(&c, &z).unwrap().abs() < 1e-13);
        let n = z.norms(&c);
        assert_eq!(n.h1, 0.0);
        assert_eq!(n.c1_alpha, 0.0);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for fam in [
            ConeFamily::CliffordTorus,
            ConeFamily::Plane { n: 2, k: 2 },
            ConeFamily::SphereProduct { p: 1, q: 2 },
        ] {
            let c = build_cross_section(&ConeSpec::with_resolution(fam, 8)).unwrap();
            let u = smooth_field(&c, 0.2);
            let grad = area_gradient(&c, &u).unwrap();
            for idx in [0usize, 3, c.n_nodes * c.codim / 2 + 1] {
                let mut e = vec![0.0; c.n_nodes * c.codim];
                e[idx] = 1.0;
                let e = NormalField::from_values(c.codim, e);
                let h = 1e-6;
                let fd = (area_sigma(&c, &u.axpy(h, &e)).unwrap() - area_sigma(&c, &u.axpy(-h, &e)).unwrap()) / (2.0 * h);
                assert!((fd - grad[idx]).abs() < 1e-7, "{fam} {idx}: {fd} vs {}", grad[idx]);
            }
        }
    }

    #[test]
    fn l2_is_below_h1() {
        let c = cs(ConeFamily::SphereProduct { p: 1, q: 2 });
        let n = smooth_field(&c, 0.1).norms(&c);
        assert!(n.l2 <= n.h1 && n.c0 <= n.c1 && n.c1 <= n.c1_alpha);
    }

    #[test]
    fn cached_norms_reset_on_mutation() {
        let c = cs(ConeFamily::CliffordTorus);
        let mut u = smooth_field(&c, 0.1);
        let before = u.norms(&c).l2;
        u.values_mut().iter_mut().for_each(|v| *v *= 2.0);
        assert!((u.norms(&c).l2 - 2.0 * before).abs() < 1e-12);
    }

    #[test]
    fn jacobi_matrix_is_symmetric() {
        let c = cs(ConeFamily::SphereProduct { p: 1, q: 2 });
        let op = second_variation_assemble(&c);
        assert!(op.asymmetry < 1e-10, "{}", op.asymmetry);
    }

    #[test]
    fn constant_radial_field_matches_section_area() {
        let c = cs(ConeFamily::CliffordTorus);
        let u = smooth_field(&c, 0.05);
        let g = RadialField::constant(&u, DEFAULT_RADIAL_NODES);
        let lhs = area_cone(&c, &g).unwrap();
        let rhs = area_sigma(&c, &u).unwrap() / 3.0;
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} {rhs}");
    }

    #[test]
    fn interpolated_radial_derivative_is_exact_for_polynomials() {
        let c = cs(ConeFamily::Plane { n: 2, k: 1 });
        let u = smooth_field(&c, 0.05);
        let g = RadialField::from_fn(16, |r| u.scaled(r * r));
        for (m, r) in g.radii.iter().enumerate() {
            let expect = u.scaled(2.0 * r);
            let diff = g.radial_derivs[m].sub(&expect).max_abs();
            assert!(diff < 1e-10);
        }
        assert_eq!(g.boundary, u.scaled(1.0));
    }

    #[test]
    fn first_variation_at_zero_vanishes() {
        let c = cs(ConeFamily::CliffordTorus);
        let fv = first_variation(&c, &NormalField::zeros(&c), &smooth_field(&c, 1.0)).unwrap();
        assert!(fv.value.abs() < 1e-8 && fv.analytic.abs() < 1e-12, "{fv:?}");
    }

    #[test]
    fn small_determinant_helpers() {
        let mut m = [[0.0; MAXD]; MAXD];
        m[0][0] = 2.0;
        m[0][1] = 1.0;
        m[1][0] = 1.0;
        m[1][1] = 3.0;
        m[2][2] = 4.0;
        assert!((det_small(&m, 3) - 20.0).abs() < 1e-12);
        let inv = inverse_small(&m, 3);
        assert!((inv[0][0] - 0.6).abs() < 1e-12 && (inv[2][2] - 0.25).abs() < 1e-12);
    }
}
