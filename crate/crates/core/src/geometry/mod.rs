//! Discrete cross-sections of the built-in stationary cone families.
//!
//! Every cross-section is a tensor product of round circles and round
//! 2-spheres, embedded isometrically in the unit sphere of R^{n+k}:
//!
//! * `Plane(n, k)`: the great sphere S^{n-1} x {0} with a constant normal frame.
//! * `SphereProduct(p, q)`: S^p(a) x S^q(b) with a = sqrt(p/(p+q)),
//!   b = sqrt(q/(p+q)) and unit normal (b x, -a y).
//! * `CliffordTorus`: `SphereProduct(1, 1)`.
//!
//! Frames come from analytic derivatives of the embedding and the second
//! fundamental form from second derivatives projected on the normal frame.

mod factor;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use factor::{Factor, FactorKind, FactorMode};

use crate::error::{Error, Result};

pub const MIN_RESOLUTION: usize = 8;
pub const SNAPSHOT_VERSION: &str = "epilab.cross-section/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeFamily {
    Plane { n: usize, k: usize },
    CliffordTorus,
    SphereProduct { p: usize, q: usize },
}

impl ConeFamily {
    /// Dimension n of the cone.
    pub fn cone_dim(&self) -> usize {
        match *self {
            ConeFamily::Plane { n, .. } => n,
            ConeFamily::CliffordTorus => 3,
            ConeFamily::SphereProduct { p, q } => p + q + 1,
        }
    }

    pub fn codim(&self) -> usize {
        match *self {
            ConeFamily::Plane { k, .. } => k,
            _ => 1,
        }
    }

    fn factor_kinds(&self) -> Result<Vec<FactorKind>> {
        let kind = |d: usize| match d {
            1 => Ok(FactorKind::Circle),
            2 => Ok(FactorKind::Sphere),
            _ => Err(Error::UnsupportedFamily(format!(
                "{self}: only circle and 2-sphere factors are built in"
            ))),
        };
        match *self {
            ConeFamily::Plane { n, k } => {
                if k == 0 {
                    return Err(Error::UnsupportedFamily(format!("{self}: k >= 1 required")));
                }
                if n < 2 {
                    return Err(Error::UnsupportedFamily(format!("{self}: n >= 2 required")));
                }
                Ok(vec![kind(n - 1)?])
            }
            ConeFamily::CliffordTorus => Ok(vec![FactorKind::Circle, FactorKind::Circle]),
            ConeFamily::SphereProduct { p, q } => {
                if p == 0 || q == 0 {
                    return Err(Error::UnsupportedFamily(format!("{self}: p, q >= 1 required")));
                }
                Ok(vec![kind(p)?, kind(q)?])
            }
        }
    }

    /// Default per-factor grid size at reference resolution.
    pub fn reference_resolution(&self) -> usize {
        match *self {
            ConeFamily::Plane { n: 2, .. } => 32,
            ConeFamily::SphereProduct { p: 2, q: 2 } => 8,
            _ => 16,
        }
    }

    /// Analytic |B|^2, constant on every built-in family.
    pub fn sff_norm_sq(&self) -> f64 {
        match *self {
            ConeFamily::Plane { .. } => 0.0,
            ConeFamily::CliffordTorus => 2.0,
            ConeFamily::SphereProduct { p, q } => (p + q) as f64,
        }
    }

    /// Analytic H^{n-1}(cross-section).
    pub fn analytic_area(&self) -> f64 {
        let sphere_area = |d: usize, r: f64| match d {
            1 => 2.0 * PI * r,
            2 => 4.0 * PI * r * r,
            _ => f64::NAN,
        };
        match *self {
            ConeFamily::Plane { n, .. } => sphere_area(n - 1, 1.0),
            ConeFamily::CliffordTorus => 2.0 * PI * PI,
            ConeFamily::SphereProduct { p, q } => {
                let (a, b) = product_radii(p, q);
                sphere_area(p, a) * sphere_area(q, b)
            }
        }
    }
}

pub fn product_radii(p: usize, q: usize) -> (f64, f64) {
    let s = (p + q) as f64;
    ((p as f64 / s).sqrt(), (q as f64 / s).sqrt())
}

impl fmt::Display for ConeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConeFamily::Plane { n, k } => write!(f, "plane:{n},{k}"),
            ConeFamily::CliffordTorus => write!(f, "clifford"),
            ConeFamily::SphereProduct { p, q } => write!(f, "sphere-product:{p},{q}"),
        }
    }
}

impl FromStr for ConeFamily {
    type Err = Error;

    /// Accepts `plane:N,K`, `clifford` and `sphere-product:P,Q`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnsupportedFamily(s.to_string());
        let pair = |rest: &str| -> Result<(usize, usize)> {
            let mut it = rest.split(',').map(|t| t.trim().parse::<usize>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
                _ => Err(bad()),
            }
        };
        let s_l = s.trim().to_ascii_lowercase();
        if s_l == "clifford" || s_l == "clifford-torus" {
            return Ok(ConeFamily::CliffordTorus);
        }
        if let Some(rest) = s_l.strip_prefix("plane:") {
            let (n, k) = pair(rest)?;
            return Ok(ConeFamily::Plane { n, k });
        }
        if let Some(rest) = s_l.strip_prefix("sphere-product:") {
            let (p, q) = pair(rest)?;
            return Ok(ConeFamily::SphereProduct { p, q });
        }
        Err(bad())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub family: ConeFamily,
    /// Grid size per factor (points along each azimuthal circle).
    pub resolution: Vec<usize>,
    /// Oversampling of the retained harmonic band: the cutoff degree is
    /// `resolution / (2 * quadrature_order)`.
    pub quadrature_order: usize,
}

impl ConeSpec {
    pub fn new(family: ConeFamily) -> Self {
        let r = family.reference_resolution();
        Self::with_resolution(family, r)
    }

    pub fn with_resolution(family: ConeFamily, resolution: usize) -> Self {
        let factors = family.factor_kinds().map(|v| v.len()).unwrap_or(1);
        ConeSpec { family, resolution: vec![resolution; factors], quadrature_order: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        let kinds = self.family.factor_kinds()?;
        if self.resolution.len() != kinds.len() {
            return Err(Error::LengthMismatch { expected: kinds.len(), got: self.resolution.len() });
        }
        for &r in &self.resolution {
            if r < MIN_RESOLUTION {
                return Err(Error::ResolutionTooLow { got: r, min: MIN_RESOLUTION });
            }
            if r % 2 != 0 {
                return Err(Error::InvalidParameter(format!("resolution {r} must be even")));
            }
        }
        if self.quadrature_order < 2 {
            return Err(Error::QuadratureOrder(self.quadrature_order));
        }
        Ok(())
    }

    /// Doubled grid, same family.
    pub fn refined(&self) -> Self {
        let mut s = self.clone();
        s.resolution.iter_mut().for_each(|r| *r *= 2);
        s
    }
}

/// The discretized cross-section Sigma of a cone, with frames and curvature.
///
/// Per-node arrays are flattened node-major. With `d = dim_sigma`,
/// `k = codim`, `N = ambient`:
/// `nodes[i*N..]`, `coord_tangents[(i*d + c)*N..]`,
/// `tangent_frames[(i*d + c)*N..]`, `normal_frames[(i*k + a)*N..]`,
/// `normal_derivs[((i*d + c)*k + a)*N..]`, `metric[i*d + c]`,
/// `sff[((i*k + a)*d + c1)*d + c2]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossSection {
    pub spec: ConeSpec,
    pub dim_sigma: usize,
    pub codim: usize,
    pub ambient: usize,
    pub n_nodes: usize,
    pub nodes: Vec<f64>,
    pub coord_tangents: Vec<f64>,
    pub tangent_frames: Vec<f64>,
    pub normal_frames: Vec<f64>,
    pub normal_derivs: Vec<f64>,
    /// Diagonal metric coefficients g_cc (coordinates are orthogonal).
    pub metric: Vec<f64>,
    pub weights: Vec<f64>,
    /// Second fundamental form in the orthonormal tangent frame, with
    /// components in the normal frame.
    pub sff: Vec<f64>,
    pub factors: Vec<Factor>,
    /// Factor index and local coordinate of every global coordinate.
    pub coord_owner: Vec<(usize, usize)>,
}

/// How the factors are placed in the ambient space.
#[derive(Debug, Clone, Copy)]
enum Embedding {
    Plane { k: usize },
    Product { a: f64, b: f64 },
}

pub fn build_cross_section(spec: &ConeSpec) -> Result<CrossSection> {
    spec.validate()?;
    let kinds = spec.family.factor_kinds()?;
    let embedding = match spec.family {
        ConeFamily::Plane { k, .. } => Embedding::Plane { k },
        ConeFamily::CliffordTorus => {
            let (a, b) = product_radii(1, 1);
            Embedding::Product { a, b }
        }
        ConeFamily::SphereProduct { p, q } => {
            let (a, b) = product_radii(p, q);
            Embedding::Product { a, b }
        }
    };
    assemble(spec.clone(), &kinds, embedding)
}

/// Product S^p(a) x S^q(sqrt(1 - a^2)) in the unit sphere for an arbitrary
/// radius `a`; minimal only for a = sqrt(p/(p+q)). Used to exercise the
/// stationarity check on non-minimal products.
pub fn build_product_with_radius(p: usize, q: usize, a: f64, resolution: usize) -> Result<CrossSection> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::InvalidParameter(format!("radius {a} outside (0, 1)")));
    }
    let spec = ConeSpec::with_resolution(ConeFamily::SphereProduct { p, q }, resolution);
    spec.validate()?;
    let kinds = spec.family.factor_kinds()?;
    assemble(spec, &kinds, Embedding::Product { a, b: (1.0 - a * a).sqrt() })
}

fn assemble(spec: ConeSpec, kinds: &[FactorKind], embedding: Embedding) -> Result<CrossSection> {
    let radii: Vec<f64> = match embedding {
        Embedding::Plane { .. } => vec![1.0],
        Embedding::Product { a, b } => vec![a, b],
    };
    let factors: Vec<Factor> = kinds
        .iter()
        .zip(&radii)
        .zip(&spec.resolution)
        .map(|((&kind, &r), &res)| Factor::new(kind, r, res, res / (2 * spec.quadrature_order)))
        .collect();
    let d: usize = kinds.iter().map(|k| k.dim()).sum();
    let k = spec.family.codim();
    let amb: usize = match embedding {
        Embedding::Plane { k } => kinds[0].ambient() + k,
        Embedding::Product { .. } => kinds.iter().map(|k| k.ambient()).sum(),
    };
    let coord_owner: Vec<(usize, usize)> = factors
        .iter()
        .enumerate()
        .flat_map(|(f, fac)| (0..fac.dim()).map(move |c| (f, c)))
        .collect();
    let sizes: Vec<usize> = factors.iter().map(|f| f.len()).collect();
    let m: usize = sizes.iter().product();

    let mut cs = CrossSection {
        spec,
        dim_sigma: d,
        codim: k,
        ambient: amb,
        n_nodes: m,
        nodes: vec![0.0; m * amb],
        coord_tangents: vec![0.0; m * d * amb],
        tangent_frames: vec![0.0; m * d * amb],
        normal_frames: vec![0.0; m * k * amb],
        normal_derivs: vec![0.0; m * d * k * amb],
        metric: vec![0.0; m * d],
        weights: vec![0.0; m],
        sff: vec![0.0; m * k * d * d],
        factors,
        coord_owner,
    };

    for i in 0..m {
        let local = cs.factor_indices(i);
        let mut w = 1.0;
        for (f, &li) in local.iter().enumerate() {
            w *= cs.factors[f].weights[li];
        }
        cs.weights[i] = w;

        // point, tangents, second derivatives and normal(s) in the ambient space
        let mut theta = vec![0.0; amb];
        let mut tang = vec![vec![0.0; amb]; d];
        let mut hess = vec![vec![vec![0.0; amb]; d]; d];
        let mut normals = vec![vec![0.0; amb]; k];
        let mut dnormals = vec![vec![vec![0.0; amb]; k]; d];
        match embedding {
            Embedding::Plane { k } => {
                let fac = &cs.factors[0];
                let li = local[0];
                let e = fac.kind.ambient();
                theta[..e].copy_from_slice(&fac.points[li]);
                for c in 0..d {
                    tang[c][..e].copy_from_slice(&fac.partials[li][c]);
                    for c2 in 0..d {
                        hess[c][c2][..e].copy_from_slice(&fac.second[li][c][c2]);
                    }
                }
                for a in 0..k {
                    normals[a][e + a] = 1.0;
                }
            }
            Embedding::Product { a: ra, b: rb } => {
                let (f0, f1) = (&cs.factors[0], &cs.factors[1]);
                let (l0, l1) = (local[0], local[1]);
                let e0 = f0.kind.ambient();
                let e1 = f1.kind.ambient();
                let d0 = f0.dim();
                for j in 0..e0 {
                    theta[j] = ra * f0.points[l0][j];
                    normals[0][j] = rb * f0.points[l0][j];
                }
                for j in 0..e1 {
                    theta[e0 + j] = rb * f1.points[l1][j];
                    normals[0][e0 + j] = -ra * f1.points[l1][j];
                }
                for c in 0..d0 {
                    for j in 0..e0 {
                        tang[c][j] = ra * f0.partials[l0][c][j];
                        dnormals[c][0][j] = rb * f0.partials[l0][c][j];
                        for c2 in 0..d0 {
                            hess[c][c2][j] = ra * f0.second[l0][c][c2][j];
                        }
                    }
                }
                for c in 0..f1.dim() {
                    for j in 0..e1 {
                        tang[d0 + c][e0 + j] = rb * f1.partials[l1][c][j];
                        dnormals[d0 + c][0][e0 + j] = -ra * f1.partials[l1][c][j];
                        for c2 in 0..f1.dim() {
                            hess[d0 + c][d0 + c2][e0 + j] = rb * f1.second[l1][c][c2][j];
                        }
                    }
                }
            }
        }

        cs.nodes[i * amb..(i + 1) * amb].copy_from_slice(&theta);
        for c in 0..d {
            let g = dot(&tang[c], &tang[c]);
            cs.metric[i * d + c] = g;
            let base = (i * d + c) * amb;
            cs.coord_tangents[base..base + amb].copy_from_slice(&tang[c]);
            let inv = 1.0 / g.sqrt();
            for j in 0..amb {
                cs.tangent_frames[base + j] = tang[c][j] * inv;
            }
            for a in 0..k {
                let nb = ((i * d + c) * k + a) * amb;
                cs.normal_derivs[nb..nb + amb].copy_from_slice(&dnormals[c][a]);
            }
        }
        for a in 0..k {
            let nb = (i * k + a) * amb;
            cs.normal_frames[nb..nb + amb].copy_from_slice(&normals[a]);
            for c1 in 0..d {
                for c2 in 0..d {
                    let s = (cs.metric[i * d + c1] * cs.metric[i * d + c2]).sqrt();
                    cs.sff[((i * k + a) * d + c1) * d + c2] = dot(&hess[c1][c2], &normals[a]) / s;
                }
            }
        }
    }
    Ok(cs)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CrossSection {
    pub fn family(&self) -> ConeFamily {
        self.spec.family
    }

    /// n, the dimension of the cone.
    pub fn cone_dim(&self) -> usize {
        self.dim_sigma + 1
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.ambient..(i + 1) * self.ambient]
    }

    pub fn coord_tangent(&self, i: usize, c: usize) -> &[f64] {
        let b = (i * self.dim_sigma + c) * self.ambient;
        &self.coord_tangents[b..b + self.ambient]
    }

    pub fn tangent(&self, i: usize, c: usize) -> &[f64] {
        let b = (i * self.dim_sigma + c) * self.ambient;
        &self.tangent_frames[b..b + self.ambient]
    }

    pub fn normal(&self, i: usize, a: usize) -> &[f64] {
        let b = (i * self.codim + a) * self.ambient;
        &self.normal_frames[b..b + self.ambient]
    }

    pub fn normal_deriv(&self, i: usize, c: usize, a: usize) -> &[f64] {
        let b = ((i * self.dim_sigma + c) * self.codim + a) * self.ambient;
        &self.normal_derivs[b..b + self.ambient]
    }

    pub fn sff_component(&self, i: usize, a: usize, c1: usize, c2: usize) -> f64 {
        let d = self.dim_sigma;
        self.sff[((i * self.codim + a) * d + c1) * d + c2]
    }

    /// |B|^2 at node i.
    pub fn sff_norm_sq(&self, i: usize) -> f64 {
        let d = self.dim_sigma;
        let b = i * self.codim * d * d;
        self.sff[b..b + self.codim * d * d].iter().map(|v| v * v).sum()
    }

    /// Mean curvature vector coefficients (trace of B) at node i.
    pub fn mean_curvature(&self, i: usize) -> Vec<f64> {
        (0..self.codim)
            .map(|a| (0..self.dim_sigma).map(|c| self.sff_component(i, a, c, c)).sum())
            .collect()
    }

    /// Per-factor local indices of global node i.
    pub fn factor_indices(&self, i: usize) -> Vec<usize> {
        let mut out = vec![0; self.factors.len()];
        let mut rest = i;
        for f in (0..self.factors.len()).rev() {
            let len = self.factors[f].len();
            out[f] = rest % len;
            rest /= len;
        }
        out
    }

    /// Area of Sigma by quadrature.
    pub fn area(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn analytic_area(&self) -> f64 {
        self.factors.iter().map(|f| f.area()).product()
    }

    /// Grid derivatives of a node-major field with `comps` components.
    /// Output layout: `out[(i*d + c)*comps + a]`.
    pub fn coord_derivatives(&self, values: &[f64], comps: usize) -> Vec<f64> {
        let d = self.dim_sigma;
        let m = self.n_nodes;
        let mut out = vec![0.0; m * d * comps];
        let (sizes, strides) = self.strides();
        for (c, &(f, lc)) in self.coord_owner.iter().enumerate() {
            let n = sizes[f];
            let stride = strides[f];
            let dm = &self.factors[f].diff[lc];
            for i in 0..m {
                let li = (i / stride) % n;
                let base = i - li * stride;
                let row = &dm[li * n..(li + 1) * n];
                for a in 0..comps {
                    let mut acc = 0.0;
                    for (j, &r) in row.iter().enumerate() {
                        if r != 0.0 {
                            acc += r * values[(base + j * stride) * comps + a];
                        }
                    }
                    out[(i * d + c) * comps + a] = acc;
                }
            }
        }
        out
    }

    fn strides(&self) -> (Vec<usize>, Vec<usize>) {
        let sizes: Vec<usize> = self.factors.iter().map(|f| f.len()).collect();
        let mut strides = vec![1usize; sizes.len()];
        for f in (0..sizes.len().saturating_sub(1)).rev() {
            strides[f] = strides[f + 1] * sizes[f + 1];
        }
        (sizes, strides)
    }

    /// Adjoint of [`coord_derivatives`](Self::coord_derivatives), accumulated
    /// into `out` (node-major, `comps` components).
    pub fn coord_derivatives_adjoint(&self, q: &[f64], comps: usize, out: &mut [f64]) {
        let d = self.dim_sigma;
        let (sizes, strides) = self.strides();
        for (c, &(f, lc)) in self.coord_owner.iter().enumerate() {
            let n = sizes[f];
            let stride = strides[f];
            let dm = &self.factors[f].diff[lc];
            for i in 0..self.n_nodes {
                let li = (i / stride) % n;
                let base = i - li * stride;
                let row = &dm[li * n..(li + 1) * n];
                for a in 0..comps {
                    let qi = q[(i * d + c) * comps + a];
                    if qi == 0.0 {
                        continue;
                    }
                    for (j, &r) in row.iter().enumerate() {
                        out[(base + j * stride) * comps + a] += r * qi;
                    }
                }
            }
        }
    }

    /// Pairs of distinct nodes at most `reach` grid steps apart along one
    /// grid axis (azimuthal axes wrap around).
    pub fn grid_neighbours(&self, reach: usize) -> Vec<(usize, usize)> {
        let (_, strides) = self.strides();
        let mut pairs = Vec::new();
        for i in 0..self.n_nodes {
            let local = self.factor_indices(i);
            for (f, fac) in self.factors.iter().enumerate() {
                let li = local[f];
                // (axis length, axis stride inside the factor, periodic)
                let axes: Vec<(usize, usize, bool)> = match fac.kind {
                    FactorKind::Circle => vec![(fac.len(), 1, true)],
                    FactorKind::Sphere => {
                        let nphi = fac.resolution;
                        vec![(fac.len() / nphi, nphi, false), (nphi, 1, true)]
                    }
                };
                for (len, step, periodic) in axes {
                    let pos = (li / step) % len;
                    for s in 1..=reach.min(len.saturating_sub(1)) {
                        let next = if periodic {
                            (pos + s) % len
                        } else if pos + s < len {
                            pos + s
                        } else {
                            continue;
                        };
                        if periodic && 2 * s > len {
                            continue;
                        }
                        let lj = li - pos * step + next * step;
                        let j = i - li * strides[f] + lj * strides[f];
                        pairs.push((i, j));
                    }
                }
            }
        }
        pairs
    }

    /// Weighted sum of a per-node scalar.
    pub fn quadrature(&self, f: &[f64]) -> Result<f64> {
        quadrature(self, f)
    }

    pub fn snapshot(&self) -> CrossSectionSnapshot {
        CrossSectionSnapshot {
            version: SNAPSHOT_VERSION.to_string(),
            spec: self.spec.clone(),
            dim_sigma: self.dim_sigma,
            codim: self.codim,
            ambient: self.ambient,
            nodes: self.nodes.clone(),
            tangent_frames: self.tangent_frames.clone(),
            normal_frames: self.normal_frames.clone(),
            weights: self.weights.clone(),
            sff: self.sff.clone(),
        }
    }
}

/// Serializable record of a cross-section: nodes, frames, weights and B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSectionSnapshot {
    pub version: String,
    pub spec: ConeSpec,
    pub dim_sigma: usize,
    pub codim: usize,
    pub ambient: usize,
    pub nodes: Vec<f64>,
    pub tangent_frames: Vec<f64>,
    pub normal_frames: Vec<f64>,
    pub weights: Vec<f64>,
    pub sff: Vec<f64>,
}

pub fn quadrature(cs: &CrossSection, f: &[f64]) -> Result<f64> {
    if f.len() != cs.n_nodes {
        return Err(Error::LengthMismatch { expected: cs.n_nodes, got: f.len() });
    }
    Ok(cs.weights.iter().zip(f).map(|(w, v)| w * v).sum())
}

/// Outcome of the first-variation check at the zero field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarityReport {
    pub family: String,
    pub resolution: Vec<usize>,
    /// max over sampled fields of |dA(0)[z]| / ||z||_{H1}
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
    pub samples: usize,
}

/// Sample smooth normal fields and measure the first variation of the
/// renormalized area at zero relative to the H1 norm.
pub fn verify_stationarity(cs: &CrossSection, tol: f64) -> StationarityReport {
    use crate::functional::{first_variation, NormalField};
    let mut fields = vec![NormalField::constant(cs, &vec![1.0; cs.codim])];
    fields.extend(crate::sampler::smooth_probe_fields(cs, 6, 0x5eed));
    let zero = NormalField::zeros(cs);
    let mut residual: f64 = 0.0;
    for z in &fields {
        let h1 = z.norms(cs).h1;
        if h1 == 0.0 {
            continue;
        }
        match first_variation(cs, &zero, z) {
            Ok(fv) => residual = residual.max(fv.value.abs() / h1),
            Err(_) => residual = f64::INFINITY,
        }
    }
    StationarityReport {
        family: cs.family().to_string(),
        resolution: cs.spec.resolution.clone(),
        residual,
        tol,
        pass: residual <= tol,
        samples: fields.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn families() -> Vec<ConeFamily> {
        vec![
            ConeFamily::Plane { n: 2, k: 1 },
            ConeFamily::Plane { n: 3, k: 1 },
            ConeFamily::Plane { n: 2, k: 2 },
            ConeFamily::CliffordTorus,
            ConeFamily::SphereProduct { p: 1, q: 2 },
            ConeFamily::SphereProduct { p: 2, q: 1 },
            ConeFamily::SphereProduct { p: 2, q: 2 },
        ]
    }

    #[test]
    fn frames_are_orthonormal_and_sff_symmetric() {
        for fam in families() {
            let cs = build_cross_section(&ConeSpec::new(fam)).unwrap();
            let (d, k) = (cs.dim_sigma, cs.codim);
            for i in 0..cs.n_nodes {
                let th = cs.node(i);
                assert!((dot(th, th) - 1.0).abs() < 1e-12);
                for c in 0..d {
                    assert!(dot(cs.tangent(i, c), th).abs() < 1e-12);
                    for c2 in 0..d {
                        let e = if c == c2 { 1.0 } else { 0.0 };
                        assert!((dot(cs.tangent(i, c), cs.tangent(i, c2)) - e).abs() < 1e-12);
                    }
                    for a in 0..k {
                        assert!(dot(cs.tangent(i, c), cs.normal(i, a)).abs() < 1e-12);
                    }
                }
                for a in 0..k {
                    assert!(dot(cs.normal(i, a), th).abs() < 1e-12);
                    for b in 0..k {
                        let e = if a == b { 1.0 } else { 0.0 };
                        assert!((dot(cs.normal(i, a), cs.normal(i, b)) - e).abs() < 1e-12);
                    }
                    for c1 in 0..d {
                        for c2 in 0..d {
                            let s = cs.sff_component(i, a, c1, c2) - cs.sff_component(i, a, c2, c1);
                            assert!(s.abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn sff_norm_matches_principal_curvatures() {
        for fam in families() {
            let cs = build_cross_section(&ConeSpec::new(fam)).unwrap();
            for i in 0..cs.n_nodes {
                assert!((cs.sff_norm_sq(i) - fam.sff_norm_sq()).abs() < 1e-10, "{fam}");
                assert!(cs.mean_curvature(i).iter().all(|h| h.abs() < 1e-12), "{fam}");
            }
        }
    }

    #[test]
    fn plane_is_totally_geodesic() {
        let cs = build_cross_section(&ConeSpec::new(ConeFamily::Plane { n: 2, k: 1 })).unwrap();
        assert!(cs.sff.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn quadrature_of_one_is_the_analytic_area() {
        for fam in families() {
            let cs = build_cross_section(&ConeSpec::new(fam)).unwrap();
            let one = vec![1.0; cs.n_nodes];
            let q = quadrature(&cs, &one).unwrap();
            assert!((q - fam.analytic_area()).abs() < 1e-12 * q, "{fam}: {q}");
        }
        let cs = build_cross_section(&ConeSpec::new(ConeFamily::CliffordTorus)).unwrap();
        assert!((cs.area() - 2.0 * PI * PI).abs() < 1e-12);
        let cs = build_cross_section(&ConeSpec::new(ConeFamily::Plane { n: 3, k: 1 })).unwrap();
        assert!((cs.area() - 4.0 * PI).abs() < 1e-12);
        assert_eq!(quadrature(&cs, &vec![0.0; cs.n_nodes]).unwrap(), 0.0);
    }

    #[test]
    fn quadrature_rejects_length_mismatch() {
        let cs = build_cross_section(&ConeSpec::new(ConeFamily::CliffordTorus)).unwrap();
        assert!(matches!(quadrature(&cs, &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let low = ConeSpec::with_resolution(ConeFamily::CliffordTorus, 4);
        assert!(matches!(build_cross_section(&low), Err(Error::ResolutionTooLow { .. })));
        let bad = ConeSpec::new(ConeFamily::SphereProduct { p: 0, q: 2 });
        assert!(matches!(build_cross_section(&bad), Err(Error::UnsupportedFamily(_))));
        let big = ConeSpec::with_resolution(ConeFamily::SphereProduct { p: 3, q: 1 }, 8);
        assert!(matches!(build_cross_section(&big), Err(Error::UnsupportedFamily(_))));
        let mut q = ConeSpec::new(ConeFamily::CliffordTorus);
        q.quadrature_order = 1;
        assert!(matches!(build_cross_section(&q), Err(Error::QuadratureOrder(1))));
    }

    #[test]
    fn family_names_round_trip() {
        for fam in families() {
            assert_eq!(fam.to_string().parse::<ConeFamily>().unwrap(), fam);
        }
        assert!("torus".parse::<ConeFamily>().is_err());
        assert!("plane:2".parse::<ConeFamily>().is_err());
    }

    #[test]
    fn snapshot_serializes_with_version_tag() {
        let cs = build_cross_section(&ConeSpec::with_resolution(ConeFamily::CliffordTorus, 8)).unwrap();
        let snap = cs.snapshot();
        let text = serde_json::to_string(&snap).unwrap();
        let back: CrossSectionSnapshot = serde_json::from_str(&text).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.version, SNAPSHOT_VERSION);
    }
}
