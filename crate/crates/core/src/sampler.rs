//! Deterministic boundary-trace ensembles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::functional::NormalField;
use crate::geometry::CrossSection;
use crate::spectral::{ModeClass, SpectralBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    H1,
    /// max(C1, Hölder quotient) proxy of the C^{1,alpha} norm.
    C1Alpha,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceClass {
    PureKernel,
    PurePositive,
    PureNegative,
    /// Kernel and positive modes; the negative part is frozen by the
    /// competitor and only shifts the energy.
    NonNegative,
    Mixed,
}

impl TraceClass {
    fn admits(self, c: ModeClass) -> bool {
        match self {
            TraceClass::Mixed => true,
            TraceClass::PureKernel => c == ModeClass::Kernel,
            TraceClass::PurePositive => c == ModeClass::Positive,
            TraceClass::PureNegative => c == ModeClass::Negative,
            TraceClass::NonNegative => c != ModeClass::Negative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEnsembleSpec {
    pub seed: u64,
    pub count: usize,
    pub norm_target: f64,
    pub norm: NormKind,
    /// Coefficient j is drawn from U[-1, 1] * j^(-decay), j counted from 1
    /// in eigenvalue order.
    pub decay: f64,
    /// Half-open range of eigen indices; `None` means the whole basis.
    pub band: Option<(usize, usize)>,
    pub class: TraceClass,
}

impl TraceEnsembleSpec {
    pub fn new(seed: u64, count: usize, norm_target: f64) -> Self {
        TraceEnsembleSpec {
            seed,
            count,
            norm_target,
            norm: NormKind::C1Alpha,
            decay: 2.0,
            band: None,
            class: TraceClass::Mixed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidParameter("ensemble count must be >= 1".into()));
        }
        if !(self.norm_target >= 0.0 && self.norm_target.is_finite()) {
            return Err(Error::InvalidParameter(format!("norm target {}", self.norm_target)));
        }
        Ok(())
    }

    /// Hex SHA-256 of the JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Generator for trace `index`: the master seed with its own stream.
pub fn trace_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn raw_coefficients(spec: &TraceEnsembleSpec, basis: &SpectralBasis, index: usize) -> Vec<f64> {
    let mut rng = trace_rng(spec.seed, index as u64);
    let (lo, hi) = spec.band.unwrap_or((0, basis.len()));
    (0..basis.len())
        .map(|j| {
            let x: f64 = rng.random_range(-1.0..=1.0);
            let inside = j >= lo && j < hi && spec.class.admits(basis.classes[j]);
            if inside {
                x * ((j + 1) as f64).powf(-spec.decay)
            } else {
                0.0
            }
        })
        .collect()
}

/// Draws one trace by index.
pub fn sample_one(spec: &TraceEnsembleSpec, basis: &SpectralBasis, cs: &CrossSection, index: usize) -> Result<NormalField> {
    let coeffs = raw_coefficients(spec, basis, index);
    if coeffs.iter().all(|&c| c == 0.0) {
        return Err(Error::EmptyBand);
    }
    let field = basis.synthesize(&coeffs);
    let norm = match spec.norm {
        NormKind::H1 => basis.h1_sq(&coeffs).sqrt(),
        NormKind::C1Alpha => field.norms(cs).c1_alpha,
    };
    if norm == 0.0 {
        return Err(Error::EmptyBand);
    }
    Ok(field.scaled(spec.norm_target / norm))
}

/// The full ensemble; identical specs give bit-identical traces regardless
/// of worker count.
pub fn sample(spec: &TraceEnsembleSpec, basis: &SpectralBasis, cs: &CrossSection) -> Result<Vec<NormalField>> {
    spec.validate()?;
    crate::par_map(0..spec.count, |i| sample_one(spec, basis, cs, i)).into_iter().collect()
}

/// Smooth fields built from low-degree tensor harmonics, independent of
/// any spectral basis.
pub fn smooth_probe_fields(cs: &CrossSection, count: usize, seed: u64) -> Vec<NormalField> {
    let k = cs.codim;
    (0..count)
        .map(|t| {
            let mut rng = trace_rng(seed, t as u64);
            let mut v = vec![0.0; cs.n_nodes * k];
            // a handful of product modes of degree <= 2 per factor
            for _ in 0..4 {
                let picks: Vec<usize> = cs
                    .factors
                    .iter()
                    .map(|f| {
                        let low = f.modes.iter().filter(|m| m.degree <= 2).count().max(1);
                        rng.random_range(0..low)
                    })
                    .collect();
                let a = rng.random_range(0..k);
                let amp: f64 = rng.random_range(-1.0..=1.0);
                for i in 0..cs.n_nodes {
                    let local = cs.factor_indices(i);
                    let val: f64 = picks
                        .iter()
                        .zip(&local)
                        .enumerate()
                        .map(|(f, (&m, &li))| cs.factors[f].modes[m].values[li])
                        .product();
                    v[i * k + a] += amp * val;
                }
            }
            NormalField::from_values(k, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::second_variation_assemble;
    use crate::geometry::{build_cross_section, ConeFamily, ConeSpec};
    use crate::spectral::eigendecompose;

    fn setup(fam: ConeFamily) -> (CrossSection, SpectralBasis) {
        let cs = build_cross_section(&ConeSpec::new(fam)).unwrap();
        let b = eigendecompose(&second_variation_assemble(&cs), &cs);
        (cs, b)
    }

    #[test]
    fn h1_rescaling_is_exact() {
        let (cs, b) = setup(ConeFamily::CliffordTorus);
        let mut spec = TraceEnsembleSpec::new(7, 12, 0.02);
        spec.norm = NormKind::H1;
        for c in sample(&spec, &b, &cs).unwrap() {
            let h1 = c.norms(&cs).h1;
            assert!((h1 / 0.02 - 1.0).abs() < 1e-9, "{h1}");
        }
    }

    #[test]
    fn same_seed_same_traces() {
        let (cs, b) = setup(ConeFamily::Plane { n: 2, k: 1 });
        let spec = TraceEnsembleSpec::new(99, 5, 0.01);
        assert_eq!(sample(&spec, &b, &cs).unwrap(), sample(&spec, &b, &cs).unwrap());
    }

    #[test]
    fn pure_kernel_on_plane_is_linear() {
        let (cs, b) = setup(ConeFamily::Plane { n: 2, k: 1 });
        let mut spec = TraceEnsembleSpec::new(3, 4, 0.01);
        spec.class = TraceClass::PureKernel;
        for c in sample(&spec, &b, &cs).unwrap() {
            // a cos(phi) + b sin(phi): fit on two nodes, check everywhere
            let phi = |i: usize| cs.factors[0].coords[i][0];
            let n4 = cs.n_nodes / 4;
            let (a, bb) = (c.values()[0], c.values()[n4]);
            for i in 0..cs.n_nodes {
                let e = a * phi(i).cos() + bb * phi(i).sin();
                assert!((c.values()[i] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn class_filter_is_pure() {
        let (cs, b) = setup(ConeFamily::CliffordTorus);
        let mut spec = TraceEnsembleSpec::new(5, 6, 0.02);
        spec.class = TraceClass::PurePositive;
        for c in sample(&spec, &b, &cs).unwrap() {
            let co = b.coefficients(&cs, &c);
            let off: f64 = co.iter().zip(&b.classes).filter(|(_, &k)| k != ModeClass::Positive).map(|(a, _)| a * a).sum();
            assert!(off <= 1e-24);
        }
    }

    #[test]
    fn empty_band_errors() {
        let (cs, b) = setup(ConeFamily::CliffordTorus);
        let mut spec = TraceEnsembleSpec::new(5, 1, 0.02);
        spec.class = TraceClass::PureKernel;
        spec.band = Some((0, 3));
        assert!(matches!(sample(&spec, &b, &cs), Err(Error::EmptyBand)));
    }
}
