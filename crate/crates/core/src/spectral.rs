//! Eigendecomposition of the Jacobi operator and spectral splitting.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{JacobiOperator, NormalField};
use crate::geometry::CrossSection;

pub const KERNEL_TOL: f64 = 1e-8;
pub const TAIL_TOL: f64 = 1e-8;
pub const BASIS_VERSION: &str = "epilab.spectral-basis/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeClass {
    Negative,
    Kernel,
    Positive,
}

/// Eigenpairs of the Jacobi operator, ascending.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralBasis {
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors in the tensor basis, one column per eigenpair.
    pub coeffs: DMatrix<f64>,
    /// Eigenfields at the nodes.
    pub fields: Vec<NormalField>,
    /// Dirichlet energy of each eigenfield (its Laplace eigenvalue).
    pub laplace: Vec<f64>,
    pub labels: Vec<String>,
    pub classes: Vec<ModeClass>,
    pub kernel: Vec<usize>,
    pub negative: Vec<usize>,
    pub positive: Vec<usize>,
    pub kernel_tol: f64,
    pub gap_minus: Option<f64>,
    pub gap_plus: Option<f64>,
    /// Max |L phi - lambda phi| over eigenpairs.
    pub residual: f64,
    pub codim: usize,
}

/// Diagonalizes L and classifies the spectrum.
pub fn eigendecompose(op: &JacobiOperator, cs: &CrossSection) -> SpectralBasis {
    eigendecompose_with_tol(op, cs, KERNEL_TOL)
}

pub fn eigendecompose_with_tol(op: &JacobiOperator, cs: &CrossSection, kernel_tol: f64) -> SpectralBasis {
    let nb = op.dim();
    let eig = SymmetricEigen::new(op.matrix.clone());
    let mut order: Vec<usize> = (0..nb).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut coeffs = DMatrix::<f64>::zeros(nb, nb);
    let mut eigenvalues = Vec::with_capacity(nb);
    for (j, &o) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(o).into_owned();
        // sign convention: largest entry positive
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        coeffs.set_column(j, &col);
        eigenvalues.push(eig.eigenvalues[o]);
    }
    let lc = &op.matrix * &coeffs;
    let mut residual: f64 = 0.0;
    for j in 0..nb {
        let r = lc.column(j) - coeffs.column(j) * eigenvalues[j];
        residual = residual.max(r.amax());
    }
    let values = op.values.tr_mul(&coeffs);
    let mut fields = Vec::with_capacity(nb);
    let mut laplace = Vec::with_capacity(nb);
    let mut labels = Vec::with_capacity(nb);
    let mut classes = Vec::with_capacity(nb);
    let (mut kernel, mut negative, mut positive) = (vec![], vec![], vec![]);
    for j in 0..nb {
        let col = coeffs.column(j);
        let mut f = NormalField::from_values(cs.codim, values.column(j).iter().copied().collect());
        let mut e = vec![0.0; nb];
        e[j] = 1.0;
        f.coeffs = Some(e);
        fields.push(f);
        laplace.push(col.dot(&(&op.stiffness * col)));
        labels.push(op.basis[col.iamax()].label.clone());
        let lam = eigenvalues[j];
        let class = if lam.abs() <= kernel_tol {
            kernel.push(j);
            ModeClass::Kernel
        } else if lam < 0.0 {
            negative.push(j);
            ModeClass::Negative
        } else {
            positive.push(j);
            ModeClass::Positive
        };
        classes.push(class);
    }
    let gap_minus = negative.last().map(|&j| eigenvalues[j]);
    let gap_plus = positive.first().map(|&j| eigenvalues[j]);
    SpectralBasis {
        eigenvalues,
        coeffs,
        fields,
        laplace,
        labels,
        classes,
        kernel,
        negative,
        positive,
        kernel_tol,
        gap_minus,
        gap_plus,
        residual,
        codim: cs.codim,
    }
}

/// Pre-reduction splitting c = c_K + c_- + c_+.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Projection {
    pub coeffs: Vec<f64>,
    pub kernel: NormalField,
    pub minus: NormalField,
    pub plus: NormalField,
    /// Fraction of the L2 energy outside the basis span.
    pub tail: f64,
}

impl SpectralBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn ell(&self) -> usize {
        self.kernel.len()
    }

    /// min(|gap_minus|, gap_plus).
    pub fn gap(&self) -> f64 {
        let m = self.gap_minus.map(f64::abs).unwrap_or(f64::INFINITY);
        let p = self.gap_plus.unwrap_or(f64::INFINITY);
        m.min(p)
    }

    /// Fails when a nonzero eigenvalue sits within 10 kernel tolerances of 0.
    pub fn check_gap(&self) -> Result<()> {
        let bound = 10.0 * self.kernel_tol;
        let gm = self.gap_minus.unwrap_or(f64::NEG_INFINITY);
        let gp = self.gap_plus.unwrap_or(f64::INFINITY);
        if gm.abs() < bound || gp < bound {
            return Err(Error::DegenerateGap { gap_minus: gm, gap_plus: gp });
        }
        Ok(())
    }

    /// Node values of a coefficient vector in the eigenbasis.
    pub fn synthesize(&self, coeffs: &[f64]) -> NormalField {
        let len = self.fields.first().map(|f| f.values().len()).unwrap_or(0);
        let mut v = vec![0.0; len];
        for (c, f) in coeffs.iter().zip(&self.fields) {
            if *c != 0.0 {
                for (o, x) in v.iter_mut().zip(f.values()) {
                    *o += c * x;
                }
            }
        }
        let mut out = NormalField::from_values(self.codim, v);
        out.coeffs = Some(coeffs.to_vec());
        out
    }

    /// Weighted L2 coefficients <c, phi_j>.
    pub fn coefficients(&self, cs: &CrossSection, c: &NormalField) -> Vec<f64> {
        if let Some(co) = &c.coeffs {
            if co.len() == self.len() {
                return co.clone();
            }
        }
        let k = self.codim;
        let wc: Vec<f64> = (0..cs.n_nodes * k).map(|idx| cs.weights[idx / k] * c.values()[idx]).collect();
        self.fields
            .iter()
            .map(|f| f.values().iter().zip(&wc).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Sum (1 + mu_j) a_j^2 over the given coefficients.
    pub fn h1_sq(&self, coeffs: &[f64]) -> f64 {
        coeffs.iter().zip(&self.laplace).map(|(a, l)| (1.0 + l) * a * a).sum()
    }

    pub fn quadratic_form(&self, coeffs: &[f64]) -> f64 {
        coeffs.iter().zip(&self.eigenvalues).map(|(a, l)| l * a * a).sum()
    }

    pub fn restrict(&self, coeffs: &[f64], class: ModeClass) -> Vec<f64> {
        coeffs
            .iter()
            .zip(&self.classes)
            .map(|(&a, &c)| if c == class { a } else { 0.0 })
            .collect()
    }

    /// Row layout of the spectrum dump.
    pub fn spectrum_rows(&self) -> Vec<SpectrumRow> {
        let n = self.len();
        let mut rows = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && (self.eigenvalues[end] - self.eigenvalues[start]).abs() <= 1e-8 * (1.0 + self.eigenvalues[start].abs()) {
                end += 1;
            }
            for j in start..end {
                rows.push(SpectrumRow {
                    index: j,
                    lambda: self.eigenvalues[j],
                    multiplicity: end - start,
                    class: self.classes[j],
                    label: self.labels[j].clone(),
                    laplace: self.laplace[j],
                });
            }
            start = end;
        }
        rows
    }

    pub fn spectrum_csv(&self) -> String {
        let mut out = String::from("index,lambda,multiplicity,class,laplace,label\n");
        for r in self.spectrum_rows() {
            out.push_str(&format!(
                "{},{:.12e},{},{:?},{:.12e},{}\n",
                r.index, r.lambda, r.multiplicity, r.class, r.laplace, r.label
            ));
        }
        out
    }

    pub fn snapshot(&self) -> BasisSnapshot {
        BasisSnapshot {
            version: BASIS_VERSION.to_string(),
            eigenvalues: self.eigenvalues.clone(),
            laplace: self.laplace.clone(),
            labels: self.labels.clone(),
            kernel: self.kernel.clone(),
            gap_minus: self.gap_minus,
            gap_plus: self.gap_plus,
            kernel_tol: self.kernel_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub index: usize,
    pub lambda: f64,
    pub multiplicity: usize,
    pub class: ModeClass,
    pub label: String,
    pub laplace: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSnapshot {
    pub version: String,
    pub eigenvalues: Vec<f64>,
    pub laplace: Vec<f64>,
    pub labels: Vec<String>,
    pub kernel: Vec<usize>,
    pub gap_minus: Option<f64>,
    pub gap_plus: Option<f64>,
    pub kernel_tol: f64,
}

/// Splits c into kernel, negative and positive parts.
pub fn project(basis: &SpectralBasis, cs: &CrossSection, c: &NormalField) -> Result<Projection> {
    c.check(cs)?;
    let coeffs = basis.coefficients(cs, c);
    let total = c.inner(cs, c);
    let captured: f64 = coeffs.iter().map(|a| a * a).sum();
    let tail = if total > 0.0 { ((total - captured) / total).max(0.0) } else { 0.0 };
    if tail > TAIL_TOL {
        return Err(Error::UnresolvedTail { fraction: tail });
    }
    let part = |cl| basis.synthesize(&basis.restrict(&coeffs, cl));
    Ok(Projection {
        kernel: part(ModeClass::Kernel),
        minus: part(ModeClass::Negative),
        plus: part(ModeClass::Positive),
        coeffs,
        tail,
    })
}

/// Dense vector helper for coefficient algebra.
pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
