//! QFI computation through the SLD definition and through the
//! support-restricted eigendecomposition formula, with the classical/quantum
//! split.
//!
//! The SLD pathway evaluates
//! `F = sum_{i<=s} sum_{j<=N} 4 p_i / (p_i + p_j)^2 |(drho)_ij|^2`
//! without ever constructing out-of-support eigenvectors: by completeness the
//! `j > s` portion equals `4 sum_i (|drho psi_i|^2 - sum_{j<=s} |(drho)_ij|^2) / p_i`,
//! which preserves the support-only cost even in the cross terms.

use serde::Serialize;

use crate::family::DerivativeBundle;
use crate::hermitian::{CMatrix, CVector, DensityMatrix, HermitianMatrix, SpectralDecomposition};
use crate::{Error, Result};

/// Negative round-off of provably nonnegative quantities within this
/// magnitude is clamped to zero (with a diagnostic).
pub const ROUNDOFF_CLAMP: f64 = 1e-12;

/// Which pathway produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sld,
    Support,
    MatrixRepr,
    QubitClosed,
    Block,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Sld => "sld",
            Method::Support => "support",
            Method::MatrixRepr => "matrix_repr",
            Method::QubitClosed => "qubit_closed",
            Method::Block => "block",
        }
    }
}

/// QFI value with its classical/quantum split and computation diagnostics.
///
/// `F = F_ct + F_qt` holds for every report. `F` and `F_ct` are nonnegative;
/// `F_qt` is reported unclamped and flagged when negative, since its sign for
/// non-unitary families is an empirical matter.
#[derive(Debug, Clone, Serialize)]
pub struct QfiReport {
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "F_ct")]
    pub f_ct: f64,
    #[serde(rename = "F_qt")]
    pub f_qt: f64,
    pub support_dim: usize,
    pub method: Method,
    pub diagnostics: Vec<String>,
}

impl QfiReport {
    /// Assembles `F = F_ct + F_qt` with the round-off clamps applied.
    pub(crate) fn assemble(
        f_ct: f64,
        f_qt: f64,
        support_dim: usize,
        method: Method,
        mut diagnostics: Vec<String>,
    ) -> Self {
        let mut f_ct = f_ct;
        if f_ct < 0.0 {
            if f_ct > -ROUNDOFF_CLAMP {
                diagnostics.push(format!(
                    "classical contribution {f_ct:e} clamped to 0 (round-off below zero)"
                ));
                f_ct = 0.0;
            } else {
                diagnostics.push(format!(
                    "classical contribution {f_ct:e} is negative beyond round-off"
                ));
            }
        }
        if f_qt < 0.0 {
            diagnostics.push(format!(
                "quantum contribution is negative ({f_qt:e}); reported unclamped"
            ));
        }
        let mut f = f_ct + f_qt;
        if f < 0.0 && f > -ROUNDOFF_CLAMP {
            diagnostics.push(format!("F = {f:e} clamped to 0 (round-off below zero)"));
            f = 0.0;
        }
        Self {
            f,
            f_ct,
            f_qt,
            support_dim,
            method,
            diagnostics,
        }
    }
}

/// The symmetric logarithmic derivative in the original basis, built with the
/// convention that the block with both indices outside the support is zero.
#[derive(Debug, Clone)]
pub struct SldMatrix {
    entries: CMatrix,
    support_dim: usize,
}

impl SldMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn support_dim(&self) -> usize {
        self.support_dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.entries
    }

    /// The out-of-support block is arbitrary in principle; this
    /// implementation always sets it to zero.
    pub fn zero_out_of_support_convention(&self) -> bool {
        true
    }
}

/// Builds the SLD: in the completed eigenbasis `L_ij = 2 (drho)_ij / (p_i + p_j)`
/// whenever at least one index is in the support (with `p = 0` outside), and
/// `L_ij = 0` when both are outside; rotated back to the original basis.
pub fn build_sld(decomp: &SpectralDecomposition, drho: &HermitianMatrix) -> Result<SldMatrix> {
    let n = decomp.full_dim();
    if drho.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: drho.dim(),
        });
    }
    let s = decomp.support_dim();
    let basis = decomp.complete_basis();
    let d_eig = basis.adjoint() * drho.matrix() * &basis;
    let p = |k: usize| -> f64 {
        if k < s {
            decomp.eigenvalues()[k]
        } else {
            0.0
        }
    };
    let mut l_eig = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i >= s && j >= s {
                continue;
            }
            l_eig[(i, j)] = d_eig[(i, j)].scale(2.0 / (p(i) + p(j)));
        }
    }
    let entries = &basis * l_eig * basis.adjoint();
    let entries = (&entries + entries.adjoint()).scale(0.5);
    Ok(SldMatrix {
        entries,
        support_dim: s,
    })
}

/// `tr(rho L^2)`: the defining trace expression evaluated literally. Serves
/// as the independent route against the summed form in [`qfi_sld`].
pub fn sld_trace_qfi(rho: &DensityMatrix, sld: &SldMatrix) -> f64 {
    (rho.matrix() * &sld.entries * &sld.entries).trace().re
}

/// SLD-pathway QFI from the support eigendata and a matrix derivative.
pub fn qfi_sld(decomp: &SpectralDecomposition, drho: &HermitianMatrix) -> Result<QfiReport> {
    let n = decomp.full_dim();
    if drho.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: drho.dim(),
        });
    }
    let s = decomp.support_dim();
    let p = decomp.eigenvalues();
    // columns drho |psi_j| and the support block (drho)_ij
    let cols = drho.matrix() * decomp.vectors();
    let m = decomp.vectors().adjoint() * &cols;

    let mut f_ct = 0.0f64;
    let mut f_qt = 0.0f64;
    for i in 0..s {
        let dp_i = m[(i, i)].re;
        f_ct += dp_i * dp_i / p[i];
        let mut row_sq = 0.0f64;
        for j in 0..s {
            let w = m[(i, j)].norm_sqr();
            row_sq += w;
            if i != j {
                let denom = p[i] + p[j];
                debug_assert!(denom > decomp.threshold());
                f_qt += 4.0 * p[i] / (denom * denom) * w;
            }
        }
        // completeness residual carries the entire out-of-support column sum
        let full_sq = cols.column(i).norm_squared();
        let residual = (full_sq - row_sq).max(0.0);
        f_qt += 4.0 / p[i] * residual;
    }
    Ok(QfiReport::assemble(
        f_ct,
        f_qt,
        s,
        Method::Sld,
        decomp.near_threshold_diagnostics(),
    ))
}

/// Support-pathway QFI: evaluates the three support sums
/// `sum dp_i^2/p_i + sum 4 p_i <dpsi_i|dpsi_i> - sum 8 p_i p_j/(p_i+p_j) |o_ij|^2`
/// using only support quantities.
pub fn qfi_support(bundle: &DerivativeBundle) -> Result<QfiReport> {
    let dpsi = bundle.dpsi().ok_or(Error::IncompleteBundle {
        missing: "eigenvector derivatives",
    })?;
    let overlaps = bundle.overlaps().ok_or(Error::IncompleteBundle {
        missing: "overlap table",
    })?;
    let decomp = bundle.decomp();
    let s = decomp.support_dim();
    let p = decomp.eigenvalues();

    let mut f_ct = 0.0f64;
    for (&dp, &p_i) in bundle.dp().iter().zip(p) {
        f_ct += dp * dp / p_i;
    }
    let mut motion = 0.0f64;
    for (d, &p_i) in dpsi.iter().zip(p) {
        motion += 4.0 * p_i * d.norm_squared();
    }
    let mut coupling = 0.0f64;
    for i in 0..s {
        for j in 0..s {
            let denom = p[i] + p[j];
            coupling += 8.0 * p[i] * p[j] / denom * overlaps[(i, j)].norm_sqr();
        }
    }
    let f_qt = motion - coupling;
    Ok(QfiReport::assemble(
        f_ct,
        f_qt,
        s,
        Method::Support,
        bundle.diagnostics().to_vec(),
    ))
}

/// QFI of a pure state: `4 (<dpsi|dpsi> - |<psi|dpsi>|^2)`.
pub fn qfi_pure(psi: &CVector, dpsi: &CVector) -> Result<f64> {
    let norm = psi.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized {
            norm,
            tolerance: 1e-10,
        });
    }
    if psi.len() != dpsi.len() {
        return Err(Error::DimensionMismatch {
            expected: psi.len(),
            got: dpsi.len(),
        });
    }
    let value = 4.0 * (dpsi.norm_squared() - psi.dotc(dpsi).norm_sqr());
    Ok(value.max(0.0))
}

/// QFI for a unitary family directly from the generator: the classical
/// contribution vanishes and
/// `F = sum_i p_i 4 (Delta H)^2_i - sum_{i != j} 8 p_i p_j/(p_i+p_j) |H_ij|^2`.
pub fn qfi_unitary(
    decomp: &SpectralDecomposition,
    generator: &HermitianMatrix,
) -> Result<QfiReport> {
    let n = decomp.full_dim();
    if generator.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: generator.dim(),
        });
    }
    let s = decomp.support_dim();
    let p = decomp.eigenvalues();
    let cols = generator.matrix() * decomp.vectors();
    let h_block = decomp.vectors().adjoint() * &cols;

    let mut weighted_variances = 0.0f64;
    for i in 0..s {
        let h_sq = cols.column(i).norm_squared();
        let mean = h_block[(i, i)].re;
        weighted_variances += p[i] * 4.0 * (h_sq - mean * mean);
    }
    let mut coupling = 0.0f64;
    for i in 0..s {
        for j in 0..s {
            if i != j {
                coupling +=
                    8.0 * p[i] * p[j] / (p[i] + p[j]) * h_block[(i, j)].norm_sqr();
            }
        }
    }
    Ok(QfiReport::assemble(
        0.0,
        weighted_variances - coupling,
        s,
        Method::Support,
        decomp.near_threshold_diagnostics(),
    ))
}

/// Rebuilds an SLD with the given Hermitian block written into the
/// out-of-support corner (eigenbasis convention). The QFI must not change:
/// that block never enters `tr(rho L^2)`.
pub fn sld_with_out_of_support_block(
    decomp: &SpectralDecomposition,
    sld: &SldMatrix,
    block: &CMatrix,
) -> Result<SldMatrix> {
    let n = decomp.full_dim();
    let s = decomp.support_dim();
    let k = n - s;
    if block.nrows() != k || block.ncols() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: block.nrows(),
        });
    }
    let basis = decomp.complete_basis();
    let mut padded = CMatrix::zeros(n, n);
    for i in 0..k {
        for j in 0..k {
            padded[(s + i, s + j)] = block[(i, j)];
        }
    }
    let padded = (&padded + padded.adjoint()).scale(0.5);
    let entries = &sld.entries + &basis * padded * basis.adjoint();
    Ok(SldMatrix {
        entries,
        support_dim: s,
    })
}

impl SldMatrix {
    /// Hermiticity defect, for invariant checks.
    pub fn hermiticity_defect(&self) -> f64 {
        crate::hermitian::max_abs(&(&self.entries - self.entries.adjoint()))
    }
}
