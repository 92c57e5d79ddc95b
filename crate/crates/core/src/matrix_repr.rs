//! Matrix representation of the QFI: the transfer matrix of squared overlaps,
//! the harmonic-mean coefficient matrices, the trace formulas, qubit closed
//! forms, and the superselection block decomposition with cross terms.
//!
//! The coefficient matrices are nominally full-dimensional with zero padding
//! beyond the support; every product appearing in the trace formulas vanishes
//! there, so only the `s x s` active parts are stored, together with the
//! analytic completion (per-row leakage) that carries the out-of-support
//! column mass of the transfer matrix.

use nalgebra::{DMatrix, DVector};

use crate::engine::{qfi_sld, Method, QfiReport};
use crate::family::DerivativeBundle;
use crate::hermitian::{
    spectral_decompose, CMatrix, DensityMatrix, HermitianMatrix, SpectralDecomposition,
};
use crate::{Error, Result};

/// Real symmetric matrix of squared overlaps `P_ij = |<psi_i|d psi_j>|^2`
/// restricted to the support, plus the per-row out-of-support column mass
/// `leakage_i = sum_{j>s} P_ji`.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    entries: DMatrix<f64>,
    leakage: DVector<f64>,
    full_dim: usize,
}

impl TransferMatrix {
    pub fn support_dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Out-of-support column mass per support row.
    pub fn leakage(&self) -> &DVector<f64> {
        &self.leakage
    }

    pub fn symmetry_defect(&self) -> f64 {
        let s = self.entries.nrows();
        let mut worst = 0.0f64;
        for i in 0..s {
            for j in 0..s {
                worst = worst.max((self.entries[(i, j)] - self.entries[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Transfer matrix from a derivative bundle: entrywise squared overlaps, with
/// the leakage recovered from the eigenvector derivatives.
pub fn transfer_matrix(bundle: &DerivativeBundle) -> Result<TransferMatrix> {
    let overlaps = bundle.overlaps().ok_or(Error::IncompleteBundle {
        missing: "overlap table",
    })?;
    let dpsi = bundle.dpsi().ok_or(Error::IncompleteBundle {
        missing: "eigenvector derivatives",
    })?;
    let s = bundle.decomp().support_dim();
    let entries = DMatrix::from_fn(s, s, |i, j| overlaps[(i, j)].norm_sqr());
    let leakage = DVector::from_fn(s, |i, _| {
        let within: f64 = (0..s).map(|j| overlaps[(j, i)].norm_sqr()).sum();
        (dpsi[i].norm_squared() - within).max(0.0)
    });
    Ok(TransferMatrix {
        entries,
        leakage,
        full_dim: bundle.decomp().full_dim(),
    })
}

/// Transfer matrix for a unitary family: `P_ij = |H_ij|^2` in the eigenbasis,
/// with leakage `|H psi_i|^2 - sum_{j<=s} |H_ji|^2`.
pub fn transfer_matrix_unitary(
    decomp: &SpectralDecomposition,
    generator: &HermitianMatrix,
) -> Result<TransferMatrix> {
    if generator.dim() != decomp.full_dim() {
        return Err(Error::DimensionMismatch {
            expected: decomp.full_dim(),
            got: generator.dim(),
        });
    }
    let s = decomp.support_dim();
    let cols = generator.matrix() * decomp.vectors();
    let h_block = decomp.vectors().adjoint() * &cols;
    let entries = DMatrix::from_fn(s, s, |i, j| h_block[(i, j)].norm_sqr());
    let leakage = DVector::from_fn(s, |i, _| {
        let within: f64 = (0..s).map(|j| h_block[(j, i)].norm_sqr()).sum();
        (cols.column(i).norm_squared() - within).max(0.0)
    });
    Ok(TransferMatrix {
        entries,
        leakage,
        full_dim: decomp.full_dim(),
    })
}

/// The diagonal eigenvalue matrix `D`, the harmonic-mean matrix `G` with
/// `G_ij = 2 p_i p_j / (p_i + p_j)`, and the traceless coefficient matrix
/// `C = D I - G`, all restricted to their `s x s` active parts.
#[derive(Debug, Clone)]
pub struct CoefficientMatrices {
    eigenvalues: Vec<f64>,
    g: DMatrix<f64>,
    c: DMatrix<f64>,
    full_dim: usize,
}

pub fn coefficient_matrices(decomp: &SpectralDecomposition) -> CoefficientMatrices {
    let s = decomp.support_dim();
    let p = decomp.eigenvalues();
    let g = DMatrix::from_fn(s, s, |i, j| 2.0 * p[i] * p[j] / (p[i] + p[j]));
    let c = DMatrix::from_fn(s, s, |i, j| p[i] - g[(i, j)]);
    CoefficientMatrices {
        eigenvalues: p.to_vec(),
        g,
        c,
        full_dim: decomp.full_dim(),
    }
}

impl CoefficientMatrices {
    pub fn support_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    /// Diagonal of `D` over the support (zero-padded beyond it).
    pub fn d_diagonal(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn g_block(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn c_block(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// `tr(C)`; identically zero because `C_ii = p_i - p_i`.
    pub fn c_trace(&self) -> f64 {
        self.c.diagonal().sum()
    }
}

/// Matrix-trace pathway: `F_ct = 4 sum (d sqrt(p_i))^2` and
/// `F_qt = 4 tr(C P)`, the trace taken over the full space through the
/// support block plus the leakage completion.
pub fn qfi_matrix_form(
    coeffs: &CoefficientMatrices,
    transfer: &TransferMatrix,
    dsqrt_p: &[f64],
) -> Result<QfiReport> {
    let s = coeffs.support_dim();
    if transfer.support_dim() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            got: transfer.support_dim(),
        });
    }
    if dsqrt_p.len() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            got: dsqrt_p.len(),
        });
    }
    let f_ct = 4.0 * dsqrt_p.iter().map(|x| x * x).sum::<f64>();
    let mut trace = 0.0f64;
    for i in 0..s {
        for j in 0..s {
            trace += coeffs.c[(i, j)] * transfer.entries[(j, i)];
        }
        // rows of D I beyond the support block contribute p_i per column
        trace += coeffs.eigenvalues[i] * transfer.leakage[i];
    }
    let f_qt = 4.0 * trace;
    Ok(QfiReport::assemble(
        f_ct,
        f_qt,
        s,
        Method::MatrixRepr,
        Vec::new(),
    ))
}

/// Qubit closed forms: `F_qt = 4 (1 - 4 det rho) P_12` and, for mixed states
/// with a supplied eigenvalue derivative, `F_ct = (dp)^2 / det rho`.
pub fn qubit_closed_form(
    rho: &DensityMatrix,
    p12: f64,
    dp: Option<f64>,
    threshold: f64,
) -> Result<QfiReport> {
    if rho.dim() != 2 {
        return Err(Error::NotQubit { dim: rho.dim() });
    }
    let m = rho.matrix();
    let det = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).re;
    let f_qt = 4.0 * (1.0 - 4.0 * det) * p12;
    let f_ct = match dp {
        None => 0.0,
        Some(dp) => {
            if det > threshold {
                dp * dp / det
            } else if dp.abs() <= threshold {
                // a pure state stays pure: no classical contribution
                0.0
            } else {
                return Err(Error::SingularDeterminant { det });
            }
        }
    };
    Ok(QfiReport::assemble(
        f_ct,
        f_qt,
        if det > threshold { 2 } else { 1 },
        Method::QubitClosed,
        Vec::new(),
    ))
}

/// A mixture of density matrices living in orthogonal sectors with
/// theta-independent weights, under a unitary parametrization whose generator
/// has the given diagonal blocks and optional cross blocks.
#[derive(Debug, Clone)]
pub struct BlockedState {
    blocks: Vec<StateBlock>,
    cross: Vec<CrossCoupling>,
}

#[derive(Debug, Clone)]
pub struct StateBlock {
    pub weight: f64,
    pub rho: DensityMatrix,
    pub generator: HermitianMatrix,
}

/// Off-diagonal generator block `H^(nm)` connecting sector `row_block` (rows)
/// to sector `col_block` (columns). The reverse block is its adjoint.
#[derive(Debug, Clone)]
pub struct CrossCoupling {
    pub row_block: usize,
    pub col_block: usize,
    pub matrix: CMatrix,
}

impl BlockedState {
    pub fn new(blocks: Vec<StateBlock>, cross: Vec<CrossCoupling>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InconsistentBlockDims("no blocks given".into()));
        }
        let sum: f64 = blocks.iter().map(|b| b.weight).sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::WeightMismatch {
                sum,
                tolerance: 1e-10,
            });
        }
        for (n, b) in blocks.iter().enumerate() {
            if b.weight < 0.0 {
                return Err(Error::InconsistentBlockDims(format!(
                    "block {n} has negative weight {}",
                    b.weight
                )));
            }
            if b.rho.dim() != b.generator.dim() {
                return Err(Error::InconsistentBlockDims(format!(
                    "block {n}: state dimension {} vs generator dimension {}",
                    b.rho.dim(),
                    b.generator.dim()
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for c in &cross {
            if c.row_block >= blocks.len() || c.col_block >= blocks.len() {
                return Err(Error::InconsistentBlockDims(format!(
                    "cross coupling references block {} but only {} blocks exist",
                    c.row_block.max(c.col_block),
                    blocks.len()
                )));
            }
            if c.row_block == c.col_block {
                return Err(Error::InconsistentBlockDims(format!(
                    "cross coupling ({}, {}) must connect distinct blocks",
                    c.row_block, c.col_block
                )));
            }
            let key = (c.row_block.min(c.col_block), c.row_block.max(c.col_block));
            if !seen.insert(key) {
                return Err(Error::InconsistentBlockDims(format!(
                    "duplicate cross coupling between blocks {} and {}",
                    key.0, key.1
                )));
            }
            if c.matrix.nrows() != blocks[c.row_block].rho.dim()
                || c.matrix.ncols() != blocks[c.col_block].rho.dim()
            {
                return Err(Error::InconsistentBlockDims(format!(
                    "cross coupling ({}, {}) is {}x{}, expected {}x{}",
                    c.row_block,
                    c.col_block,
                    c.matrix.nrows(),
                    c.matrix.ncols(),
                    blocks[c.row_block].rho.dim(),
                    blocks[c.col_block].rho.dim()
                )));
            }
        }
        Ok(Self { blocks, cross })
    }

    pub fn blocks(&self) -> &[StateBlock] {
        &self.blocks
    }

    pub fn cross(&self) -> &[CrossCoupling] {
        &self.cross
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.rho.dim()).sum()
    }

    /// Assembles the full-dimensional state and generator (oracle route).
    pub fn assemble(&self) -> Result<(DensityMatrix, HermitianMatrix)> {
        let n = self.total_dim();
        let mut rho = CMatrix::zeros(n, n);
        let mut h = CMatrix::zeros(n, n);
        let offsets = self.offsets();
        for (b, &off) in self.blocks.iter().zip(&offsets) {
            let d = b.rho.dim();
            for i in 0..d {
                for j in 0..d {
                    rho[(off + i, off + j)] = b.rho.matrix()[(i, j)].scale(b.weight);
                    h[(off + i, off + j)] = b.generator.matrix()[(i, j)];
                }
            }
        }
        for c in &self.cross {
            let ro = offsets[c.row_block];
            let co = offsets[c.col_block];
            for i in 0..c.matrix.nrows() {
                for j in 0..c.matrix.ncols() {
                    h[(ro + i, co + j)] = c.matrix[(i, j)];
                    h[(co + j, ro + i)] = c.matrix[(i, j)].conj();
                }
            }
        }
        Ok((
            crate::hermitian::validate_density(HermitianMatrix::symmetrized(&rho)?)?,
            HermitianMatrix::new(h)?,
        ))
    }

    fn offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.blocks.len());
        let mut acc = 0usize;
        for b in &self.blocks {
            offsets.push(acc);
            acc += b.rho.dim();
        }
        offsets
    }
}

/// Per-block and cross-term contributions of a blocked-state QFI.
#[derive(Debug, Clone)]
pub struct BlockBreakdown {
    pub report: QfiReport,
    /// `(Q_n, F^(n))` per block.
    pub per_block: Vec<(f64, f64)>,
    pub cross_contribution: f64,
}

/// QFI of a blocked state under unitary parametrization: the weighted sector
/// sum `sum Q_n F^(n)` plus, when cross generator blocks are present, the
/// cross terms `sum_{n != n'} 4 tr(C^(nn') P^(n'n))` with the globally
/// weighted eigenvalues entering the harmonic means.
pub fn block_qfi(state: &BlockedState, threshold: f64) -> Result<BlockBreakdown> {
    let mut per_block = Vec::with_capacity(state.blocks().len());
    let mut decomps: Vec<Option<SpectralDecomposition>> = Vec::new();
    let mut f_diag = 0.0f64;
    let mut diagnostics = Vec::new();

    for (n, b) in state.blocks().iter().enumerate() {
        if b.weight <= threshold {
            per_block.push((b.weight, 0.0));
            decomps.push(None);
            diagnostics.push(format!("block {n} has weight {:e} <= threshold; skipped", b.weight));
            continue;
        }
        let decomp = spectral_decompose(&b.rho, threshold)?;
        let transfer = transfer_matrix_unitary(&decomp, &b.generator)?;
        let coeffs = coefficient_matrices(&decomp);
        let dsqrt = vec![0.0; decomp.support_dim()];
        let block_report = qfi_matrix_form(&coeffs, &transfer, &dsqrt)?;
        f_diag += b.weight * block_report.f;
        per_block.push((b.weight, block_report.f));
        diagnostics.extend(
            block_report
                .diagnostics
                .iter()
                .map(|d| format!("block {n}: {d}")),
        );
        decomps.push(Some(decomp));
    }

    let mut cross_total = 0.0f64;
    for c in state.cross() {
        let (Some(dn), Some(dm)) = (&decomps[c.row_block], &decomps[c.col_block]) else {
            continue;
        };
        let qn = state.blocks()[c.row_block].weight;
        let qm = state.blocks()[c.col_block].weight;
        cross_total += cross_pair_contribution(dn, qn, dm, qm, &c.matrix);
    }

    let support_dim: usize = decomps
        .iter()
        .flatten()
        .map(|d| d.support_dim())
        .sum();
    let f = f_diag + cross_total;
    let report = QfiReport::assemble(0.0, f, support_dim, Method::Block, diagnostics);
    Ok(BlockBreakdown {
        report,
        per_block,
        cross_contribution: cross_total,
    })
}

/// Both ordered cross terms for one unordered coupling `X = H^(nm)`:
/// `4 tr(C^(nm) P^(mn)) + 4 tr(C^(mn) P^(nm))`, evaluated over the two
/// support blocks plus the out-of-support completion within each sector.
fn cross_pair_contribution(
    dn: &SpectralDecomposition,
    qn: f64,
    dm: &SpectralDecomposition,
    qm: f64,
    x: &CMatrix,
) -> f64 {
    let sn = dn.support_dim();
    let sm = dm.support_dim();
    // T_ij = <phi_i^(n)| X |phi_j^(m)> over the two supports
    let t = dn.vectors().adjoint() * x * dm.vectors();
    // column action on each support vector, for the completion terms
    let x_cols_m = x * dm.vectors(); // X |phi_j^(m)>, lives in sector n
    let x_cols_n = x.adjoint() * dn.vectors(); // X^dag |phi_i^(n)>, lives in sector m

    let mut total = 0.0f64;
    for i in 0..sn {
        let pi = qn * dn.eigenvalues()[i];
        let mut within = 0.0f64;
        for j in 0..sm {
            let pj = qm * dm.eigenvalues()[j];
            let w = t[(i, j)].norm_sqr();
            let g = 2.0 * pi * pj / (pi + pj);
            total += (pi - g) * w + (pj - g) * w;
            within += w;
        }
        // columns of P^(mn) outside the support of sector m
        let leak_i = (x_cols_n.column(i).norm_squared() - within).max(0.0);
        total += pi * leak_i;
    }
    for j in 0..sm {
        let pj = qm * dm.eigenvalues()[j];
        let mut within = 0.0f64;
        for i in 0..sn {
            within += t[(i, j)].norm_sqr();
        }
        let leak_j = (x_cols_m.column(j).norm_squared() - within).max(0.0);
        total += pj * leak_j;
    }
    4.0 * total
}

/// Full-matrix oracle for a blocked state: assembles the global matrices and
/// runs the SLD pathway.
pub fn block_qfi_full_oracle(state: &BlockedState, threshold: f64) -> Result<QfiReport> {
    let (rho, h) = state.assemble()?;
    let decomp = spectral_decompose(&rho, threshold)?;
    let drho = crate::family::commutator_derivative(&h, rho.matrix())?;
    qfi_sld(&decomp, &drho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::{cr, DEFAULT_SUPPORT_THRESHOLD as TH};
    use approx::assert_abs_diff_eq;

    fn sigma_x_half() -> HermitianMatrix {
        HermitianMatrix::new(CMatrix::from_row_slice(
            2,
            2,
            &[cr(0.0), cr(0.5), cr(0.5), cr(0.0)],
        ))
        .unwrap()
    }

    #[test]
    fn transfer_matrix_for_sigma_x() {
        let rho = DensityMatrix::from_diagonal(&[0.75, 0.25]).unwrap();
        let decomp = spectral_decompose(&rho, TH).unwrap();
        let p = transfer_matrix_unitary(&decomp, &sigma_x_half()).unwrap();
        // oracle: entrywise |H_ij|^2
        assert_abs_diff_eq!(p.entries()[(0, 0)], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.entries()[(0, 1)], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(p.entries()[(1, 0)], 0.25, epsilon = 1e-14);
        assert!(p.symmetry_defect() < 1e-12);
        assert!(p.leakage().iter().all(|&x| x.abs() < 1e-14));
    }

    #[test]
    fn commuting_family_has_diagonal_transfer() {
        let rho = DensityMatrix::from_diagonal(&[0.6, 0.4]).unwrap();
        let decomp = spectral_decompose(&rho, TH).unwrap();
        let drho = HermitianMatrix::from_real_diagonal(&[1.0, -1.0]);
        let bundle = crate::family::DerivativeBundle::from_perturbation(decomp, drho).unwrap();
        let p = transfer_matrix(&bundle).unwrap();
        assert_eq!(p.entries()[(0, 1)], 0.0);
        assert_eq!(p.entries()[(1, 0)], 0.0);
    }

    #[test]
    fn coefficient_matrices_match_hand_values() {
        let rho = DensityMatrix::from_diagonal(&[0.75, 0.25]).unwrap();
        let decomp = spectral_decompose(&rho, TH).unwrap();
        let c = coefficient_matrices(&decomp);
        // oracle: G_ij = 2 p_i p_j / (p_i + p_j)
        assert_abs_diff_eq!(c.g_block()[(0, 0)], 0.75, epsilon = 1e-14);
        assert_abs_diff_eq!(c.g_block()[(0, 1)], 0.375, epsilon = 1e-14);
        assert_abs_diff_eq!(c.g_block()[(1, 1)], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(c.c_block()[(0, 1)], 0.375, epsilon = 1e-14);
        assert_abs_diff_eq!(c.c_block()[(1, 0)], -0.125, epsilon = 1e-14);
        assert_abs_diff_eq!(c.c_block()[(0, 0)], 0.0, epsilon = 1e-14);
        assert!(c.c_trace().abs() < 1e-14);
    }

    #[test]
    fn equal_eigenvalues_zero_the_coefficient_matrix() {
        let rho = DensityMatrix::from_diagonal(&[0.5, 0.5]).unwrap();
        let decomp = spectral_decompose(&rho, TH).unwrap();
        let c = coefficient_matrices(&decomp);
        let worst = c.c_block().iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        assert_eq!(worst, 0.0);
    }

    #[test]
    fn matrix_form_reproduces_the_qubit_value() {
        let rho = DensityMatrix::from_diagonal(&[0.75, 0.25]).unwrap();
        let decomp = spectral_decompose(&rho, TH).unwrap();
        let coeffs = coefficient_matrices(&decomp);
        let transfer = transfer_matrix_unitary(&decomp, &sigma_x_half()).unwrap();
        let report = qfi_matrix_form(&coeffs, &transfer, &[0.0, 0.0]).unwrap();
        // oracle: 4 (C_12 P_21 + C_21 P_12) = 4 (0.375 - 0.125) * 0.25 = 0.25
        assert_abs_diff_eq!(report.f_qt, 0.25, epsilon = 1e-13);
        assert_eq!(report.f_ct, 0.0);
    }

    #[test]
    fn zero_transfer_means_zero_quantum_contribution() {
        let rho = DensityMatrix::from_diagonal(&[0.75, 0.25]).unwrap();
        let decomp = spectral_decompose(&rho, TH).unwrap();
        let coeffs = coefficient_matrices(&decomp);
        let transfer = TransferMatrix {
            entries: DMatrix::zeros(2, 2),
            leakage: DVector::zeros(2),
            full_dim: 2,
        };
        let report = qfi_matrix_form(&coeffs, &transfer, &[0.0, 0.0]).unwrap();
        assert_eq!(report.f_qt, 0.0);
    }

    #[test]
    fn qubit_closed_form_mixed_state() {
        let rho = DensityMatrix::from_diagonal(&[0.75, 0.25]).unwrap();
        let report = qubit_closed_form(&rho, 0.25, None, TH).unwrap();
        // oracle: 4 (1 - 4 * 0.1875) * 0.25 = 0.25
        assert_abs_diff_eq!(report.f_qt, 0.25, epsilon = 1e-14);
        assert_eq!(report.f_ct, 0.0);
    }

    #[test]
    fn qubit_closed_form_pure_state() {
        let rho = DensityMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        let report = qubit_closed_form(&rho, 0.37, None, TH).unwrap();
        // det = 0, so F_qt = 4 P_12
        assert_abs_diff_eq!(report.f_qt, 4.0 * 0.37, epsilon = 1e-14);
        let with_dp = qubit_closed_form(&rho, 0.37, Some(0.0), TH).unwrap();
        assert_eq!(with_dp.f_ct, 0.0);
        assert!(matches!(
            qubit_closed_form(&rho, 0.37, Some(0.5), TH),
            Err(Error::SingularDeterminant { .. })
        ));
    }

    #[test]
    fn qubit_closed_form_bernoulli_classical_part() {
        let theta = 0.25f64;
        let rho = DensityMatrix::from_diagonal(&[theta, 1.0 - theta]).unwrap();
        let report = qubit_closed_form(&rho, 0.0, Some(1.0), TH).unwrap();
        // oracle: Bernoulli Fisher information 1/theta + 1/(1-theta) = 16/3
        assert_abs_diff_eq!(report.f_ct, 16.0 / 3.0, epsilon = 1e-12);
        // cross-check with the paper-form alternative det/(1-4det) [d ln det]^2
        let det = theta * (1.0 - theta);
        let dlogdet = (1.0 - 2.0 * theta) / det;
        let alt = det / (1.0 - 4.0 * det) * dlogdet * dlogdet;
        assert_abs_diff_eq!(report.f_ct, alt, epsilon = 1e-12);
    }

    #[test]
    fn qubit_guard_rejects_other_dimensions() {
        let rho = DensityMatrix::from_diagonal(&[0.5, 0.3, 0.2]).unwrap();
        assert!(matches!(
            qubit_closed_form(&rho, 0.1, None, TH),
            Err(Error::NotQubit { dim: 3 })
        ));
    }

    #[test]
    fn weighted_average_without_cross_terms() {
        // two blocks with known block QFIs combine linearly
        let b1 = StateBlock {
            weight: 0.5,
            rho: DensityMatrix::from_diagonal(&[1.0, 0.0]).unwrap(),
            generator: sigma_x_half(),
        };
        // pure |0> under sx/2 has F = 1; scale the second generator for F = 3
        let g2 = HermitianMatrix::new(CMatrix::from_row_slice(
            2,
            2,
            &[cr(0.0), cr(0.5 * 3f64.sqrt()), cr(0.5 * 3f64.sqrt()), cr(0.0)],
        ))
        .unwrap();
        let b2 = StateBlock {
            weight: 0.5,
            rho: DensityMatrix::from_diagonal(&[1.0, 0.0]).unwrap(),
            generator: g2,
        };
        let state = BlockedState::new(vec![b1, b2], vec![]).unwrap();
        let breakdown = block_qfi(&state, TH).unwrap();
        assert_abs_diff_eq!(breakdown.per_block[0].1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(breakdown.per_block[1].1, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(breakdown.report.f, 2.0, epsilon = 1e-12);
        assert_eq!(breakdown.cross_contribution, 0.0);
    }

    #[test]
    fn single_block_reduces_to_matrix_form() {
        let rho = DensityMatrix::from_diagonal(&[0.75, 0.25]).unwrap();
        let state = BlockedState::new(
            vec![StateBlock {
                weight: 1.0,
                rho: rho.clone(),
                generator: sigma_x_half(),
            }],
            vec![],
        )
        .unwrap();
        let breakdown = block_qfi(&state, TH).unwrap();
        let decomp = spectral_decompose(&rho, TH).unwrap();
        let direct = qfi_matrix_form(
            &coefficient_matrices(&decomp),
            &transfer_matrix_unitary(&decomp, &sigma_x_half()).unwrap(),
            &[0.0, 0.0],
        )
        .unwrap();
        assert_abs_diff_eq!(breakdown.report.f, direct.f, epsilon = 1e-14);
    }

    #[test]
    fn cross_terms_match_the_full_matrix_oracle() {
        let mut rng = crate::sampling::rng_from_seed(57);
        for _ in 0..5 {
            let (rho1, _) = crate::sampling::random_density(&mut rng, 2, 2, 5e-2);
            let (rho2, _) = crate::sampling::random_density(&mut rng, 3, 2, 5e-2);
            let g1 = crate::sampling::random_hermitian(&mut rng, 2);
            let g2 = crate::sampling::random_hermitian(&mut rng, 3);
            let x = crate::sampling::gaussian_matrix(&mut rng, 2, 3);
            let state = BlockedState::new(
                vec![
                    StateBlock {
                        weight: 0.6,
                        rho: rho1,
                        generator: g1,
                    },
                    StateBlock {
                        weight: 0.4,
                        rho: rho2,
                        generator: g2,
                    },
                ],
                vec![CrossCoupling {
                    row_block: 0,
                    col_block: 1,
                    matrix: x,
                }],
            )
            .unwrap();
            let breakdown = block_qfi(&state, TH).unwrap();
            let oracle = block_qfi_full_oracle(&state, TH).unwrap();
            let rel = (breakdown.report.f - oracle.f).abs() / oracle.f.abs().max(1.0);
            assert!(rel < 1e-8, "cross-term mismatch {rel:e}");
        }
    }

    #[test]
    fn weight_mismatch_is_rejected() {
        let b = StateBlock {
            weight: 0.7,
            rho: DensityMatrix::from_diagonal(&[1.0, 0.0]).unwrap(),
            generator: sigma_x_half(),
        };
        assert!(matches!(
            BlockedState::new(vec![b], vec![]),
            Err(Error::WeightMismatch { .. })
        ));
    }

    #[test]
    fn inconsistent_cross_dimensions_are_rejected() {
        let b1 = StateBlock {
            weight: 0.5,
            rho: DensityMatrix::from_diagonal(&[1.0, 0.0]).unwrap(),
            generator: sigma_x_half(),
        };
        let b2 = b1.clone();
        let bad = CrossCoupling {
            row_block: 0,
            col_block: 1,
            matrix: CMatrix::zeros(3, 2),
        };
        assert!(matches!(
            BlockedState::new(vec![b1, b2], vec![bad]),
            Err(Error::InconsistentBlockDims(_))
        ));
    }

    #[test]
    fn forbidden_transitions_add_nothing() {
        // zero cross block: the cross contribution must vanish identically
        let mut rng = crate::sampling::rng_from_seed(71);
        let (rho1, _) = crate::sampling::random_density(&mut rng, 2, 1, 5e-2);
        let (rho2, _) = crate::sampling::random_density(&mut rng, 2, 2, 5e-2);
        let state = BlockedState::new(
            vec![
                StateBlock {
                    weight: 0.3,
                    rho: rho1,
                    generator: crate::sampling::random_hermitian(&mut rng, 2),
                },
                StateBlock {
                    weight: 0.7,
                    rho: rho2,
                    generator: crate::sampling::random_hermitian(&mut rng, 2),
                },
            ],
            vec![CrossCoupling {
                row_block: 0,
                col_block: 1,
                matrix: CMatrix::zeros(2, 2),
            }],
        )
        .unwrap();
        let breakdown = block_qfi(&state, TH).unwrap();
        assert!(breakdown.cross_contribution.abs() < 1e-10);
    }
}
