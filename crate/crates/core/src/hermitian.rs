//! Complex Hermitian matrix foundation: validation, spectral decomposition,
//! and support identification with explicit thresholding.
//!
//! The support of a density matrix is the span of its eigenvectors with
//! eigenvalue above a *visible* threshold. Exact zeros do not exist in
//! floating point, so the cut is a parameter everywhere, never hidden.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Max allowed |A_ij - conj(A_ji)| relative to the max-abs entry.
pub const HERMITICITY_TOL: f64 = 1e-10;
/// Max allowed |tr(rho) - 1|.
pub const TRACE_TOL: f64 = 1e-10;
/// Eigenvalues of a density matrix must be >= -PSD_TOL.
pub const PSD_TOL: f64 = 1e-10;
/// Default support cut. Absolute, since the eigenvalues sum to 1.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e-12;
/// Eigenvalue pairs closer than this are treated as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-9;
/// Eigenvalues in (threshold, NEAR_THRESHOLD_FACTOR * threshold) are retained
/// but flagged: formulas dividing by them are ill-conditioned.
pub const NEAR_THRESHOLD_FACTOR: f64 = 100.0;

#[inline]
pub(crate) fn cr(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// A square complex matrix validated to be Hermitian.
#[derive(Debug, Clone)]
pub struct HermitianMatrix {
    mat: CMatrix,
}

impl HermitianMatrix {
    /// Validates squareness and hermiticity.
    pub fn new(mat: CMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::NotSquare {
                rows: mat.nrows(),
                cols: mat.ncols(),
            });
        }
        let scale = max_abs(&mat);
        let mut deviation = 0.0f64;
        for i in 0..mat.nrows() {
            for j in i..mat.ncols() {
                let d = (mat[(i, j)] - mat[(j, i)].conj()).norm();
                deviation = deviation.max(d);
            }
        }
        if deviation > HERMITICITY_TOL * scale {
            return Err(Error::NotHermitian {
                deviation,
                tolerance: HERMITICITY_TOL,
            });
        }
        Ok(Self { mat })
    }

    /// Forces exact hermiticity by averaging with the adjoint. Used for
    /// finite-difference derivatives and analytically-Hermitian products.
    pub fn symmetrized(mat: &CMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::NotSquare {
                rows: mat.nrows(),
                cols: mat.ncols(),
            });
        }
        let sym = (mat + mat.adjoint()).scale(0.5);
        Ok(Self { mat: sym })
    }

    /// Real diagonal matrix.
    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            mat: CMatrix::from_fn(n, n, |i, j| if i == j { cr(diag[i]) } else { cr(0.0) }),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: CMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.mat)
    }

    pub fn trace_re(&self) -> f64 {
        self.mat.trace().re
    }

    /// All eigenvalues, unsorted.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let eig = self
            .mat
            .clone()
            .try_symmetric_eigen(f64::EPSILON, 0)
            .ok_or(Error::EigensolverFailure { dim: self.dim() })?;
        Ok(eig.eigenvalues.as_slice().to_vec())
    }
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// A Hermitian, positive semidefinite, unit-trace matrix.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    base: HermitianMatrix,
}

/// Checks the trace-1 and positive-semidefiniteness invariants on a Hermitian
/// matrix and promotes it to a density matrix.
pub fn validate_density(m: HermitianMatrix) -> Result<DensityMatrix> {
    let trace = m.trace_re();
    if (trace - 1.0).abs() > TRACE_TOL {
        return Err(Error::TraceNotOne {
            trace,
            tolerance: TRACE_TOL,
        });
    }
    let min_eigenvalue = m
        .eigenvalues()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if min_eigenvalue < -PSD_TOL {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue,
            tolerance: PSD_TOL,
        });
    }
    Ok(DensityMatrix { base: m })
}

impl DensityMatrix {
    pub fn new(mat: CMatrix) -> Result<Self> {
        validate_density(HermitianMatrix::new(mat)?)
    }

    pub fn from_diagonal(probs: &[f64]) -> Result<Self> {
        validate_density(HermitianMatrix::from_real_diagonal(probs))
    }

    /// Projector onto a unit vector.
    pub fn pure(psi: &CVector) -> Result<Self> {
        let norm = psi.norm();
        if (norm - 1.0).abs() > TRACE_TOL {
            return Err(Error::NotNormalized {
                norm,
                tolerance: TRACE_TOL,
            });
        }
        let mat = psi * psi.adjoint();
        Ok(Self {
            base: HermitianMatrix::symmetrized(&mat)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn matrix(&self) -> &CMatrix {
        self.base.matrix()
    }

    pub fn hermitian(&self) -> &HermitianMatrix {
        &self.base
    }
}

/// Eigenvalues above the support threshold, descending, with orthonormal
/// gauge-fixed eigenvectors stored as matrix columns.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    vectors: CMatrix,
    threshold: f64,
    full_dim: usize,
    near_threshold: Vec<usize>,
}

/// Decomposes a density matrix and keeps only the eigenpairs with eigenvalue
/// above `threshold`. `threshold` must lie in (0, 1).
pub fn spectral_decompose(
    rho: &DensityMatrix,
    threshold: f64,
) -> Result<SpectralDecomposition> {
    assert!(
        threshold > 0.0 && threshold < 1.0,
        "support threshold must lie in (0, 1), got {threshold}"
    );
    let n = rho.dim();
    let eig = rho
        .matrix()
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or(Error::EigensolverFailure { dim: n })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut eigenvalues = Vec::new();
    let mut columns = Vec::new();
    for &k in &order {
        let p = eig.eigenvalues[k];
        if p > threshold {
            eigenvalues.push(p);
            let mut v = eig.eigenvectors.column(k).clone_owned();
            gauge_fix(&mut v);
            columns.push(v);
        }
    }
    SpectralDecomposition::assemble(eigenvalues, columns, threshold, n)
}

/// Rotates the global phase so the largest-magnitude component is real and
/// positive; ties broken by lowest index. Idempotent.
pub fn gauge_fix(v: &mut CVector) {
    let mut best = 0usize;
    let mut best_mag = 0.0f64;
    for (k, z) in v.iter().enumerate() {
        let m = z.norm();
        if m > best_mag {
            best_mag = m;
            best = k;
        }
    }
    if best_mag == 0.0 {
        return;
    }
    // already fixed: the phase would be exactly 1, so leave every bit alone
    if v[best].im == 0.0 && v[best].re > 0.0 {
        return;
    }
    let phase = v[best].conj() / cr(best_mag);
    for z in v.iter_mut() {
        *z *= phase;
    }
    // the rotation makes this component real by construction; drop the
    // multiplication residue so re-application is an exact no-op
    v[best] = cr(v[best].re);
}

impl SpectralDecomposition {
    fn assemble(
        eigenvalues: Vec<f64>,
        columns: Vec<CVector>,
        threshold: f64,
        full_dim: usize,
    ) -> Result<Self> {
        let s = eigenvalues.len();
        let mut vectors = CMatrix::zeros(full_dim, s);
        for (j, c) in columns.iter().enumerate() {
            vectors.set_column(j, c);
        }
        let near_threshold = eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &p)| p < NEAR_THRESHOLD_FACTOR * threshold)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            eigenvalues,
            vectors,
            threshold,
            full_dim,
            near_threshold,
        })
    }

    /// Builds a decomposition from externally known eigenpairs (for example a
    /// low-rank state constructed in a large space). Validates orthonormality,
    /// filters by the threshold, sorts descending and applies the gauge rule.
    pub fn from_parts(
        eigenvalues: Vec<f64>,
        vectors: CMatrix,
        threshold: f64,
    ) -> Result<Self> {
        assert!(
            threshold > 0.0 && threshold < 1.0,
            "support threshold must lie in (0, 1), got {threshold}"
        );
        if eigenvalues.len() != vectors.ncols() {
            return Err(Error::DimensionMismatch {
                expected: eigenvalues.len(),
                got: vectors.ncols(),
            });
        }
        let full_dim = vectors.nrows();
        let sum: f64 = eigenvalues.iter().sum();
        if sum > 1.0 + 1e-8 || sum <= 0.0 {
            return Err(Error::InvalidSpectralData(format!(
                "eigenvalues sum to {sum}, expected a value in (0, 1]"
            )));
        }
        // Gram matrix must be the identity.
        let gram = vectors.adjoint() * &vectors;
        let id = CMatrix::identity(gram.nrows(), gram.ncols());
        let gram_dev = max_abs(&(&gram - id));
        if gram_dev > 1e-10 {
            return Err(Error::InvalidSpectralData(format!(
                "eigenvector Gram matrix deviates from identity by {gram_dev:e} (tolerance 1e-10)"
            )));
        }
        let mut pairs: Vec<(f64, CVector)> = eigenvalues
            .into_iter()
            .zip(vectors.column_iter().map(|c| c.clone_owned()))
            .filter(|(p, _)| *p > threshold)
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut columns = Vec::with_capacity(pairs.len());
        let mut vals = Vec::with_capacity(pairs.len());
        for (p, mut v) in pairs {
            gauge_fix(&mut v);
            vals.push(p);
            columns.push(v);
        }
        Self::assemble(vals, columns, threshold, full_dim)
    }

    pub fn support_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Support eigenvectors as the columns of an `N x s` matrix.
    pub fn vectors(&self) -> &CMatrix {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> CVector {
        self.vectors.column(i).clone_owned()
    }

    /// Indices of retained eigenvalues lying within a factor
    /// [`NEAR_THRESHOLD_FACTOR`] of the threshold.
    pub fn near_threshold(&self) -> &[usize] {
        &self.near_threshold
    }

    pub(crate) fn near_threshold_diagnostics(&self) -> Vec<String> {
        self.near_threshold
            .iter()
            .map(|&i| {
                format!(
                    "eigenvalue p_{} = {:e} lies within 100x of the support threshold {:e}; \
                     terms dividing by it are ill-conditioned",
                    i, self.eigenvalues[i], self.threshold
                )
            })
            .collect()
    }

    /// `sum_i p_i |psi_i><psi_i|`.
    pub fn reconstruct(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.full_dim, self.full_dim);
        for (i, &p) in self.eigenvalues.iter().enumerate() {
            let v = self.vectors.column(i);
            out += (v * v.adjoint()).scale(p);
        }
        out
    }

    /// Projector onto the support subspace.
    pub fn projector(&self) -> CMatrix {
        &self.vectors * self.vectors.adjoint()
    }

    /// Completes the support vectors to an orthonormal basis of the full
    /// space. Columns `0..s` are the support vectors; the rest are produced
    /// deterministically by orthonormalizing standard basis vectors.
    pub fn complete_basis(&self) -> CMatrix {
        let n = self.full_dim;
        let s = self.support_dim();
        let mut cols: Vec<CVector> = (0..s).map(|i| self.vector(i)).collect();
        let mut k = 0usize;
        while cols.len() < n && k < n {
            let mut r = CVector::zeros(n);
            r[k] = cr(1.0);
            // two orthogonalization passes keep the basis orthonormal to ~1e-15
            for _ in 0..2 {
                for c in &cols {
                    let coef = c.dotc(&r);
                    r -= c * coef;
                }
            }
            let norm = r.norm();
            if norm > 1e-6 {
                cols.push(r.unscale(norm));
            }
            k += 1;
        }
        assert_eq!(cols.len(), n, "orthonormal completion failed");
        let mut out = CMatrix::zeros(n, n);
        for (j, c) in cols.iter().enumerate() {
            out.set_column(j, c);
        }
        out
    }

    /// Groups of support indices whose eigenvalues are pairwise closer than
    /// [`DEGENERACY_GAP`] (maximal runs in the descending order).
    pub fn degenerate_clusters(&self) -> Vec<std::ops::Range<usize>> {
        let s = self.support_dim();
        let mut clusters = Vec::new();
        let mut start = 0usize;
        for i in 1..=s {
            let extend =
                i < s && (self.eigenvalues[i - 1] - self.eigenvalues[i]).abs() < DEGENERACY_GAP;
            if !extend {
                if i - start > 1 {
                    clusters.push(start..i);
                }
                start = i;
            }
        }
        clusters
    }

    /// Rotates each degenerate cluster so the cluster-projected block of
    /// `drho` is diagonal (standard degenerate perturbation alignment). This
    /// makes the overlap table well-defined inside degenerate subspaces.
    /// Returns the aligned decomposition plus diagnostics for each rotation.
    pub fn align_degenerate(
        mut self,
        drho: &HermitianMatrix,
    ) -> Result<(Self, Vec<String>)> {
        if drho.dim() != self.full_dim {
            return Err(Error::DimensionMismatch {
                expected: self.full_dim,
                got: drho.dim(),
            });
        }
        let mut diagnostics = Vec::new();
        for cluster in self.degenerate_clusters() {
            let c = cluster.len();
            let sub = self.vectors.columns(cluster.start, c).clone_owned();
            let block = sub.adjoint() * drho.matrix() * &sub;
            let block = (&block + block.adjoint()).scale(0.5);
            let eig = block
                .try_symmetric_eigen(f64::EPSILON, 0)
                .ok_or(Error::EigensolverFailure { dim: c })?;
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let rotated = &sub * &eig.eigenvectors;
            for (slot, &k) in order.iter().enumerate() {
                let mut v = rotated.column(k).clone_owned();
                gauge_fix(&mut v);
                self.vectors.set_column(cluster.start + slot, &v);
            }
            diagnostics.push(format!(
                "aligned degenerate eigenvalue cluster {}..{} against the derivative",
                cluster.start,
                cluster.end - 1
            ));
        }
        Ok((self, diagnostics))
    }
}

/// `exp(-i H theta)` through the eigendecomposition of `H`.
pub fn unitary_evolution(h: &HermitianMatrix, theta: f64) -> Result<CMatrix> {
    let n = h.dim();
    let eig = h
        .matrix()
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or(Error::EigensolverFailure { dim: n })?;
    let phases = CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            let a = -eig.eigenvalues[i] * theta;
            C64::new(a.cos(), a.sin())
        } else {
            cr(0.0)
        }
    });
    Ok(&eig.eigenvectors * phases * eig.eigenvectors.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        max_abs(&(a - b))
    }

    #[test]
    fn maximally_mixed_is_valid() {
        let rho = DensityMatrix::from_diagonal(&[0.5, 0.5]).unwrap();
        let d = spectral_decompose(&rho, 1e-12).unwrap();
        assert_eq!(d.support_dim(), 2);
        assert_abs_diff_eq!(d.eigenvalues()[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(d.eigenvalues()[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn trace_violation_is_reported() {
        let err = DensityMatrix::from_diagonal(&[0.6, 0.6]).unwrap_err();
        match err {
            Error::TraceNotOne { trace, .. } => assert_abs_diff_eq!(trace, 1.2, epsilon = 1e-14),
            other => panic!("expected TraceNotOne, got {other:?}"),
        }
    }

    #[test]
    fn negative_eigenvalue_is_reported() {
        let err = DensityMatrix::from_diagonal(&[1.2, -0.2]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveSemidefinite { .. }));
    }

    #[test]
    fn non_hermitian_is_rejected() {
        let m = CMatrix::from_row_slice(2, 2, &[cr(0.5), cr(0.3), cr(0.1), cr(0.5)]);
        assert!(matches!(
            HermitianMatrix::new(m),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn support_cut_drops_zero_eigenvalues() {
        let rho = DensityMatrix::from_diagonal(&[0.5, 0.5, 0.0]).unwrap();
        let d = spectral_decompose(&rho, 1e-12).unwrap();
        assert_eq!(d.support_dim(), 2);
        assert_eq!(d.full_dim(), 3);
        assert_abs_diff_eq!(d.eigenvalues()[0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn maximally_mixed_4d() {
        let rho = DensityMatrix::from_diagonal(&[0.25; 4]).unwrap();
        let d = spectral_decompose(&rho, 1e-12).unwrap();
        assert_eq!(d.support_dim(), 4);
        for &p in d.eigenvalues() {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-14);
        }
    }

    #[test]
    fn qubit_bloch_z_matches_analytic_eigendecomposition() {
        // rho = (I + 0.5 sigma_z)/2. Oracle: eigenvalues (1 +- |r|)/2 of the
        // 2x2 Bloch form, eigenvectors the computational basis.
        let r = 0.5f64;
        let expected = [(1.0 + r) / 2.0, (1.0 - r) / 2.0];
        let rho = DensityMatrix::from_diagonal(&[0.75, 0.25]).unwrap();
        let d = spectral_decompose(&rho, 1e-12).unwrap();
        assert_eq!(d.support_dim(), 2);
        assert_abs_diff_eq!(d.eigenvalues()[0], expected[0], epsilon = 1e-12);
        assert_abs_diff_eq!(d.eigenvalues()[1], expected[1], epsilon = 1e-12);
        assert_abs_diff_eq!((d.vector(0)[0] - cr(1.0)).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((d.vector(1)[1] - cr(1.0)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reconstruction_matches_input() {
        let mut rng = crate::sampling::rng_from_seed(11);
        for n in [2usize, 4, 6] {
            for s in 1..=n {
                let (rho, _) = crate::sampling::random_density(&mut rng, n, s, 1e-2);
                let d = spectral_decompose(&rho, 1e-12).unwrap();
                assert_eq!(d.support_dim(), s);
                assert!(max_abs_diff(&d.reconstruct(), rho.matrix()) < 1e-9);
            }
        }
    }

    #[test]
    fn gauge_fix_is_idempotent() {
        let mut rng = crate::sampling::rng_from_seed(5);
        for _ in 0..20 {
            let mut v = crate::sampling::gaussian_vector(&mut rng, 6);
            let norm = v.norm();
            v = v.unscale(norm);
            gauge_fix(&mut v);
            let once = v.clone();
            gauge_fix(&mut v);
            assert_eq!(once, v, "gauge rule must be idempotent bit-for-bit");
        }
    }

    #[test]
    fn complete_basis_is_orthonormal() {
        let mut rng = crate::sampling::rng_from_seed(9);
        let (rho, _) = crate::sampling::random_density(&mut rng, 5, 2, 1e-2);
        let d = spectral_decompose(&rho, 1e-12).unwrap();
        let b = d.complete_basis();
        let gram = b.adjoint() * &b;
        let id = CMatrix::identity(5, 5);
        assert!(max_abs_diff(&gram, &id) < 1e-12);
        // First columns are the support vectors.
        for i in 0..2 {
            let diff = b.column(i).clone_owned() - d.vector(i);
            assert!(diff.norm() < 1e-15);
        }
    }

    #[test]
    fn near_threshold_eigenvalues_are_flagged() {
        let rho = DensityMatrix::from_diagonal(&[1.0 - 5e-11, 5e-11]).unwrap();
        let d = spectral_decompose(&rho, 1e-12).unwrap();
        assert_eq!(d.support_dim(), 2);
        assert_eq!(d.near_threshold(), &[1]);
    }

    #[test]
    fn unitary_evolution_is_unitary() {
        let mut rng = crate::sampling::rng_from_seed(17);
        let h = crate::sampling::random_hermitian(&mut rng, 4);
        let u = unitary_evolution(&h, 0.7).unwrap();
        let gram = u.adjoint() * &u;
        assert!(max_abs_diff(&gram, &CMatrix::identity(4, 4)) < 1e-12);
    }
}
