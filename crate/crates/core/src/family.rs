//! Parameterized families `theta -> rho_theta` and the derivative data the
//! QFI formulas consume: the matrix derivative, eigenvalue derivatives,
//! support-eigenvector derivatives and the overlap table `<psi_i|d psi_j>`.
//!
//! The overlap table is restricted to the support block; contributions from
//! eigenvectors outside the support are eliminated analytically through the
//! complement projector, so they are never numerically formed.

use crate::hermitian::{
    cr, gauge_fix, max_abs, spectral_decompose, C64, CMatrix, CVector, DensityMatrix,
    HermitianMatrix, SpectralDecomposition, DEGENERACY_GAP,
};
use crate::{Error, Result};

/// Default central-difference step: balances the O(h^2) truncation error
/// against ~1e-16/h rounding for unit-scale matrices.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Off-diagonal derivative elements below this (relative to the derivative
/// scale) count as "aligned" inside a degenerate cluster.
const ALIGNED_OFFDIAG_TOL: f64 = 1e-9;

type StateFn = Box<dyn Fn(f64) -> Result<DensityMatrix> + Send + Sync>;
type DerivFn = Box<dyn Fn(f64) -> Result<HermitianMatrix> + Send + Sync>;
type SpectrumFn = Box<dyn Fn(f64) -> Result<Vec<f64>> + Send + Sync>;
type BasisFn = Box<dyn Fn(f64) -> Result<CMatrix> + Send + Sync>;

/// A parameterized family of density matrices.
///
/// The unitary convention is `rho_theta = exp(-i H theta) rho0 exp(+i H theta)`.
/// The QFI is invariant under `H -> -H`, so a family written with the opposite
/// sign yields identical outputs.
pub enum StateFamily {
    Unitary {
        rho0: DensityMatrix,
        generator: HermitianMatrix,
    },
    Analytic {
        state: StateFn,
        derivative: DerivFn,
        domain: (f64, f64),
        dim: usize,
    },
    Sampled {
        state: StateFn,
        domain: (f64, f64),
        dim: usize,
    },
    Spectral {
        eigenvalues: SpectrumFn,
        eigenvectors: BasisFn,
        domain: (f64, f64),
        dim: usize,
    },
}

impl std::fmt::Debug for StateFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "StateFamily::{} (dim {})", self.kind_name(), self.dim())
    }
}

impl StateFamily {
    pub fn unitary(rho0: DensityMatrix, generator: HermitianMatrix) -> Result<Self> {
        if rho0.dim() != generator.dim() {
            return Err(Error::DimensionMismatch {
                expected: rho0.dim(),
                got: generator.dim(),
            });
        }
        Ok(Self::Unitary { rho0, generator })
    }

    pub fn analytic(
        dim: usize,
        state: impl Fn(f64) -> Result<DensityMatrix> + Send + Sync + 'static,
        derivative: impl Fn(f64) -> Result<HermitianMatrix> + Send + Sync + 'static,
    ) -> Self {
        Self::Analytic {
            state: Box::new(state),
            derivative: Box::new(derivative),
            domain: (f64::NEG_INFINITY, f64::INFINITY),
            dim,
        }
    }

    pub fn sampled(
        dim: usize,
        state: impl Fn(f64) -> Result<DensityMatrix> + Send + Sync + 'static,
    ) -> Self {
        Self::Sampled {
            state: Box::new(state),
            domain: (f64::NEG_INFINITY, f64::INFINITY),
            dim,
        }
    }

    /// Grid-backed sampled family. Evaluation requires the grid to contain
    /// the requested point exactly (up to 1e-12 relative); no interpolation.
    pub fn sampled_grid(thetas: Vec<f64>, matrices: Vec<DensityMatrix>) -> Result<Self> {
        if thetas.is_empty() || thetas.len() != matrices.len() {
            return Err(Error::Parse(format!(
                "sampled grid needs matching nonempty lists, got {} thetas and {} matrices",
                thetas.len(),
                matrices.len()
            )));
        }
        let dim = matrices[0].dim();
        for m in &matrices {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.dim(),
                });
            }
        }
        let lo = thetas.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = thetas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let state = move |theta: f64| -> Result<DensityMatrix> {
            grid_lookup(&thetas, theta)
                .map(|k| matrices[k].clone())
                .ok_or_else(|| {
                    Error::EvaluationFailure(format!("theta = {theta} is not on the sampled grid"))
                })
        };
        Ok(Self::Sampled {
            state: Box::new(state),
            domain: (lo, hi),
            dim,
        })
    }

    pub fn spectral(
        dim: usize,
        eigenvalues: impl Fn(f64) -> Result<Vec<f64>> + Send + Sync + 'static,
        eigenvectors: impl Fn(f64) -> Result<CMatrix> + Send + Sync + 'static,
    ) -> Self {
        Self::Spectral {
            eigenvalues: Box::new(eigenvalues),
            eigenvectors: Box::new(eigenvectors),
            domain: (f64::NEG_INFINITY, f64::INFINITY),
            dim,
        }
    }

    /// Grid-backed spectral family: per-point eigenvalue lists and eigenvector
    /// columns. Same exact-match rule as [`StateFamily::sampled_grid`].
    pub fn spectral_grid(
        dim: usize,
        thetas: Vec<f64>,
        values: Vec<Vec<f64>>,
        bases: Vec<CMatrix>,
    ) -> Result<Self> {
        if thetas.is_empty() || thetas.len() != values.len() || thetas.len() != bases.len() {
            return Err(Error::Parse(
                "spectral grid needs matching nonempty theta/value/basis lists".into(),
            ));
        }
        for (v, b) in values.iter().zip(&bases) {
            if b.nrows() != dim || b.ncols() != v.len() {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: b.nrows(),
                });
            }
        }
        let lo = thetas.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = thetas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let thetas2 = thetas.clone();
        let eigenvalues = move |theta: f64| -> Result<Vec<f64>> {
            grid_lookup(&thetas, theta)
                .map(|k| values[k].clone())
                .ok_or_else(|| {
                    Error::EvaluationFailure(format!("theta = {theta} is not on the spectral grid"))
                })
        };
        let eigenvectors = move |theta: f64| -> Result<CMatrix> {
            grid_lookup(&thetas2, theta)
                .map(|k| bases[k].clone())
                .ok_or_else(|| {
                    Error::EvaluationFailure(format!("theta = {theta} is not on the spectral grid"))
                })
        };
        Ok(Self::Spectral {
            eigenvalues: Box::new(eigenvalues),
            eigenvectors: Box::new(eigenvectors),
            domain: (lo, hi),
            dim,
        })
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        match &mut self {
            Self::Analytic { domain, .. }
            | Self::Sampled { domain, .. }
            | Self::Spectral { domain, .. } => *domain = (lo, hi),
            Self::Unitary { .. } => {}
        }
        self
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Unitary { .. } => "unitary",
            Self::Analytic { .. } => "analytic",
            Self::Sampled { .. } => "sampled",
            Self::Spectral { .. } => "spectral",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Unitary { rho0, .. } => rho0.dim(),
            Self::Analytic { dim, .. } | Self::Sampled { dim, .. } | Self::Spectral { dim, .. } => {
                *dim
            }
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        match self {
            Self::Unitary { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Self::Analytic { domain, .. }
            | Self::Sampled { domain, .. }
            | Self::Spectral { domain, .. } => *domain,
        }
    }

    /// Evaluates the density matrix at `theta`.
    pub fn density_at(&self, theta: f64) -> Result<DensityMatrix> {
        let (lo, hi) = self.domain();
        if theta < lo || theta > hi {
            return Err(Error::EvaluationFailure(format!(
                "theta = {theta} outside the declared domain [{lo}, {hi}]"
            )));
        }
        match self {
            Self::Unitary { rho0, generator } => {
                if theta == 0.0 {
                    return Ok(rho0.clone());
                }
                let u = crate::hermitian::unitary_evolution(generator, theta)?;
                let rotated = &u * rho0.matrix() * u.adjoint();
                crate::hermitian::validate_density(HermitianMatrix::symmetrized(&rotated)?)
            }
            Self::Analytic { state, .. } | Self::Sampled { state, .. } => state(theta),
            Self::Spectral {
                eigenvalues,
                eigenvectors,
                dim,
                ..
            } => {
                let (p, basis) = spectral_point(eigenvalues, eigenvectors, *dim, theta)?;
                let mut mat = CMatrix::zeros(*dim, *dim);
                for (i, &pi) in p.iter().enumerate() {
                    let col = basis.column(i);
                    mat += (col * col.adjoint()).scale(pi);
                }
                crate::hermitian::validate_density(HermitianMatrix::symmetrized(&mat)?)
            }
        }
    }

    fn check_step(&self, theta: f64, step: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if theta - step < lo || theta + step > hi {
            return Err(Error::StepTooLarge {
                theta,
                step,
                lo,
                hi,
            });
        }
        Ok(())
    }
}

fn grid_lookup(thetas: &[f64], theta: f64) -> Option<usize> {
    let tol = 1e-12 * theta.abs().max(1.0);
    thetas.iter().position(|&t| (t - theta).abs() <= tol)
}

fn spectral_point(
    eigenvalues: &SpectrumFn,
    eigenvectors: &BasisFn,
    dim: usize,
    theta: f64,
) -> Result<(Vec<f64>, CMatrix)> {
    let p = eigenvalues(theta)?;
    let basis = eigenvectors(theta)?;
    if basis.nrows() != dim || basis.ncols() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: basis.nrows(),
        });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidSpectralData(format!(
            "spectral eigenvalues sum to {sum} at theta = {theta} (tolerance 1e-10)"
        )));
    }
    Ok((p, basis))
}

/// How a derivative should be produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivativeSpec {
    /// Closed form: the analytic evaluator, or `-i[H, rho]` for unitary kinds.
    Exact,
    /// Symmetrized central difference with the given step.
    CentralDifference { step: f64 },
}

impl DerivativeSpec {
    pub fn central(step: f64) -> Self {
        assert!(
            step > 0.0 && step <= 0.1,
            "central-difference step must lie in (0, 0.1], got {step}"
        );
        Self::CentralDifference { step }
    }

    pub fn step(&self) -> f64 {
        match self {
            Self::Exact => DEFAULT_FD_STEP,
            Self::CentralDifference { step } => *step,
        }
    }
}

impl Default for DerivativeSpec {
    fn default() -> Self {
        Self::CentralDifference {
            step: DEFAULT_FD_STEP,
        }
    }
}

/// `-i [H, M]`, forced exactly Hermitian.
pub fn commutator_derivative(generator: &HermitianMatrix, m: &CMatrix) -> Result<HermitianMatrix> {
    let c = generator.matrix() * m - m * generator.matrix();
    let minus_i = C64::new(0.0, -1.0);
    HermitianMatrix::symmetrized(&(c * minus_i))
}

/// Evaluates the matrix derivative of the family at `theta`.
pub fn evaluate_derivative(
    family: &StateFamily,
    theta: f64,
    spec: DerivativeSpec,
) -> Result<HermitianMatrix> {
    match (family, spec) {
        (StateFamily::Unitary { generator, .. }, DerivativeSpec::Exact) => {
            let rho = family.density_at(theta)?;
            commutator_derivative(generator, rho.matrix())
        }
        (StateFamily::Analytic { derivative, .. }, DerivativeSpec::Exact) => derivative(theta),
        (StateFamily::Sampled { .. } | StateFamily::Spectral { .. }, DerivativeSpec::Exact) => {
            Err(Error::EvaluationFailure(format!(
                "no exact derivative available for a {} family; use central differences",
                family.kind_name()
            )))
        }
        (_, DerivativeSpec::CentralDifference { step }) => {
            family.check_step(theta, step)?;
            let plus = family.density_at(theta + step)?;
            let minus = family.density_at(theta - step)?;
            let diff = (plus.matrix() - minus.matrix()).unscale(2.0 * step);
            HermitianMatrix::symmetrized(&diff)
        }
    }
}

/// Eigenvalue derivatives and the support overlap table obtained from first
/// order perturbation theory: `dp_i = (drho)_ii` and
/// `overlaps[i][j] = (drho)_ij / (p_j - p_i)` for `i != j`, in the eigenbasis.
/// Diagonal overlaps are gauged to zero (parallel transport). Degenerate
/// pairs must be pre-aligned (off-diagonal derivative element ~ 0); an
/// unaligned pair is an error.
pub fn overlaps_from_perturbation(
    decomp: &SpectralDecomposition,
    drho: &HermitianMatrix,
) -> Result<(CMatrix, Vec<f64>)> {
    if decomp.full_dim() != drho.dim() {
        return Err(Error::DimensionMismatch {
            expected: decomp.full_dim(),
            got: drho.dim(),
        });
    }
    let s = decomp.support_dim();
    let p = decomp.eigenvalues();
    let m = decomp.vectors().adjoint() * drho.matrix() * decomp.vectors();
    let scale = drho.max_abs().max(1.0);
    let mut overlaps = CMatrix::zeros(s, s);
    let mut dp = vec![0.0f64; s];
    for i in 0..s {
        dp[i] = m[(i, i)].re;
        for j in 0..s {
            if i == j {
                continue;
            }
            let gap = (p[i] - p[j]).abs();
            if gap > DEGENERACY_GAP {
                overlaps[(i, j)] = m[(i, j)] / cr(p[j] - p[i]);
            } else if m[(i, j)].norm() <= ALIGNED_OFFDIAG_TOL * scale {
                overlaps[(i, j)] = cr(0.0);
            } else {
                return Err(Error::DegenerateGap { i, j, gap });
            }
        }
    }
    Ok((overlaps, dp))
}

/// Everything the support-restricted QFI formulas need at one parameter
/// value: the support decomposition, the matrix derivative, eigenvalue
/// derivatives, and optionally the eigenvector derivatives with the support
/// overlap table.
#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    decomp: SpectralDecomposition,
    drho: HermitianMatrix,
    dp: Vec<f64>,
    dpsi: Option<Vec<CVector>>,
    overlaps: Option<CMatrix>,
    diagnostics: Vec<String>,
}

impl DerivativeBundle {
    pub fn new(
        decomp: SpectralDecomposition,
        drho: HermitianMatrix,
        dp: Vec<f64>,
        dpsi: Option<Vec<CVector>>,
        overlaps: Option<CMatrix>,
        diagnostics: Vec<String>,
    ) -> Result<Self> {
        if dp.len() != decomp.support_dim() {
            return Err(Error::DimensionMismatch {
                expected: decomp.support_dim(),
                got: dp.len(),
            });
        }
        Ok(Self {
            decomp,
            drho,
            dp,
            dpsi,
            overlaps,
            diagnostics,
        })
    }

    /// Exact bundle for a unitary family: `|d psi_i> = -i H |psi_i>`,
    /// eigenvalue derivatives identically zero, and the matrix derivative
    /// assembled from support outer products in O(s N^2).
    pub fn for_unitary(
        decomp: SpectralDecomposition,
        generator: &HermitianMatrix,
    ) -> Result<Self> {
        let n = decomp.full_dim();
        if generator.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: generator.dim(),
            });
        }
        let s = decomp.support_dim();
        let minus_i = C64::new(0.0, -1.0);
        let dpsi: Vec<CVector> = (0..s)
            .map(|i| (generator.matrix() * decomp.vector(i)) * minus_i)
            .collect();
        let mut overlaps = CMatrix::zeros(s, s);
        for j in 0..s {
            for i in 0..s {
                overlaps[(i, j)] = decomp.vectors().column(i).dotc(&dpsi[j]);
            }
        }
        // product rule with dp = 0; exact because the eigenvalues are frozen
        let mut drho = CMatrix::zeros(n, n);
        for (i, d) in dpsi.iter().enumerate() {
            let psi = decomp.vector(i);
            drho += (d * psi.adjoint() + &psi * d.adjoint()).scale(decomp.eigenvalues()[i]);
        }
        let diagnostics = decomp.near_threshold_diagnostics();
        Ok(Self {
            decomp,
            drho: HermitianMatrix::symmetrized(&drho)?,
            dp: vec![0.0; s],
            dpsi: Some(dpsi),
            overlaps: Some(overlaps),
            diagnostics,
        })
    }

    /// Bundle from a known matrix derivative through perturbation theory.
    /// Degenerate clusters are aligned against `drho` first. The component of
    /// each eigenvector derivative outside the support is recovered through
    /// the complement projector, never through out-of-support eigenvectors.
    pub fn from_perturbation(
        decomp: SpectralDecomposition,
        drho: HermitianMatrix,
    ) -> Result<Self> {
        let (decomp, mut diagnostics) = decomp.align_degenerate(&drho)?;
        diagnostics.extend(decomp.near_threshold_diagnostics());
        let (overlaps, dp) = overlaps_from_perturbation(&decomp, &drho)?;
        let s = decomp.support_dim();
        let n = decomp.full_dim();
        let full_rank = s == n;
        let projector = if full_rank {
            None
        } else {
            Some(decomp.projector())
        };
        let mut dpsi = Vec::with_capacity(s);
        for j in 0..s {
            let mut v = CVector::zeros(n);
            for i in 0..s {
                if i != j {
                    v += decomp.vector(i) * overlaps[(i, j)];
                }
            }
            if let Some(proj) = &projector {
                let w = drho.matrix() * decomp.vector(j);
                let outside = &w - proj * &w;
                v += outside.unscale(decomp.eigenvalues()[j]);
            }
            dpsi.push(v);
        }
        Ok(Self {
            decomp,
            drho,
            dp,
            dpsi: Some(dpsi),
            overlaps: Some(overlaps),
            diagnostics,
        })
    }

    pub fn decomp(&self) -> &SpectralDecomposition {
        &self.decomp
    }

    pub fn drho(&self) -> &HermitianMatrix {
        &self.drho
    }

    pub fn dp(&self) -> &[f64] {
        &self.dp
    }

    pub fn dpsi(&self) -> Option<&[CVector]> {
        self.dpsi.as_deref()
    }

    pub fn overlaps(&self) -> Option<&CMatrix> {
        self.overlaps.as_ref()
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    /// `d sqrt(p_i) = dp_i / (2 sqrt(p_i))` over the support.
    pub fn dsqrt_p(&self) -> Vec<f64> {
        self.dp
            .iter()
            .zip(self.decomp.eigenvalues())
            .map(|(&dp, &p)| dp / (2.0 * p.sqrt()))
            .collect()
    }

    /// Max of `|o_ij + conj(o_ji)|` over the overlap table.
    pub fn antisymmetry_defect(&self) -> f64 {
        let Some(o) = &self.overlaps else { return 0.0 };
        let s = o.nrows();
        let mut worst = 0.0f64;
        for i in 0..s {
            for j in 0..s {
                worst = worst.max((o[(i, j)] + o[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Max-abs defect of the product rule
    /// `drho ~ sum_i dp_i |psi_i><psi_i| + p_i (|dpsi_i><psi_i| + h.c.)`
    /// sandwiched between support projectors.
    pub fn product_rule_defect(&self) -> Result<f64> {
        let dpsi = self.dpsi.as_ref().ok_or(Error::IncompleteBundle {
            missing: "eigenvector derivatives",
        })?;
        let n = self.decomp.full_dim();
        let mut recon = CMatrix::zeros(n, n);
        for (i, d) in dpsi.iter().enumerate() {
            let psi = self.decomp.vector(i);
            let p = self.decomp.eigenvalues()[i];
            recon += (&psi * psi.adjoint()).scale(self.dp[i]);
            recon += (d * psi.adjoint() + &psi * d.adjoint()).scale(p);
        }
        let proj = self.decomp.projector();
        let diff = &proj * (recon - self.drho.matrix()) * &proj;
        Ok(max_abs(&diff))
    }
}

/// Derivative bundle through the three-point stencil: support eigenpairs at
/// `theta - h`, `theta`, `theta + h`, neighbor eigenvectors phase-aligned to
/// the central ones, then centered differences. Unitary kinds bypass the
/// differencing entirely and use the exact generator action.
pub fn eigen_derivatives(
    family: &StateFamily,
    theta: f64,
    step: f64,
    threshold: f64,
) -> Result<DerivativeBundle> {
    assert!(
        step > 0.0 && step <= 0.1,
        "stencil step must lie in (0, 0.1], got {step}"
    );
    if let StateFamily::Unitary { generator, .. } = family {
        let rho = family.density_at(theta)?;
        let decomp = spectral_decompose(&rho, threshold)?;
        return DerivativeBundle::for_unitary(decomp, generator);
    }
    family.check_step(theta, step)?;

    let (p_c, mut basis_c, p_m, basis_m, p_p, basis_p) = match family {
        StateFamily::Spectral {
            eigenvalues,
            eigenvectors,
            dim,
            ..
        } => {
            let mut points = Vec::with_capacity(3);
            for t in [theta, theta - step, theta + step] {
                let (p, basis) = spectral_point(eigenvalues, eigenvectors, *dim, t)?;
                points.push(filter_sorted(p, basis, threshold));
            }
            let (pp, bp) = points.pop().unwrap();
            let (pm, bm) = points.pop().unwrap();
            let (pc, bc) = points.pop().unwrap();
            (pc, bc, pm, bm, pp, bp)
        }
        _ => {
            let mut points = Vec::with_capacity(3);
            for t in [theta, theta - step, theta + step] {
                let rho = family.density_at(t)?;
                let d = spectral_decompose(&rho, threshold)?;
                points.push((d.eigenvalues().to_vec(), d.vectors().clone()));
            }
            let (pp, bp) = points.pop().unwrap();
            let (pm, bm) = points.pop().unwrap();
            let (pc, bc) = points.pop().unwrap();
            (pc, bc, pm, bm, pp, bp)
        }
    };
    // fix the central gauge first so the stored decomposition matches the
    // overlaps and derivatives computed against it
    for j in 0..basis_c.ncols() {
        let mut col = basis_c.column(j).clone_owned();
        gauge_fix(&mut col);
        basis_c.set_column(j, &col);
    }

    let s = p_c.len();
    if p_m.len() != s || p_p.len() != s {
        return Err(Error::SupportDimensionChanged {
            minus: p_m.len(),
            center: s,
            plus: p_p.len(),
        });
    }
    // a crossing inside the stencil shows up as a closing gap at the center
    for i in 0..s.saturating_sub(1) {
        let gap = p_c[i] - p_c[i + 1];
        if gap.abs() < DEGENERACY_GAP {
            return Err(Error::DegenerateGap { i, j: i + 1, gap });
        }
    }

    let mut basis_m = basis_m;
    let mut basis_p = basis_p;
    for side in [&mut basis_m, &mut basis_p] {
        for i in 0..s {
            let z = basis_c.column(i).dotc(&side.column(i).clone_owned());
            let mag = z.norm();
            if mag < 0.5 {
                // eigenvector tracking lost; closest eigenvalue pair is the culprit
                let j = nearest_other(&p_c, i);
                return Err(Error::DegenerateGap {
                    i,
                    j,
                    gap: (p_c[i] - p_c[j]).abs(),
                });
            }
            let phase = z.conj() / cr(mag);
            let aligned = side.column(i) * phase;
            side.set_column(i, &aligned);
        }
    }

    let dp: Vec<f64> = (0..s).map(|i| (p_p[i] - p_m[i]) / (2.0 * step)).collect();
    let dpsi: Vec<CVector> = (0..s)
        .map(|i| {
            (basis_p.column(i).clone_owned() - basis_m.column(i).clone_owned())
                .unscale(2.0 * step)
        })
        .collect();
    let mut overlaps = CMatrix::zeros(s, s);
    for j in 0..s {
        for i in 0..s {
            overlaps[(i, j)] = basis_c.column(i).dotc(&dpsi[j]);
        }
    }

    let drho = match family {
        StateFamily::Analytic { derivative, .. } => derivative(theta)?,
        _ => evaluate_derivative(family, theta, DerivativeSpec::central(step))?,
    };

    let decomp = SpectralDecomposition::from_parts(p_c, basis_c, threshold)?;
    let diagnostics = decomp.near_threshold_diagnostics();
    DerivativeBundle::new(decomp, drho, dp, Some(dpsi), Some(overlaps), diagnostics)
}

fn filter_sorted(p: Vec<f64>, basis: CMatrix, threshold: f64) -> (Vec<f64>, CMatrix) {
    let mut pairs: Vec<(f64, CVector)> = p
        .into_iter()
        .zip(basis.column_iter().map(|c| c.clone_owned()))
        .filter(|(p, _)| *p > threshold)
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n = basis.nrows();
    let mut out = CMatrix::zeros(n, pairs.len());
    let mut values = Vec::with_capacity(pairs.len());
    for (j, (v, c)) in pairs.into_iter().enumerate() {
        out.set_column(j, &c);
        values.push(v);
    }
    (values, out)
}

fn nearest_other(p: &[f64], i: usize) -> usize {
    let mut best = if i == 0 { 1.min(p.len() - 1) } else { 0 };
    let mut best_gap = f64::INFINITY;
    for (j, &pj) in p.iter().enumerate() {
        if j != i {
            let gap = (p[i] - pj).abs();
            if gap < best_gap {
                best_gap = gap;
                best = j;
            }
        }
    }
    best
}

/// Builds the derivative bundle by the most accurate route the family
/// supports: exact generator action for unitary kinds, perturbation theory on
/// the exact matrix derivative for analytic kinds (unless a finite-difference
/// spec is requested explicitly), and the stencil otherwise.
pub fn derivative_bundle(
    family: &StateFamily,
    theta: f64,
    spec: DerivativeSpec,
    threshold: f64,
) -> Result<DerivativeBundle> {
    match (family, spec) {
        (StateFamily::Unitary { .. }, _) => eigen_derivatives(family, theta, spec.step(), threshold),
        (StateFamily::Analytic { .. }, DerivativeSpec::Exact) => {
            let rho = family.density_at(theta)?;
            let decomp = spectral_decompose(&rho, threshold)?;
            let drho = evaluate_derivative(family, theta, DerivativeSpec::Exact)?;
            DerivativeBundle::from_perturbation(decomp, drho)
        }
        _ => eigen_derivatives(family, theta, spec.step(), threshold),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::DEFAULT_SUPPORT_THRESHOLD as TH;
    use approx::assert_abs_diff_eq;

    fn sigma_x_half() -> HermitianMatrix {
        HermitianMatrix::new(CMatrix::from_row_slice(
            2,
            2,
            &[cr(0.0), cr(0.5), cr(0.5), cr(0.0)],
        ))
        .unwrap()
    }

    fn diag_family() -> StateFamily {
        StateFamily::analytic(
            2,
            |t| DensityMatrix::from_diagonal(&[t, 1.0 - t]),
            |_| Ok(HermitianMatrix::from_real_diagonal(&[1.0, -1.0])),
        )
        .with_domain(1e-6, 1.0 - 1e-6)
    }

    #[test]
    fn unitary_derivative_matches_hand_commutator() {
        // oracle: -i[H, rho] computed by hand for rho = diag(3/4, 1/4), H = sx/2
        let rho0 = DensityMatrix::from_diagonal(&[0.75, 0.25]).unwrap();
        let family = StateFamily::unitary(rho0, sigma_x_half()).unwrap();
        let d = evaluate_derivative(&family, 0.0, DerivativeSpec::Exact).unwrap();
        let expected = CMatrix::from_row_slice(
            2,
            2,
            &[
                cr(0.0),
                C64::new(0.0, 0.25),
                C64::new(0.0, -0.25),
                cr(0.0),
            ],
        );
        assert!(max_abs(&(d.matrix() - &expected)) < 1e-14);
        // the central difference converges to the same matrix
        let fd = evaluate_derivative(&family, 0.0, DerivativeSpec::central(1e-5)).unwrap();
        assert!(max_abs(&(fd.matrix() - &expected)) < 1e-9);
    }

    #[test]
    fn analytic_linear_family_derivative() {
        let family = diag_family();
        let d = evaluate_derivative(&family, 0.3, DerivativeSpec::Exact).unwrap();
        assert_abs_diff_eq!(d.matrix()[(0, 0)].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d.matrix()[(1, 1)].re, -1.0, epsilon = 1e-14);
    }

    #[test]
    fn sampled_quadratic_family_central_difference() {
        let family = StateFamily::sampled(2, |t| DensityMatrix::from_diagonal(&[t * t, 1.0 - t * t]))
            .with_domain(0.0, 0.9);
        let d = evaluate_derivative(&family, 0.5, DerivativeSpec::central(1e-3)).unwrap();
        // oracle: d/dt diag(t^2, 1-t^2) = diag(2t, -2t) = diag(1, -1) at t = 0.5
        assert!((d.matrix()[(0, 0)].re - 1.0).abs() < 1e-6);
        assert!((d.matrix()[(1, 1)].re + 1.0).abs() < 1e-6);
    }

    #[test]
    fn step_outside_domain_is_rejected() {
        let family = diag_family();
        let err = evaluate_derivative(&family, 0.95, DerivativeSpec::central(0.1)).unwrap_err();
        assert!(matches!(err, Error::StepTooLarge { .. }));
    }

    #[test]
    fn perturbation_overlap_matches_direct_division() {
        let rho = DensityMatrix::from_diagonal(&[0.75, 0.25]).unwrap();
        let decomp = spectral_decompose(&rho, TH).unwrap();
        let drho = HermitianMatrix::new(CMatrix::from_row_slice(
            2,
            2,
            &[
                cr(0.0),
                C64::new(0.0, 0.25),
                C64::new(0.0, -0.25),
                cr(0.0),
            ],
        ))
        .unwrap();
        let (o, dp) = overlaps_from_perturbation(&decomp, &drho).unwrap();
        // oracle: (i/4) / (0.25 - 0.75) = -i/2
        assert!((o[(0, 1)] - C64::new(0.0, -0.5)).norm() < 1e-14);
        assert!((o[(1, 0)] - C64::new(0.0, -0.5)).norm() < 1e-14);
        assert_abs_diff_eq!(dp[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(dp[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn commuting_family_has_zero_overlaps() {
        let rho = DensityMatrix::from_diagonal(&[0.3, 0.7]).unwrap();
        let decomp = spectral_decompose(&rho, TH).unwrap();
        let drho = HermitianMatrix::from_real_diagonal(&[1.0, -1.0]);
        let (o, dp) = overlaps_from_perturbation(&decomp, &drho).unwrap();
        assert_eq!(o[(0, 1)], cr(0.0));
        // descending order puts p = 0.7 first, so its derivative comes first
        assert_abs_diff_eq!(dp[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(dp[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn unaligned_degeneracy_is_an_error() {
        let rho = DensityMatrix::from_diagonal(&[0.5, 0.5]).unwrap();
        let decomp = spectral_decompose(&rho, TH).unwrap();
        let drho = HermitianMatrix::new(CMatrix::from_row_slice(
            2,
            2,
            &[cr(0.0), cr(0.3), cr(0.3), cr(0.0)],
        ))
        .unwrap();
        let err = overlaps_from_perturbation(&decomp, &drho).unwrap_err();
        assert!(matches!(err, Error::DegenerateGap { .. }));
        // alignment makes the same data usable
        let bundle = DerivativeBundle::from_perturbation(decomp, drho).unwrap();
        assert_eq!(bundle.overlaps().unwrap()[(0, 1)], cr(0.0));
    }

    #[test]
    fn unitary_eigen_derivatives_match_generator_action() {
        let rho0 = DensityMatrix::from_diagonal(&[0.75, 0.25]).unwrap();
        let family = StateFamily::unitary(rho0, sigma_x_half()).unwrap();
        let b = eigen_derivatives(&family, 0.0, DEFAULT_FD_STEP, TH).unwrap();
        let dpsi = b.dpsi().unwrap();
        // oracle: -i (sx/2) |0> = (0, -i/2)
        assert!((dpsi[0][0] - cr(0.0)).norm() < 1e-14);
        assert!((dpsi[0][1] - C64::new(0.0, -0.5)).norm() < 1e-14);
        let o = b.overlaps().unwrap();
        assert!((o[(0, 1)] - C64::new(0.0, -0.5)).norm() < 1e-14);
        assert!(b.dp().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_family_has_zero_derivatives() {
        let family = StateFamily::sampled(3, |_| {
            DensityMatrix::from_diagonal(&[0.5, 0.3, 0.2])
        });
        let b = eigen_derivatives(&family, 0.4, 1e-4, TH).unwrap();
        assert!(b.dp().iter().all(|&x| x == 0.0));
        for v in b.dpsi().unwrap() {
            assert_eq!(v.norm(), 0.0);
        }
    }

    #[test]
    fn spectral_family_exact_input() {
        // p(t) = (t, 1-t) with fixed eigenvectors; by the descending-order
        // convention the slot ordering follows the sorted eigenvalues.
        let basis = CMatrix::identity(2, 2);
        let family = StateFamily::spectral(
            2,
            |t| Ok(vec![t, 1.0 - t]),
            move |_| Ok(basis.clone()),
        )
        .with_domain(1e-3, 1.0 - 1e-3);
        // at theta = 0.75 the given order is already descending: dp = (1, -1)
        let b = eigen_derivatives(&family, 0.75, 1e-5, TH).unwrap();
        assert_abs_diff_eq!(b.dp()[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b.dp()[1], -1.0, epsilon = 1e-9);
        for v in b.dpsi().unwrap() {
            assert_eq!(v.norm(), 0.0);
        }
        // at theta = 0.25 sorting swaps the slots
        let b = eigen_derivatives(&family, 0.25, 1e-5, TH).unwrap();
        assert_abs_diff_eq!(b.decomp().eigenvalues()[0], 0.75, epsilon = 1e-14);
        assert_abs_diff_eq!(b.dp()[0], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b.dp()[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rank_crossing_is_detected() {
        // rank jumps from 1 to 2 as theta crosses 0.5
        let family = StateFamily::sampled(2, |t| {
            let q = (t - 0.5).max(0.0);
            DensityMatrix::from_diagonal(&[1.0 - q, q])
        });
        let err = eigen_derivatives(&family, 0.5, 1e-3, TH).unwrap_err();
        assert!(matches!(err, Error::SupportDimensionChanged { .. }));
    }

    fn rotated_family(rho0: &DensityMatrix, h: &HermitianMatrix) -> StateFamily {
        let dim = rho0.dim();
        let h = h.clone();
        let rho_mat = rho0.matrix().clone();
        StateFamily::sampled(dim, move |t| {
            let u = crate::hermitian::unitary_evolution(&h, t)?;
            crate::hermitian::validate_density(HermitianMatrix::symmetrized(
                &(&u * &rho_mat * u.adjoint()),
            )?)
        })
    }

    #[test]
    fn bundle_invariants_hold_for_stencil_output() {
        let mut rng = crate::sampling::rng_from_seed(23);
        let h = crate::sampling::random_hermitian(&mut rng, 4);
        let (rho0, _) = crate::sampling::random_density(&mut rng, 4, 3, 5e-2);
        let family = rotated_family(&rho0, &h);
        let b = eigen_derivatives(&family, 0.3, 1e-5, TH).unwrap();
        assert!(b.antisymmetry_defect() < 1e-8);
        assert!(b.drho().trace_re().abs() < 1e-9);
        let dp_sum: f64 = b.dp().iter().sum();
        assert!(dp_sum.abs() < 1e-9);
        assert!(b.product_rule_defect().unwrap() < 1e-6);
    }

    #[test]
    fn finite_difference_error_scales_quadratically() {
        // fixed-axis rotating qubit family; oracle dpsi from the generator
        let rho0 = DensityMatrix::from_diagonal(&[0.8, 0.2]).unwrap();
        let h = sigma_x_half();
        let family = rotated_family(&rho0, &h);
        let theta = 0.2;
        let exact = {
            let family_exact = StateFamily::unitary(rho0.clone(), h.clone()).unwrap();
            let b = eigen_derivatives(&family_exact, theta, 1e-5, TH).unwrap();
            b.dpsi().unwrap().to_vec()
        };
        let err_at = |step: f64| -> f64 {
            let b = eigen_derivatives(&family, theta, step, TH).unwrap();
            b.dpsi()
                .unwrap()
                .iter()
                .zip(&exact)
                .map(|(a, e)| {
                    // compare gauge-invariantly: subtract the projection on psi
                    (a - e).norm()
                })
                .fold(0.0, f64::max)
        };
        // gauge conventions differ between the exact and stencil routes only
        // in the diagonal overlap, which vanishes for this family
        let e1 = err_at(2e-3);
        let e2 = err_at(1e-3);
        let ratio = e1 / e2;
        assert!(
            (3.0..=5.0).contains(&ratio),
            "expected ~4x error reduction when halving h, got {ratio} ({e1:e} vs {e2:e})"
        );
    }
}
