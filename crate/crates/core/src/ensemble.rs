//! Convex-roof machinery for unitary parametrization: ensemble variance
//! averages, the eigen-ensemble optimality condition, the Y observable whose
//! eigenbasis generates the optimal pure-state ensemble, and deterministic
//! random-ensemble sampling of the feasible set.
//!
//! The QFI equals the minimum of `4 sum_k q_k (Delta H)^2` over all pure-state
//! decompositions of the state; the eigen-ensemble attains it exactly when
//! every off-diagonal generator element in the eigenbasis vanishes.

use serde::Serialize;

use crate::engine::{qfi_unitary, QfiReport};
use crate::family::StateFamily;
use crate::hermitian::{
    cr, gauge_fix, max_abs, CMatrix, CVector, HermitianMatrix, SpectralDecomposition,
};
use crate::sampling;
use crate::{Error, Result};

/// A pure-state decomposition `rho = sum_k q_k |Psi_k><Psi_k|`.
#[derive(Debug, Clone)]
pub struct PureEnsemble {
    members: Vec<EnsembleMember>,
}

#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub weight: f64,
    pub state: CVector,
}

impl PureEnsemble {
    pub fn new(members: Vec<EnsembleMember>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidEnsemble("no members".into()));
        }
        let sum: f64 = members.iter().map(|m| m.weight).sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidEnsemble(format!(
                "weights sum to {sum}, expected 1 within 1e-10"
            )));
        }
        let dim = members[0].state.len();
        for (k, m) in members.iter().enumerate() {
            if m.weight <= 0.0 {
                return Err(Error::InvalidEnsemble(format!(
                    "member {k} has nonpositive weight {}",
                    m.weight
                )));
            }
            if m.state.len() != dim {
                return Err(Error::InvalidEnsemble(format!(
                    "member {k} has dimension {} instead of {dim}",
                    m.state.len()
                )));
            }
            let norm = m.state.norm();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidEnsemble(format!(
                    "member {k} has norm {norm}, expected 1 within 1e-10"
                )));
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members[0].state.len()
    }

    /// `sum_k q_k |Psi_k><Psi_k|`.
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.dim();
        let mut out = CMatrix::zeros(n, n);
        for m in &self.members {
            out += (&m.state * m.state.adjoint()).scale(m.weight);
        }
        out
    }

    /// Max-abs entrywise deviation of the reconstruction from `rho`.
    pub fn reconstruction_defect(&self, rho: &CMatrix) -> f64 {
        max_abs(&(self.reconstruct() - rho))
    }
}

/// `4 sum_k q_k (<Psi_k|H^2|Psi_k> - <Psi_k|H|Psi_k>^2)`: the convex-roof
/// objective evaluated on one ensemble.
pub fn ensemble_average_variance(e: &PureEnsemble, h: &HermitianMatrix) -> Result<f64> {
    if e.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: e.dim(),
            got: h.dim(),
        });
    }
    let mut total = 0.0f64;
    for m in &e.members {
        let hpsi = h.matrix() * &m.state;
        let mean = m.state.dotc(&hpsi).re;
        total += m.weight * (hpsi.norm_squared() - mean * mean);
    }
    Ok(4.0 * total)
}

/// The largest off-diagonal generator element within the support, if any.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub i: usize,
    pub j: usize,
    pub magnitude: f64,
}

/// Verdict on whether the eigen-ensemble attains the convex roof.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalityCheck {
    pub optimal: bool,
    pub witness: Option<Witness>,
}

/// The eigen-ensemble is optimal iff every transition element
/// `<psi_i|H|psi_j>` (`i != j` within the support) vanishes.
pub fn eigen_ensemble_is_optimal(
    decomp: &SpectralDecomposition,
    h: &HermitianMatrix,
    tol: f64,
) -> Result<OptimalityCheck> {
    if h.dim() != decomp.full_dim() {
        return Err(Error::DimensionMismatch {
            expected: decomp.full_dim(),
            got: h.dim(),
        });
    }
    let s = decomp.support_dim();
    let block = decomp.vectors().adjoint() * h.matrix() * decomp.vectors();
    let mut witness: Option<Witness> = None;
    for i in 0..s {
        for j in 0..s {
            if i == j {
                continue;
            }
            let magnitude = block[(i, j)].norm();
            if witness.as_ref().is_none_or(|w| magnitude > w.magnitude) {
                witness = Some(Witness { i, j, magnitude });
            }
        }
    }
    let optimal = witness.as_ref().is_none_or(|w| w.magnitude <= tol);
    Ok(OptimalityCheck { optimal, witness })
}

/// The observable `Y_ij = 2 sqrt(p_i p_j)/(p_i + p_j) H_ij` on the support,
/// with its spectral data in support coordinates.
#[derive(Debug, Clone)]
pub struct YObservable {
    kernel: CMatrix,
    eigenvalues: Vec<f64>,
    /// Column `k` holds the coefficients of `|y_k>` over the support vectors.
    vectors: CMatrix,
}

impl YObservable {
    pub fn support_dim(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn kernel(&self) -> &CMatrix {
        &self.kernel
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn vectors(&self) -> &CMatrix {
        &self.vectors
    }

    pub fn hermiticity_defect(&self) -> f64 {
        max_abs(&(&self.kernel - self.kernel.adjoint()))
    }
}

/// Builds and diagonalizes the Y kernel. The sums run over the support only:
/// `sqrt(p_i p_j)` kills every term with an index outside it.
pub fn y_observable(
    decomp: &SpectralDecomposition,
    h: &HermitianMatrix,
) -> Result<YObservable> {
    if h.dim() != decomp.full_dim() {
        return Err(Error::DimensionMismatch {
            expected: decomp.full_dim(),
            got: h.dim(),
        });
    }
    let s = decomp.support_dim();
    let p = decomp.eigenvalues();
    let block = decomp.vectors().adjoint() * h.matrix() * decomp.vectors();
    let kernel = CMatrix::from_fn(s, s, |i, j| {
        block[(i, j)].scale(2.0 * (p[i] * p[j]).sqrt() / (p[i] + p[j]))
    });
    let kernel = (&kernel + kernel.adjoint()).scale(0.5);
    let eig = kernel
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or(Error::EigensolverFailure { dim: s })?;
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut eigenvalues = Vec::with_capacity(s);
    let mut vectors = CMatrix::zeros(s, s);
    for (slot, &k) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[k]);
        let mut v = eig.eigenvectors.column(k).clone_owned();
        gauge_fix(&mut v);
        vectors.set_column(slot, &v);
    }
    Ok(YObservable {
        kernel,
        eigenvalues,
        vectors,
    })
}

/// Constructs the optimal pure-state ensemble
/// `|U_k> = (1/sqrt(u_k)) sum_i U_ki sqrt(p_i) |psi_i>` with
/// `U_ki = <psi_i|y_k>` and `u_k = sum_i |U_ki|^2 p_i`. Members whose weight
/// falls below the support threshold are dropped with a diagnostic and the
/// remaining weights renormalized.
pub fn optimal_ensemble(
    decomp: &SpectralDecomposition,
    h: &HermitianMatrix,
) -> Result<(PureEnsemble, Vec<String>)> {
    let y = y_observable(decomp, h)?;
    let s = decomp.support_dim();
    let p = decomp.eigenvalues();
    let mut members = Vec::with_capacity(s);
    let mut diagnostics = Vec::new();
    let mut dropped = 0.0f64;
    for k in 0..s {
        // unnormalized member: sum_i U_ki sqrt(p_i) |psi_i>
        let mut tilde = CVector::zeros(decomp.full_dim());
        for (i, &p_i) in p.iter().enumerate() {
            let coeff = y.vectors[(i, k)] * cr(p_i.sqrt());
            tilde += decomp.vector(i) * coeff;
        }
        let u_k = tilde.norm_squared();
        if u_k < decomp.threshold() {
            diagnostics.push(format!(
                "dropped ensemble member {k} with weight {u_k:e} below the support threshold"
            ));
            dropped += u_k;
            continue;
        }
        members.push(EnsembleMember {
            weight: u_k,
            state: tilde.unscale(u_k.sqrt()),
        });
    }
    if members.is_empty() {
        return Err(Error::DegenerateWeight {
            threshold: decomp.threshold(),
        });
    }
    if dropped > 0.0 {
        let keep = 1.0 - dropped;
        for m in &mut members {
            m.weight /= keep;
        }
    }
    Ok((PureEnsemble::new(members)?, diagnostics))
}

/// Deterministically samples pure-state decompositions of the state:
/// each ensemble is `|Psi_k~> = sum_i V_ki sqrt(p_i) |psi_i>` for a random
/// `size x s` matrix `V` with orthonormal columns, so the reconstruction is
/// exact by construction. Identical seeds reproduce identical ensembles.
pub fn random_ensembles(
    decomp: &SpectralDecomposition,
    seed: u64,
    count: usize,
    size: usize,
) -> Result<Vec<PureEnsemble>> {
    let s = decomp.support_dim();
    if size < s {
        return Err(Error::InvalidSize {
            size,
            support_dim: s,
        });
    }
    let p = decomp.eigenvalues();
    let mut rng = sampling::rng_from_seed(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let v = sampling::orthonormal_columns(&mut rng, size, s);
        let mut members = Vec::with_capacity(size);
        for k in 0..size {
            let mut tilde = CVector::zeros(decomp.full_dim());
            for i in 0..s {
                let coeff = v[(k, i)] * cr(p[i].sqrt());
                tilde += decomp.vector(i) * coeff;
            }
            let q_k = tilde.norm_squared();
            if q_k < 1e-14 {
                continue;
            }
            members.push(EnsembleMember {
                weight: q_k,
                state: tilde.unscale(q_k.sqrt()),
            });
        }
        out.push(PureEnsemble::new(members)?);
    }
    Ok(out)
}

/// Extracts the unitary data from a family, rejecting every other kind.
pub fn require_unitary(
    family: &StateFamily,
) -> Result<(&crate::hermitian::DensityMatrix, &HermitianMatrix)> {
    match family {
        StateFamily::Unitary { rho0, generator } => Ok((rho0, generator)),
        other => Err(Error::UnsupportedParametrization {
            kind: other.kind_name(),
        }),
    }
}

/// Summary statistics of sampled random-ensemble variance averages.
#[derive(Debug, Clone, Serialize)]
pub struct SampleStats {
    pub count: usize,
    pub seed: u64,
    pub size: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Full convex-roof analysis of a unitary problem, as surfaced by the CLI.
#[derive(Debug, Clone)]
pub struct EnsembleAnalysis {
    pub qfi: QfiReport,
    pub optimality: OptimalityCheck,
    pub y_spectrum: Vec<f64>,
    pub optimal: PureEnsemble,
    pub optimal_average_variance: f64,
    pub eigen_average_variance: f64,
    pub samples: Option<SampleStats>,
    pub diagnostics: Vec<String>,
}

/// Runs the whole machinery: QFI, optimality verdict, Y spectrum, optimal
/// ensemble and (optionally) random-ensemble sampling.
pub fn analyze_unitary(
    decomp: &SpectralDecomposition,
    h: &HermitianMatrix,
    condition_tol: f64,
    samples: Option<(u64, usize, usize)>,
) -> Result<EnsembleAnalysis> {
    let qfi = qfi_unitary(decomp, h)?;
    let optimality = eigen_ensemble_is_optimal(decomp, h, condition_tol)?;
    let y = y_observable(decomp, h)?;
    let (optimal, diagnostics) = optimal_ensemble(decomp, h)?;
    let optimal_average_variance = ensemble_average_variance(&optimal, h)?;
    let eigen = eigen_ensemble(decomp)?;
    let eigen_average_variance = ensemble_average_variance(&eigen, h)?;
    let samples = match samples {
        None => None,
        Some((seed, count, size)) => {
            let drawn = random_ensembles(decomp, seed, count, size)?;
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            let mut sum = 0.0f64;
            for e in &drawn {
                let v = ensemble_average_variance(e, h)?;
                min = min.min(v);
                max = max.max(v);
                sum += v;
            }
            Some(SampleStats {
                count,
                seed,
                size,
                min,
                mean: sum / count.max(1) as f64,
                max,
            })
        }
    };
    Ok(EnsembleAnalysis {
        qfi,
        optimality,
        y_spectrum: y.eigenvalues.clone(),
        optimal,
        optimal_average_variance,
        eigen_average_variance,
        samples,
        diagnostics,
    })
}

/// The ensemble of eigenvalues and eigenstates themselves.
pub fn eigen_ensemble(decomp: &SpectralDecomposition) -> Result<PureEnsemble> {
    let members = decomp
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(i, &p)| EnsembleMember {
            weight: p,
            state: decomp.vector(i),
        })
        .collect();
    PureEnsemble::new(members)
}
