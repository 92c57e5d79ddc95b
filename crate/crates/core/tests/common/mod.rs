// Each test binary uses a different subset of these helpers.
#![allow(dead_code)]

//! Shared corpus of random cases for the acceptance and property suites.
//!
//! Two kinds of cases are generated deterministically from a seed:
//!
//! - *unitary*: a random low-rank state with a random Hermitian generator;
//! - *analytic*: eigenvalues reweighted as normalized exponentials
//!   `p_i(t) ~ exp(a_i + b_i t)` inside a frame rotating as `exp(-i A t) V`,
//!   which gives closed forms for both the state and its derivative, so
//!   every pathway consumes exactly the same tangent data.

use qfi_core::family::commutator_derivative;
use qfi_core::hermitian::{
    unitary_evolution, CMatrix, DensityMatrix, HermitianMatrix, SpectralDecomposition,
};
use qfi_core::sampling;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const THRESHOLD: f64 = 1e-12;

pub struct Case {
    pub rho: DensityMatrix,
    pub drho: HermitianMatrix,
    /// Present for unitary parametrizations.
    pub generator: Option<HermitianMatrix>,
    pub dim: usize,
    pub rank: usize,
}

pub fn unitary_case(rng: &mut ChaCha8Rng, dim: usize, rank: usize) -> Case {
    let (rho, _) = sampling::random_density(rng, dim, rank, 2e-2);
    let h = sampling::random_hermitian(rng, dim);
    let drho = commutator_derivative(&h, rho.matrix()).expect("square");
    Case {
        rho,
        drho,
        generator: Some(h),
        dim,
        rank,
    }
}

/// Parameters of an analytic exp-reweighted family, kept so tests can
/// evaluate the same family at other points or conjugate it.
pub struct AnalyticFamily {
    pub dim: usize,
    pub rank: usize,
    pub offsets: Vec<f64>,
    pub rates: Vec<f64>,
    pub frame: CMatrix,
    pub rotation: HermitianMatrix,
}

impl AnalyticFamily {
    pub fn random(rng: &mut ChaCha8Rng, dim: usize, rank: usize) -> Self {
        let offsets: Vec<f64> = (0..rank).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let rates: Vec<f64> = (0..rank).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let frame = sampling::random_unitary(rng, dim);
        let rotation = sampling::random_hermitian(rng, dim);
        Self {
            dim,
            rank,
            offsets,
            rates,
            frame,
            rotation,
        }
    }

    pub fn eigenvalues_at(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let w: Vec<f64> = self
            .offsets
            .iter()
            .zip(&self.rates)
            .map(|(&a, &b)| (a + b * t).exp())
            .collect();
        let total: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / total).collect();
        let mean_rate: f64 = p.iter().zip(&self.rates).map(|(&pi, &bi)| pi * bi).sum();
        let dp: Vec<f64> = p
            .iter()
            .zip(&self.rates)
            .map(|(&pi, &bi)| pi * (bi - mean_rate))
            .collect();
        (p, dp)
    }

    fn frame_at(&self, t: f64) -> CMatrix {
        let u = unitary_evolution(&self.rotation, t).expect("hermitian rotation");
        u * &self.frame
    }

    pub fn state_at(&self, t: f64) -> DensityMatrix {
        let (p, _) = self.eigenvalues_at(t);
        let u = self.frame_at(t);
        let mut mat = CMatrix::zeros(self.dim, self.dim);
        for (i, &pi) in p.iter().enumerate() {
            let col = u.column(i);
            mat += (col * col.adjoint()).scale(pi);
        }
        DensityMatrix::new((&mat + mat.adjoint()).scale(0.5)).expect("valid by construction")
    }

    pub fn derivative_at(&self, t: f64) -> HermitianMatrix {
        let (_, dp) = self.eigenvalues_at(t);
        let rho = self.state_at(t);
        let rotating = commutator_derivative(&self.rotation, rho.matrix()).expect("square");
        let u = self.frame_at(t);
        let mut reweight = CMatrix::zeros(self.dim, self.dim);
        for (i, &dpi) in dp.iter().enumerate() {
            let col = u.column(i);
            reweight += (col * col.adjoint()).scale(dpi);
        }
        HermitianMatrix::symmetrized(&(rotating.matrix() + reweight)).expect("square")
    }

    pub fn case_at(&self, t: f64) -> Case {
        Case {
            rho: self.state_at(t),
            drho: self.derivative_at(t),
            generator: None,
            dim: self.dim,
            rank: self.rank,
        }
    }
}

pub fn analytic_case(rng: &mut ChaCha8Rng, dim: usize, rank: usize) -> Case {
    AnalyticFamily::random(rng, dim, rank).case_at(0.3)
}

/// The three pathway values for one case, sharing the same decomposition.
pub struct PathwayValues {
    pub sld: qfi_core::engine::QfiReport,
    pub support: qfi_core::engine::QfiReport,
    pub matrix: qfi_core::engine::QfiReport,
}

pub fn run_pathways(case: &Case) -> PathwayValues {
    let decomp = qfi_core::hermitian::spectral_decompose(&case.rho, THRESHOLD).expect("decompose");
    let sld = qfi_core::engine::qfi_sld(&decomp, &case.drho).expect("sld");
    let bundle = match &case.generator {
        Some(h) => qfi_core::family::DerivativeBundle::for_unitary(decomp, h).expect("bundle"),
        None => qfi_core::family::DerivativeBundle::from_perturbation(decomp, case.drho.clone())
            .expect("bundle"),
    };
    let support = qfi_core::engine::qfi_support(&bundle).expect("support");
    let transfer = qfi_core::matrix_repr::transfer_matrix(&bundle).expect("transfer");
    let coeffs = qfi_core::matrix_repr::coefficient_matrices(bundle.decomp());
    let matrix = qfi_core::matrix_repr::qfi_matrix_form(&coeffs, &transfer, &bundle.dsqrt_p())
        .expect("matrix form");
    PathwayValues {
        sld,
        support,
        matrix,
    }
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(1.0)
}

/// Hermitian generator whose support block is diagonal in the eigenbasis,
/// so the eigen-ensemble satisfies the optimality condition while the
/// out-of-support action stays generic.
pub fn commuting_generator(
    rng: &mut ChaCha8Rng,
    decomp: &SpectralDecomposition,
) -> HermitianMatrix {
    let h = sampling::random_hermitian(rng, decomp.full_dim());
    let s = decomp.support_dim();
    let block = decomp.vectors().adjoint() * h.matrix() * decomp.vectors();
    let mut correction = CMatrix::zeros(decomp.full_dim(), decomp.full_dim());
    for i in 0..s {
        for j in 0..s {
            if i != j {
                let vi = decomp.vector(i);
                let vj = decomp.vector(j);
                correction += (vi * vj.adjoint()) * block[(i, j)];
            }
        }
    }
    HermitianMatrix::symmetrized(&(h.matrix() - correction)).expect("square")
}
