//! Two-mode truncated Fock space and the Mach-Zehnder demo: a Fock state
//! `|n, 0>` fed into a beam-splitter generator `H = (a'b - ab')/(2i)`.
//!
//! Basis states `|n_a, n_b>` are ordered lexicographically with `n_a` major,
//! so matrix dumps are reproducible. The generator conserves total photon
//! number, so the default computation runs inside the fixed-total-photon
//! sector of dimension `n + 1`; the full truncated space is available for
//! cross-checking.

use serde::Serialize;

use crate::engine::{qfi_pure, qfi_support, QfiReport};
use crate::ensemble::{eigen_ensemble_is_optimal, OptimalityCheck};
use crate::family::DerivativeBundle;
use crate::hermitian::{cr, C64, CMatrix, CVector, HermitianMatrix, SpectralDecomposition};
use crate::{Error, Result};

/// Two bosonic modes, each truncated to occupation numbers `0..cutoff`.
#[derive(Debug, Clone, Copy)]
pub struct TwoModeFock {
    cutoff: usize,
}

impl TwoModeFock {
    pub fn new(cutoff: usize) -> Self {
        assert!(cutoff >= 1, "per-mode cutoff must be at least 1");
        Self { cutoff }
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.cutoff * self.cutoff
    }

    /// Lexicographic index with `n_a` major.
    pub fn index(&self, na: usize, nb: usize) -> usize {
        debug_assert!(na < self.cutoff && nb < self.cutoff);
        na * self.cutoff + nb
    }

    pub fn occupation(&self, index: usize) -> (usize, usize) {
        (index / self.cutoff, index % self.cutoff)
    }

    /// Annihilation operator for mode a: `a |n_a, n_b> = sqrt(n_a) |n_a - 1, n_b>`.
    pub fn annihilate_a(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim(), self.dim());
        for na in 1..self.cutoff {
            for nb in 0..self.cutoff {
                m[(self.index(na - 1, nb), self.index(na, nb))] = cr((na as f64).sqrt());
            }
        }
        m
    }

    pub fn annihilate_b(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim(), self.dim());
        for na in 0..self.cutoff {
            for nb in 1..self.cutoff {
                m[(self.index(na, nb - 1), self.index(na, nb))] = cr((nb as f64).sqrt());
            }
        }
        m
    }

    /// `H = (a' b - a b') / (2i)` on the truncated space.
    pub fn mzi_generator(&self) -> Result<HermitianMatrix> {
        let a = self.annihilate_a();
        let b = self.annihilate_b();
        let combo = a.adjoint() * &b - &a * b.adjoint();
        // 1/(2i) = -i/2
        HermitianMatrix::symmetrized(&(combo * C64::new(0.0, -0.5)))
    }

    pub fn fock_state(&self, na: usize, nb: usize) -> CVector {
        let mut v = CVector::zeros(self.dim());
        v[self.index(na, nb)] = cr(1.0);
        v
    }

    /// Norm of the amplitude that one application of the untruncated
    /// generator would place outside the cutoff.
    pub fn escape_amplitude(&self, psi: &CVector) -> f64 {
        let top = self.cutoff - 1;
        let mut escaped_sq = 0.0f64;
        for (idx, z) in psi.iter().enumerate() {
            let w = z.norm_sqr();
            if w == 0.0 {
                continue;
            }
            let (na, nb) = self.occupation(idx);
            // a'b sends |na, nb> to |na+1, nb-1>
            if na == top && nb >= 1 {
                let amp = 0.5 * (((na + 1) * nb) as f64).sqrt();
                escaped_sq += w * amp * amp;
            }
            // ab' sends |na, nb> to |na-1, nb+1>
            if nb == top && na >= 1 {
                let amp = 0.5 * ((na * (nb + 1)) as f64).sqrt();
                escaped_sq += w * amp * amp;
            }
        }
        escaped_sq.sqrt()
    }
}

/// The beam-splitter generator restricted to the total-photon sector of `n`
/// photons, in the basis `|k, n-k>` for `k = 0..n`.
pub fn mzi_sector_generator(photons: usize) -> Result<HermitianMatrix> {
    let d = photons + 1;
    let mut m = CMatrix::zeros(d, d);
    for k in 0..photons {
        // a'b: |k, n-k> -> sqrt((k+1)(n-k)) |k+1, n-k-1>, scaled by -i/2
        let amp = (((k + 1) * (photons - k)) as f64).sqrt();
        m[(k + 1, k)] = C64::new(0.0, -0.5 * amp);
        m[(k, k + 1)] = C64::new(0.0, 0.5 * amp);
    }
    HermitianMatrix::new(m)
}

/// Configuration of the Mach-Zehnder demo.
#[derive(Debug, Clone, Copy)]
pub struct MziDemo {
    pub photons: usize,
    /// Per-mode cutoff; must be at least `photons + 1`.
    pub truncation: usize,
    /// Run in the full truncated two-mode space instead of the photon sector.
    pub full_space: bool,
    pub threshold: f64,
}

/// Outcome of the demo: the support-pathway report, the pure-state value it
/// must agree with, and the optimality verdict for the (singleton)
/// eigen-ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct MziOutcome {
    pub photons: usize,
    pub truncation: usize,
    pub space: &'static str,
    pub dim: usize,
    pub qfi: QfiReport,
    pub f_pure: f64,
    pub optimality: OptimalityCheck,
    pub escape_amplitude: f64,
}

impl MziDemo {
    pub fn run(&self) -> Result<MziOutcome> {
        if self.truncation < self.photons + 1 {
            return Err(Error::TruncationTooSmall {
                escaped: f64::INFINITY,
            });
        }
        let (h, psi, space, dim, escape) = if self.full_space {
            let fock = TwoModeFock::new(self.truncation);
            let h = fock.mzi_generator()?;
            let psi = fock.fock_state(self.photons, 0);
            let escape = fock.escape_amplitude(&psi);
            if escape > 1e-12 {
                return Err(Error::TruncationTooSmall { escaped: escape });
            }
            (h, psi, "full", fock.dim(), escape)
        } else {
            let h = mzi_sector_generator(self.photons)?;
            let d = self.photons + 1;
            let mut psi = CVector::zeros(d);
            psi[self.photons] = cr(1.0); // |n, 0> is the k = n sector state
            (h, psi, "sector", d, 0.0)
        };

        let minus_i = C64::new(0.0, -1.0);
        let dpsi = (h.matrix() * &psi) * minus_i;
        let f_pure = qfi_pure(&psi, &dpsi)?;

        let decomp = SpectralDecomposition::from_parts(
            vec![1.0],
            CMatrix::from_columns(std::slice::from_ref(&psi)),
            self.threshold,
        )?;
        let optimality = eigen_ensemble_is_optimal(&decomp, &h, 1e-10)?;
        let bundle = DerivativeBundle::for_unitary(decomp, &h)?;
        let qfi = qfi_support(&bundle)?;

        Ok(MziOutcome {
            photons: self.photons,
            truncation: self.truncation,
            space,
            dim,
            qfi,
            f_pure,
            optimality,
            escape_amplitude: escape,
        })
    }
}
