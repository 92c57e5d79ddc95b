//! Deterministic sampling of complex Gaussian matrices, orthonormal frames,
//! spectra and density matrices. Everything is driven by an explicit seed so
//! identical seeds reproduce identical values bit-for-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::hermitian::{cr, C64, CMatrix, CVector, DensityMatrix, HermitianMatrix};

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn complex_gaussian<R: Rng>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im)
}

pub fn gaussian_vector<R: Rng>(rng: &mut R, dim: usize) -> CVector {
    CVector::from_fn(dim, |_, _| complex_gaussian(rng))
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    // from_fn fills column-major; sampling order is deterministic either way
    CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

/// Orthonormalizes the columns of a standard-complex-Gaussian draw (modified
/// Gram-Schmidt with a second pass). Requires `cols <= rows`.
pub fn orthonormal_columns<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    assert!(cols <= rows, "cannot orthonormalize {cols} columns in dimension {rows}");
    let mut out = CMatrix::zeros(rows, cols);
    let mut have = 0usize;
    while have < cols {
        let mut v = gaussian_vector(rng, rows);
        for _ in 0..2 {
            for j in 0..have {
                let c = out.column(j).dotc(&v);
                let col = out.column(j).clone_owned();
                v -= col * c;
            }
        }
        let norm = v.norm();
        // a fresh Gaussian draw is almost surely independent; redraw otherwise
        if norm > 1e-8 {
            out.set_column(have, &v.unscale(norm));
            have += 1;
        }
    }
    out
}

pub fn random_unitary<R: Rng>(rng: &mut R, dim: usize) -> CMatrix {
    orthonormal_columns(rng, dim, dim)
}

pub fn random_hermitian<R: Rng>(rng: &mut R, dim: usize) -> HermitianMatrix {
    let a = gaussian_matrix(rng, dim, dim);
    HermitianMatrix::symmetrized(&a).expect("square by construction")
}

/// Probability vector of length `count`, descending, with every entry at
/// least `floor` and consecutive gaps at least `floor`. Bounded rejection
/// keeps the draw deterministic.
pub fn random_spectrum<R: Rng>(rng: &mut R, count: usize, floor: f64) -> Vec<f64> {
    assert!(count >= 1);
    assert!(floor * (2.0 * count as f64) < 1.0, "floor too large for {count} eigenvalues");
    loop {
        let mut p: Vec<f64> = (0..count).map(|_| rng.random::<f64>() + 1e-3).collect();
        let sum: f64 = p.iter().sum();
        for x in &mut p {
            *x /= sum;
        }
        p.sort_by(|a, b| b.total_cmp(a));
        let min_ok = *p.last().unwrap() >= floor;
        let gaps_ok = count < 2 || p.windows(2).all(|w| w[0] - w[1] >= floor);
        if min_ok && gaps_ok {
            return p;
        }
    }
}

/// Rank-`rank` density matrix in dimension `dim` built as `V diag(p) V*` with
/// a Haar-ish random `V`. Returns the matrix together with the exact
/// eigenpairs used to build it.
pub fn random_density<R: Rng>(
    rng: &mut R,
    dim: usize,
    rank: usize,
    floor: f64,
) -> (DensityMatrix, (Vec<f64>, CMatrix)) {
    assert!(rank >= 1 && rank <= dim);
    let p = random_spectrum(rng, rank, floor);
    let v = orthonormal_columns(rng, dim, rank);
    let mut mat = CMatrix::zeros(dim, dim);
    for (i, &pi) in p.iter().enumerate() {
        let col = v.column(i);
        mat += (col * col.adjoint()).scale(pi);
    }
    let rho = DensityMatrix::new(mat).expect("valid by construction");
    (rho, (p, v))
}

/// Complex Gaussian Hermitian scaled so the entries are O(1).
pub fn random_traceless_hermitian<R: Rng>(rng: &mut R, dim: usize) -> HermitianMatrix {
    let h = random_hermitian(rng, dim);
    let shift = h.trace_re() / dim as f64;
    let mat = h.matrix() - CMatrix::identity(dim, dim).scale(shift).map(|x| cr(x.re));
    HermitianMatrix::symmetrized(&mat).expect("square by construction")
}
