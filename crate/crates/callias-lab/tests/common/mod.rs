//! Reference computations used to pin expected values in the integration
//! tests. Everything here is deliberately independent of the library's index
//! engines: plain eigenvalue counting, discrete phase winding, Brillouin-zone
//! plaquette sums and singular-value thresholds.

#![allow(dead_code)]

use faer::{c64, Mat, MatRef, Side};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn eigenvalues(a: MatRef<'_, c64>) -> Vec<f64> {
    let mut v = a.self_adjoint_eigenvalues(Side::Lower).unwrap();
    v.sort_by(f64::total_cmp);
    v
}

/// Net spectral flow between two invertible Hermitian endpoints of a
/// continuous finite-dimensional path: eigenvalues cannot escape, so the flow
/// is the difference of the positive counts.
pub fn endpoint_flow(a0: MatRef<'_, c64>, a1: MatRef<'_, c64>) -> i64 {
    let count = |a: MatRef<'_, c64>| -> i64 {
        let eigs = eigenvalues(a);
        let min_abs = eigs.iter().fold(f64::INFINITY, |m, &l| m.min(l.abs()));
        assert!(
            min_abs > 1e-9,
            "endpoint not safely invertible (min |eig| = {min_abs:.3e})"
        );
        eigs.iter().filter(|&&l| l > 0.0).count() as i64
    };
    count(a1) - count(a0)
}

/// Winding number of a closed discrete loop of nonzero complex numbers.
/// Exact once consecutive phase steps stay below pi.
pub fn phase_winding(zs: &[c64]) -> f64 {
    let mut total = 0.0;
    for j in 0..zs.len() {
        let a = zs[j];
        let b = zs[(j + 1) % zs.len()];
        assert!(a.norm() > 0.0 && b.norm() > 0.0);
        total += (b / a).arg();
    }
    total / (2.0 * std::f64::consts::PI)
}

/// Kernel dimensions (dim ker T, dim ker T*) from a full singular value
/// decomposition with a relative threshold.
pub fn kernel_dims(t: MatRef<'_, c64>, rel_tol: f64) -> (usize, usize) {
    let svals = t.singular_values().unwrap();
    let top = svals.first().copied().unwrap_or(0.0);
    let tol = rel_tol * top.max(1.0);
    let rank = svals.iter().filter(|&&s| s > tol).count();
    (t.ncols() - rank, t.nrows() - rank)
}

fn small_det(a: MatRef<'_, c64>) -> c64 {
    match a.nrows() {
        1 => a[(0, 0)],
        2 => a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)],
        3 => {
            a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
                - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
                + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)])
        }
        n => panic!("determinant helper limited to n <= 3, got {n}"),
    }
}

/// Plaquette-based Chern number of the lowest `n_occ` bands of a Bloch
/// Hamiltonian over the full (k1, k2) torus: gauge-invariant link phases
/// U = det(Psi(k)^* Psi(k')) multiplied around each plaquette. Converges to
/// the exact integer once the grid resolves the gap.
pub fn plaquette_chern(grid: usize, n_occ: usize, h: &dyn Fn(f64, f64) -> Mat<c64>) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    let frames: Vec<Vec<Mat<c64>>> = (0..grid)
        .map(|i| {
            (0..grid)
                .map(|j| {
                    let hk = h(tau * i as f64 / grid as f64, tau * j as f64 / grid as f64);
                    let evd = hk.self_adjoint_eigen(Side::Lower).unwrap();
                    let n = hk.nrows();
                    let mut idx: Vec<usize> = (0..n).collect();
                    idx.sort_by(|&p, &q| {
                        evd.S().column_vector()[p]
                            .re
                            .total_cmp(&evd.S().column_vector()[q].re)
                    });
                    Mat::from_fn(n, n_occ, |r, c| evd.U()[(r, idx[c])])
                })
                .collect()
        })
        .collect();
    let link = |a: &Mat<c64>, b: &Mat<c64>| -> c64 {
        let overlap = a.adjoint() * b;
        let d = small_det(overlap.as_ref());
        assert!(d.norm() > 1e-8, "band overlap degenerate: grid too coarse");
        d / d.norm()
    };
    let mut total = 0.0;
    for i in 0..grid {
        for j in 0..grid {
            let p00 = &frames[i][j];
            let p10 = &frames[(i + 1) % grid][j];
            let p11 = &frames[(i + 1) % grid][(j + 1) % grid];
            let p01 = &frames[i][(j + 1) % grid];
            let u = link(p00, p10) * link(p10, p11) * link(p11, p01) * link(p01, p00);
            total += u.arg();
        }
    }
    total / tau
}

/// Bloch Hamiltonian of the square-lattice hopping model at flux theta, on a
/// cell of q rows: diagonal 2 cos(theta m + k2), nearest-neighbor hops 1, and
/// the cell-closing hop carrying exp(i k1). Matches the real-space model
/// H = v1 + v1* + v2 + v2* built from Landau-gauge magnetic shifts.
pub fn hofstadter_bloch(theta: f64, q: usize, k1: f64, k2: f64) -> Mat<c64> {
    let mut h = Mat::<c64>::zeros(q, q);
    for m in 0..q {
        h[(m, m)] = c64::new(2.0 * (theta * m as f64 + k2).cos(), 0.0);
    }
    for m in 0..q {
        let n = (m + 1) % q;
        let amp = if m == q - 1 {
            c64::new(0.0, k1).exp()
        } else {
            c64::new(1.0, 0.0)
        };
        // Hop m -> n and its adjoint; entries add when q <= 2.
        h[(n, m)] += amp;
        h[(m, n)] += amp.conj();
    }
    h
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat<c64> {
    Mat::from_fn(rows, cols, |_, _| {
        c64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> Mat<c64> {
    let a = random_matrix(rng, n, n);
    let adj = a.adjoint().to_owned();
    Mat::from_fn(n, n, |i, j| (a[(i, j)] + adj[(i, j)]) * 0.5)
}

pub fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> Mat<c64> {
    let a = random_matrix(rng, n, n);
    let qr = a.qr();
    qr.compute_thin_Q()
}
