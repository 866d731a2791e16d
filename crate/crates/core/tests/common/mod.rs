//! Oracles and generators shared by the integration tests. Nothing here calls
//! into the crate's own factorizations.
#![allow(dead_code)]

use metreg::spaces::LinearOperator;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// A `rows x cols` matrix of rank at most `rank`.
pub fn low_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rank: usize) -> DMatrix<f64> {
    gaussian(rng, rows, rank) * gaussian(rng, rank, cols)
}

pub fn op(m: DMatrix<f64>) -> LinearOperator {
    LinearOperator::new(m).unwrap()
}

/// Singular values, largest first, by one-sided Jacobi rotations on the
/// columns of `m` (or of `mᵀ` when `m` is wide).
pub fn jacobi_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut a = if m.nrows() >= m.ncols() { m.clone() } else { m.transpose() };
    let k = a.ncols();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha: f64 = a.column(p).norm_squared();
                let beta: f64 = a.column(q).norm_squared();
                let gamma: f64 = a.column(p).dot(&a.column(q));
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..a.nrows() {
                    let ap = a[(i, p)];
                    let aq = a[(i, q)];
                    a[(i, p)] = c * ap - s * aq;
                    a[(i, q)] = s * ap + c * aq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = (0..k).map(|j| a.column(j).norm()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Least-norm solution of `A x = r` from the KKT system `[[I, Aᵀ], [A, 0]]`.
pub fn kkt_least_norm(a: &DMatrix<f64>, r: &[f64]) -> Vec<f64> {
    let (m, n) = a.shape();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).fill_with_identity();
    k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(a);
    let mut rhs = nalgebra::DVector::zeros(n + m);
    for i in 0..m {
        rhs[n + i] = r[i];
    }
    let sol = k.lu().solve(&rhs).expect("KKT system is singular");
    sol.rows(0, n).iter().copied().collect()
}

pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}
