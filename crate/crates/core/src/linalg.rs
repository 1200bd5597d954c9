//! Small dense symmetric positive-definite algebra: Cholesky on
//! diagonally equilibrated matrices, with the pivot ratio as a cheap
//! reciprocal condition estimate.

use nalgebra::DMatrix;

/// Smallest accepted reciprocal condition estimate.
pub const RCOND_THRESHOLD: f64 = 1e-12;

/// In-place Cholesky of the row-major `n x n` matrix `a`; the lower
/// triangle is overwritten by `L`. Returns the (min, max) pivot `L_jj²`, or
/// `None` when a pivot is not strictly positive.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> Option<(f64, f64)> {
    debug_assert_eq!(a.len(), n * n);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= a[j * n + p] * a[j * n + p];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        lo = lo.min(d);
        hi = hi.max(d);
        let ljj = d.sqrt();
        a[j * n + j] = ljj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= a[i * n + p] * a[j * n + p];
            }
            a[i * n + j] = s / ljj;
        }
    }
    Some((lo, hi))
}

/// Solve `L x = b` in place for the lower-triangular factor stored in `l`.
pub fn forward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * n + p] * b[p];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solve `Lᵀ x = b` in place.
pub fn back_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for p in i + 1..n {
            s -= l[p * n + i] * b[p];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Cholesky factor of `D^{-1/2} P A Pᵀ D^{-1/2}` where `P` reorders the
/// rows as in `order` and `D = diag(A)`.
#[derive(Clone, Debug)]
pub struct Factorization {
    n: usize,
    l: Vec<f64>,
    /// `1/√A_ii` for each position in the reordered matrix.
    scale: Vec<f64>,
    /// Position of each original index in the reordered matrix.
    position: Vec<usize>,
    pub min_pivot: f64,
    pub max_pivot: f64,
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rcond(&self) -> f64 {
        self.min_pivot / self.max_pivot
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z = vec![0.0; n];
        for (i, &p) in self.position.iter().enumerate() {
            z[p] = b[i] * self.scale[p];
        }
        forward_substitute(&self.l, n, &mut z);
        back_substitute(&self.l, n, &mut z);
        let mut x = vec![0.0; n];
        for (i, &p) in self.position.iter().enumerate() {
            x[i] = z[p] * self.scale[p];
        }
        x
    }

    /// Diagonal entry `[A⁻¹]_ii`.
    pub fn inverse_diagonal(&self, i: usize) -> f64 {
        let p = self.position[i];
        let mut z = vec![0.0; self.n];
        z[p] = 1.0;
        forward_substitute(&self.l, self.n, &mut z[..]);
        let s = self.scale[p];
        z.iter().map(|v| v * v).sum::<f64>() * s * s
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut inv = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            inv.column_mut(j).copy_from_slice(&col);
        }
        inv
    }
}

/// Equilibrated Cholesky of the symmetric matrix `a`, factoring its rows and
/// columns in the sequence given by `order` (a permutation of `0..n`).
///
/// Returns `None` for a non-positive or non-finite diagonal or pivot.
pub fn equilibrated_cholesky(a: &DMatrix<f64>, order: &[usize]) -> Option<Factorization> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(order.len(), n);
    let mut position = vec![usize::MAX; n];
    for (p, &i) in order.iter().enumerate() {
        position[i] = p;
    }
    assert!(position.iter().all(|&p| p < n), "order must be a permutation");
    let mut scale = vec![0.0; n];
    for (p, &i) in order.iter().enumerate() {
        let d = a[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        scale[p] = 1.0 / d.sqrt();
    }
    let mut l = vec![0.0; n * n];
    for (p, &i) in order.iter().enumerate() {
        for (q, &j) in order.iter().enumerate() {
            l[p * n + q] = a[(i, j)] * scale[p] * scale[q];
        }
    }
    let (min_pivot, max_pivot) = if n == 0 { (1.0, 1.0) } else { cholesky_in_place(&mut l, n)? };
    Some(Factorization { n, l, scale, position, min_pivot, max_pivot })
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    /// Random SPD matrix whose diagonal spans `decades` orders of
    /// magnitude per index step.
    fn random_spd(n: usize, seed: u64, decades: i32) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n + 2, |_, _| rng.gen_range(-1.0..1.0));
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| 10f64.powi(i as i32 * decades - 6)));
        &d * (&b * b.transpose()) * &d
    }

    #[test]
    fn matches_eigen_inverse() {
        for seed in 0..20 {
            // the eigen oracle is not scale invariant, so keep scales mild
            let a = random_spd(6, seed, 0);
            let order: Vec<usize> = (0..6).rev().collect();
            let f = equilibrated_cholesky(&a, &order).unwrap();
            let eig = a.clone().symmetric_eigen();
            let inv = &eig.eigenvectors
                * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v))
                * eig.eigenvectors.transpose();
            let s = DMatrix::from_diagonal(&a.diagonal().map(|v| v.sqrt()));
            let lhs = &s * f.inverse() * &s;
            let rhs = &s * inv * &s;
            assert_relative_eq!(lhs, rhs, max_relative = 1e-8, epsilon = 1e-10);
            for i in 0..6 {
                assert_relative_eq!(f.inverse_diagonal(i), f.inverse()[(i, i)], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_inverse() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 0.25, 9.0]));
        let f = equilibrated_cholesky(&a, &[0, 1, 2]).unwrap();
        assert_relative_eq!(f.inverse_diagonal(0), 0.25);
        assert_relative_eq!(f.inverse_diagonal(1), 4.0);
        assert_eq!(f.rcond(), 1.0);
    }

    #[test]
    fn singular_and_indefinite_fail() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(equilibrated_cholesky(&a, &[0, 1]).is_none_or(|f| f.rcond() < RCOND_THRESHOLD));
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(equilibrated_cholesky(&b, &[0, 1]).is_none());
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!(equilibrated_cholesky(&c, &[0, 1]).is_none());
    }

    proptest! {
        #[test]
        fn solve_round_trip(seed in 0u64..1000, n in 1usize..8) {
            let a = random_spd(n, seed, 3);
            let order: Vec<usize> = (0..n).collect();
            let f = equilibrated_cholesky(&a, &order).unwrap();
            let b: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0).sin()).collect();
            let x = f.solve(&b);
            let ax = &a * nalgebra::DVector::from_vec(x.clone());
            // backward error of Cholesky on the equilibrated matrix
            for i in 0..n {
                let bound: f64 = (0..n).map(|j| (a[(i, i)] * a[(j, j)]).sqrt() * x[j].abs()).sum::<f64>() + b[i].abs();
                prop_assert!((ax[i] - b[i]).abs() <= 1e-12 * bound, "row {i}: {} vs {bound}", ax[i] - b[i]);
            }
        }
    }
}
