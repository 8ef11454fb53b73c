//! Lemke's complementary pivoting for small dense LCPs
//! `w = M z + q, w ≥ 0, z ≥ 0, wᵀz = 0`, with a lexicographic ratio test so degenerate
//! (redundant-contact) problems cannot cycle.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LemkeStatus {
    Solved,
    /// The entering column had no positive entry.
    RayTermination,
    MaxPivots,
}

/// Returns `z` and the termination status.
pub(crate) fn lemke(
    m: &DMatrix<f64>,
    q: &DVector<f64>,
    max_pivots: usize,
) -> (DVector<f64>, LemkeStatus) {
    let n = q.len();
    if q.iter().all(|x| *x >= 0.0) {
        return (DVector::zeros(n), LemkeStatus::Solved);
    }
    // Columns: w (0..n), z (n..2n), z0 (2n), rhs (2n+1). Tableau holds B⁻¹[I, −M, −1, q].
    let z0 = 2 * n;
    let rhs = 2 * n + 1;
    let mut t = DMatrix::zeros(n, 2 * n + 2);
    for i in 0..n {
        t[(i, i)] = 1.0;
        for j in 0..n {
            t[(i, n + j)] = -m[(i, j)];
        }
        t[(i, z0)] = -1.0;
        t[(i, rhs)] = q[i];
    }
    let mut basis: Vec<usize> = (0..n).collect();

    let pivot = |t: &mut DMatrix<f64>, r: usize, c: usize| {
        let p = t[(r, c)];
        let row = t.row(r) / p;
        t.set_row(r, &row);
        for i in 0..t.nrows() {
            if i != r {
                let f = t[(i, c)];
                if f != 0.0 {
                    let updated = t.row(i) - &row * f;
                    t.set_row(i, &updated);
                }
            }
        }
    };

    // z0 enters at the most negative q.
    let r0 = (0..n)
        .min_by(|&a, &b| q[a].partial_cmp(&q[b]).unwrap())
        .unwrap();
    pivot(&mut t, r0, z0);
    let mut leaving = basis[r0];
    basis[r0] = z0;

    for _ in 0..max_pivots {
        let entering = if leaving < n {
            leaving + n
        } else {
            leaving - n
        };
        let col_scale = t.column(entering).amax().max(f64::MIN_POSITIVE);
        let candidates: Vec<usize> = (0..n)
            .filter(|&i| t[(i, entering)] > 1e-11 * col_scale)
            .collect();
        if candidates.is_empty() {
            return (extract(&t, &basis, n), LemkeStatus::RayTermination);
        }
        // Lexicographic minimum ratio over (rhs, B⁻¹ columns).
        let mut ties = candidates;
        for key in std::iter::once(rhs).chain(0..n) {
            let ratio = |i: usize| t[(i, key)] / t[(i, entering)];
            let best = ties.iter().map(|&i| ratio(i)).fold(f64::INFINITY, f64::min);
            let tol = 1e-12 * best.abs().max(1e-300);
            ties.retain(|&i| ratio(i) <= best + tol);
            if ties.len() == 1 {
                break;
            }
            if let Some(&i) = ties.iter().find(|&&i| basis[i] == z0) {
                ties = vec![i];
                break;
            }
        }
        let r = ties[0];
        pivot(&mut t, r, entering);
        leaving = basis[r];
        basis[r] = entering;
        if leaving == z0 {
            return (extract(&t, &basis, n), LemkeStatus::Solved);
        }
    }
    (extract(&t, &basis, n), LemkeStatus::MaxPivots)
}

fn extract(t: &DMatrix<f64>, basis: &[usize], n: usize) -> DVector<f64> {
    let rhs = 2 * n + 1;
    let mut z = DVector::zeros(n);
    for (i, &b) in basis.iter().enumerate() {
        if (n..2 * n).contains(&b) {
            z[b - n] = t[(i, rhs)].max(0.0);
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_lcp() {
        // M = [[2,1],[1,2]], q = [-5,-6]: interior solution z = (4/3, 7/3).
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let q = DVector::from_vec(vec![-5.0, -6.0]);
        let (z, status) = lemke(&m, &q, 100);
        assert_eq!(status, LemkeStatus::Solved);
        assert!((z[0] - 4.0 / 3.0).abs() < 1e-12 && (z[1] - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn handles_redundant_rows() {
        // Two identical constraints sharing one load.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let q = DVector::from_vec(vec![-1.0, -1.0]);
        let (z, status) = lemke(&m, &q, 100);
        assert_eq!(status, LemkeStatus::Solved);
        let w = &m * &z + &q;
        assert!(w.amax() < 1e-12 && (z[0] + z[1] - 1.0).abs() < 1e-12);
    }
}
