//! Small dense linear-algebra helpers and serde adapters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const MAX_CONDITION: f64 = 1e12;

/// Cholesky factor of an SPD matrix together with a cheap condition estimate
/// (squared ratio of the extreme diagonal entries of the factor, a lower bound).
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    pub condition_estimate: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(m.clone()).ok_or_else(|| Error::Numerical {
            message: "matrix is not positive definite".into(),
            condition_estimate: f64::INFINITY,
        })?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
            (lo.min(d.abs()), hi.max(d.abs()))
        });
        let condition_estimate = (hi / lo).powi(2);
        if !(condition_estimate <= MAX_CONDITION) {
            return Err(Error::Numerical {
                message: "matrix is ill-conditioned".into(),
                condition_estimate,
            });
        }
        Ok(Self {
            chol,
            condition_estimate,
        })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }
}

/// Minimum-norm correction `x = x0 + A⁺ (b − A x0)`. Returns `None` when the system is
/// inconsistent beyond `tol` (relative to the right-hand side).
pub fn min_change_solve(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x0: &DVector<f64>,
    tol: f64,
) -> Option<DVector<f64>> {
    let r = b - a * x0;
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12;
    let dx = svd.solve(&r, eps).ok()?;
    let x = x0 + dx;
    let resid = (a * &x - b).amax();
    let scale = b.amax().max(1.0);
    (resid <= tol * scale).then_some(x)
}

pub mod row_major {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = (0..m.nrows())
            .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
            .map(|(r, c)| m[(r, c)])
            .collect();
        Repr {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = Repr::deserialize(d)?;
        if r.data.len() != r.rows * r.cols {
            return Err(serde::de::Error::custom(format!(
                "matrix data has {} entries, expected {}x{}",
                r.data.len(),
                r.rows,
                r.cols
            )));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}

pub mod plain_vec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indefinite_and_ill_conditioned() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(SpdFactor::new(&m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        match SpdFactor::new(&m) {
            Err(Error::Numerical {
                condition_estimate, ..
            }) => assert!(condition_estimate > 1e12),
            _ => panic!("expected numerical error"),
        }
    }

    #[test]
    fn min_change_keeps_nullspace_component() {
        // x + y = 2, starting from (3, 0): closest solution is (2.5, -0.5).
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        let x = min_change_solve(&a, &b, &DVector::from_vec(vec![3.0, 0.0]), 1e-12).unwrap();
        assert!((x[0] - 2.5).abs() < 1e-14 && (x[1] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn row_major_round_trip() {
        #[derive(serde::Serialize, serde::Deserialize)]
        struct W {
            #[serde(with = "row_major")]
            m: DMatrix<f64>,
        }
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = serde_json::to_string(&W { m: m.clone() }).unwrap();
        assert!(s.contains("[1.0,2.0,3.0,4.0,5.0,6.0]"));
        let back: W = serde_json::from_str(&s).unwrap();
        assert_eq!(back.m, m);
    }
}
