//! Control-affine polynomial systems `ẋ = Ax + F₂x⊗² + F₃x⊗³ + Bu`, `y = Cx`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{checked_pow, kron_vec, KronCoeff};

#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    f2: Option<DMatrix<f64>>,
    f3: Option<DMatrix<f64>>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    eta: f64,
}

fn symmetrize_rows(f: &DMatrix<f64>, n: usize, k: usize) -> DMatrix<f64> {
    let mut out = f.clone();
    for i in 0..f.nrows() {
        let row = DVector::from_iterator(f.ncols(), f.row(i).iter().copied());
        let sym = KronCoeff::new(n, k, row)
            .expect("row length checked")
            .symmetrize();
        out.row_mut(i).copy_from(&sym.as_vector().transpose());
    }
    out
}

impl SystemModel {
    /// Builds a system from its drift tensors; each tensor's degree is read off
    /// its column count (`n²` or `n³`). Tensors are stored row-symmetrized.
    pub fn new(
        a: DMatrix<f64>,
        drift_tensors: Vec<DMatrix<f64>>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        eta: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {:?}",
                a.shape()
            )));
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "C has {} columns, expected {n}",
                c.ncols()
            )));
        }
        if !eta.is_finite() || eta > 1.0 {
            return Err(Error::InvalidInput(format!(
                "eta must be finite and <= 1, got {eta}"
            )));
        }
        let mut f2 = None;
        let mut f3 = None;
        for f in drift_tensors {
            if f.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "drift tensor has {} rows",
                    f.nrows()
                )));
            }
            let mut degree = 0;
            for k in 2..=8 {
                if f.ncols() == checked_pow(n, k) {
                    degree = k;
                    break;
                }
            }
            // n = 1 makes every power equal; treat such tensors by position
            if n == 1 {
                degree = if f2.is_none() { 2 } else { 3 };
            }
            match degree {
                2 if f2.is_none() => f2 = Some(symmetrize_rows(&f, n, 2)),
                3 if f3.is_none() => f3 = Some(symmetrize_rows(&f, n, 3)),
                2 | 3 => {
                    return Err(Error::InvalidInput(format!(
                        "duplicate degree-{degree} drift tensor"
                    )))
                }
                0 => {
                    return Err(Error::DimensionMismatch(format!(
                        "drift tensor with {} columns is not a Kronecker power of n = {n}",
                        f.ncols()
                    )))
                }
                d => return Err(Error::UnsupportedDrift(d)),
            }
        }
        Ok(Self {
            a,
            f2,
            f3,
            b,
            c,
            eta,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        if !eta.is_finite() || eta > 1.0 {
            return Err(Error::InvalidInput(format!(
                "eta must be finite and <= 1, got {eta}"
            )));
        }
        Ok(Self {
            eta,
            ..self.clone()
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn f2(&self) -> Option<&DMatrix<f64>> {
        self.f2.as_ref()
    }

    pub fn f3(&self) -> Option<&DMatrix<f64>> {
        self.f3.as_ref()
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// `(degree, Fₚ)` for each drift tensor present.
    pub fn drift_tensors(&self) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        self.f2
            .iter()
            .map(|f| (2, f))
            .chain(self.f3.iter().map(|f| (3, f)))
    }

    /// Highest polynomial degree in the drift.
    pub fn drift_degree(&self) -> usize {
        if self.f3.is_some() {
            3
        } else if self.f2.is_some() {
            2
        } else {
            1
        }
    }

    /// `f(x) = Ax + F₂x⊗² + F₃x⊗³`.
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.a * x;
        if self.f2.is_none() && self.f3.is_none() {
            return out;
        }
        let x2 = kron_vec(x.as_slice(), x.as_slice());
        if let Some(f2) = &self.f2 {
            out.gemv(1.0, f2, &x2, 1.0);
        }
        if let Some(f3) = &self.f3 {
            let x3 = kron_vec(x2.as_slice(), x.as_slice());
            out.gemv(1.0, f3, &x3, 1.0);
        }
        out
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }

    pub fn to_json(&self) -> SystemJson {
        let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        let triplets = |m: &DMatrix<f64>| {
            let mut out = Vec::new();
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    let v = m[(i, j)];
                    if v != 0.0 {
                        out.push(Triplet(i, j, v));
                    }
                }
            }
            out
        };
        SystemJson {
            n: self.n(),
            m: self.m(),
            p: self.p(),
            eta: self.eta,
            a: row_major(&self.a),
            b: row_major(&self.b),
            c: row_major(&self.c),
            f2: self.f2.as_ref().map(triplets),
            f3: self.f3.as_ref().map(triplets),
        }
    }

    pub fn from_json(doc: &SystemJson) -> Result<Self> {
        let (n, m, p) = (doc.n, doc.m, doc.p);
        let dense = |name: &str, rows: usize, cols: usize, values: &[f64]| {
            if values.len() != rows * cols {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has {} values, expected {rows}x{cols}",
                    values.len()
                )));
            }
            Ok(DMatrix::from_row_slice(rows, cols, values))
        };
        let sparse = |name: &str, k: usize, entries: &[Triplet]| {
            let cols = checked_pow(n, k);
            let mut out = DMatrix::zeros(n, cols);
            for &Triplet(i, j, v) in entries {
                if i >= n || j >= cols {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} entry ({i}, {j}) outside {n}x{cols}"
                    )));
                }
                out[(i, j)] += v;
            }
            Ok(out)
        };
        let mut tensors = Vec::new();
        if let Some(f2) = &doc.f2 {
            tensors.push(sparse("F2", 2, f2)?);
        }
        if let Some(f3) = &doc.f3 {
            tensors.push(sparse("F3", 3, f3)?);
        }
        Self::new(
            dense("A", n, n, &doc.a)?,
            tensors,
            dense("B", n, m, &doc.b)?,
            dense("C", p, n, &doc.c)?,
            doc.eta,
        )
    }
}

/// `[row, column, value]` entry of a drift tensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triplet(pub usize, pub usize, pub f64);

/// On-disk system description. Dense matrices are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemJson {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub eta: f64,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    #[serde(rename = "F2", default, skip_serializing_if = "Option::is_none")]
    pub f2: Option<Vec<Triplet>>,
    #[serde(rename = "F3", default, skip_serializing_if = "Option::is_none")]
    pub f3: Option<Vec<Triplet>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_tensors_are_symmetrized() {
        let mut f2 = DMatrix::zeros(2, 4);
        f2[(0, 1)] = 2.0; // x1 x2 in row 0
        let sys = SystemModel::new(
            DMatrix::identity(2, 2),
            vec![f2],
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            1.0,
        )
        .unwrap();
        let f2 = sys.f2().unwrap();
        assert_eq!(f2[(0, 1)], 1.0);
        assert_eq!(f2[(0, 2)], 1.0);
        let x = DVector::from_vec(vec![2.0, 3.0]);
        assert_eq!(sys.drift(&x).as_slice(), &[2.0 + 12.0, 3.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let err = SystemModel::new(
            DMatrix::identity(2, 2),
            vec![DMatrix::zeros(2, 5)],
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 2),
            1.0,
        );
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
        let err = SystemModel::new(
            DMatrix::identity(2, 2),
            vec![DMatrix::zeros(2, 16)],
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 2),
            1.0,
        );
        assert!(matches!(err, Err(Error::UnsupportedDrift(4))));
    }

    #[test]
    fn json_round_trip() {
        let mut f3 = DMatrix::zeros(2, 8);
        f3[(1, 1)] = -1.0;
        let sys = SystemModel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.5]),
            vec![f3],
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            0.5,
        )
        .unwrap();
        let text = serde_json::to_string(&sys.to_json()).unwrap();
        let back = SystemModel::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, sys);
    }
}
