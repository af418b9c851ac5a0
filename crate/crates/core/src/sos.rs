//! Sum-of-squares energies.
//!
//! [`SosEnergy`] is the Gram form `E(x) = z(x)ᵀLLᵀz(x)` over a graded monomial
//! basis; [`SquaredPolyEnergy`] is `E(x) = ‖Σₖ ṽₖᵀx⊗ᵏ‖²`, obtained by matching
//! the low-degree terms of a Taylor energy.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collocation::lm::{
    levenberg_marquardt, LeastSquaresProblem, LmOptions, OptimizerReport,
};
use crate::error::{Error, Result};
use crate::hjb::{quadratic_weight, residual_with, EnergyCandidate};
use crate::linalg::EnergyKind;
use crate::poly::PolyEnergy;
use crate::system::SystemModel;
use crate::tensor::{checked_pow, kron_power, kron_power_jacobian, KronCoeff, MonomialBasis};

/// Diagonal blocks of `L` that are kept: degrees `1..=retained`.
///
/// Dropping block `j` removes the columns of `L` that belong to it, so the
/// factor has `ν₁ = Σ_{j ≤ retained} degᵢ(n)` columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockStructure {
    r: usize,
    retained: usize,
}

impl BlockStructure {
    pub fn full(r: usize) -> Self {
        Self { r, retained: r }
    }

    pub fn new(r: usize, retained: usize) -> Result<Self> {
        if retained == 0 || retained > r {
            return Err(Error::ShapeMismatch(format!(
                "cannot retain {retained} of {r} diagonal blocks"
            )));
        }
        Ok(Self { r, retained })
    }

    /// Drops the highest-degree diagonal block (kept when it is the only one).
    pub fn drop_top(r: usize) -> Self {
        Self {
            r,
            retained: r.saturating_sub(1).max(1),
        }
    }

    pub fn basis_degree(&self) -> usize {
        self.r
    }

    pub fn retained(&self) -> usize {
        self.retained
    }

    pub fn is_full(&self) -> bool {
        self.retained == self.r
    }

    /// Degrees of the retained diagonal blocks.
    pub fn blocks(&self) -> Vec<usize> {
        (1..=self.retained).collect()
    }

    /// Number of columns of `L`.
    pub fn columns(&self, basis: &MonomialBasis) -> usize {
        basis.block_sizes()[..self.retained].iter().sum()
    }

    fn from_blocks(r: usize, blocks: &[usize]) -> Result<Self> {
        if blocks.iter().enumerate().any(|(i, &b)| b != i + 1) {
            return Err(Error::ShapeMismatch(format!(
                "retained blocks {blocks:?} are not a prefix 1, 2, ..."
            )));
        }
        Self::new(r, blocks.len())
    }
}

/// Row-major `(i, j)` positions of the free entries of a `ν × ν₁`
/// lower-trapezoidal factor.
pub(crate) fn trapezoid_positions(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .flat_map(|i| (0..=i.min(cols.saturating_sub(1))).map(move |j| (i, j)))
        .filter(|&(_, j)| j < cols)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SosEnergy {
    basis: MonomialBasis,
    l: DMatrix<f64>,
    structure: BlockStructure,
}

impl SosEnergy {
    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn structure(&self) -> BlockStructure {
        self.structure
    }

    /// SOS degree `2r`.
    pub fn degree(&self) -> usize {
        2 * self.basis.max_degree()
    }

    /// Gram matrix `Q = LLᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }

    /// Free entries of `L` in row-major trapezoid order.
    pub fn params(&self) -> DVector<f64> {
        let pos = trapezoid_positions(self.l.nrows(), self.l.ncols());
        DVector::from_iterator(pos.len(), pos.iter().map(|&(i, j)| self.l[(i, j)]))
    }

    pub fn with_params(&self, theta: &DVector<f64>) -> Result<Self> {
        let pos = trapezoid_positions(self.l.nrows(), self.l.ncols());
        if theta.len() != pos.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters, factor has {}",
                theta.len(),
                pos.len()
            )));
        }
        let mut l = DMatrix::zeros(self.l.nrows(), self.l.ncols());
        for (&(i, j), &v) in pos.iter().zip(theta.iter()) {
            l[(i, j)] = v;
        }
        Ok(Self { l, ..self.clone() })
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.l.tr_mul(&self.basis.values(x)).norm_squared()
    }

    /// `∇E = 2 Jzᵀ L Lᵀ z`.
    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let (z, jz) = self.basis.eval(x);
        let w = self.l.tr_mul(&z);
        jz.tr_mul(&(&self.l * w)) * 2.0
    }

    pub fn to_json(&self) -> SosEnergyJson {
        SosEnergyJson {
            n: self.basis.n(),
            r: self.basis.max_degree(),
            structure: self.structure.blocks(),
            l: self.params().as_slice().to_vec(),
            basis_order: "grlex".into(),
        }
    }

    pub fn from_json(doc: &SosEnergyJson) -> Result<Self> {
        if doc.basis_order != "grlex" {
            return Err(Error::InvalidInput(format!(
                "unsupported basis order {:?}",
                doc.basis_order
            )));
        }
        if doc.n == 0 || doc.r == 0 {
            return Err(Error::InvalidInput(
                "SOS energy needs n >= 1 and r >= 1".into(),
            ));
        }
        let basis = MonomialBasis::new(doc.n, doc.r);
        let structure = BlockStructure::from_blocks(doc.r, &doc.structure)?;
        let empty = sos_from_factor(
            basis.clone(),
            DMatrix::zeros(basis.len(), structure.columns(&basis)),
            structure,
        )?;
        empty.with_params(&DVector::from_column_slice(&doc.l))
    }
}

impl EnergyCandidate for SosEnergy {
    fn n(&self) -> usize {
        self.basis.n()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.eval(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.grad(x)
    }
}

/// SOS export: `L` holds the row-major lower-trapezoid entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SosEnergyJson {
    pub n: usize,
    pub r: usize,
    pub structure: Vec<usize>,
    #[serde(rename = "L")]
    pub l: Vec<f64>,
    pub basis_order: String,
}

/// Wraps a factor; `L` must be `ν × ν₁` with no entries above the diagonal.
pub fn sos_from_factor(
    basis: MonomialBasis,
    l: DMatrix<f64>,
    structure: BlockStructure,
) -> Result<SosEnergy> {
    if structure.basis_degree() != basis.max_degree() {
        return Err(Error::ShapeMismatch(format!(
            "structure is for basis degree {}, basis has {}",
            structure.basis_degree(),
            basis.max_degree()
        )));
    }
    let cols = structure.columns(&basis);
    if l.nrows() != basis.len() || l.ncols() != cols {
        return Err(Error::ShapeMismatch(format!(
            "factor is {}x{}, expected {}x{cols}",
            l.nrows(),
            l.ncols(),
            basis.len()
        )));
    }
    for j in 0..cols {
        for i in 0..j {
            if l[(i, j)] != 0.0 {
                return Err(Error::ShapeMismatch(format!(
                    "factor entry ({i}, {j}) lies above the diagonal"
                )));
            }
        }
    }
    Ok(SosEnergy {
        basis,
        l,
        structure,
    })
}

/// `E(x) = ‖Σₖ Tₖ x⊗ᵏ‖²` with `Tₖ = ṽₖᵀ ∈ ℝ^{n × nᵏ}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SquaredPolyEnergy {
    kind: EnergyKind,
    eta: f64,
    n: usize,
    factors: Vec<DMatrix<f64>>,
}

impl SquaredPolyEnergy {
    pub fn new(kind: EnergyKind, eta: f64, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = factors.first().map(|f| f.nrows()).ok_or_else(|| {
            Error::InvalidInput("squared energy needs at least one factor".into())
        })?;
        for (i, f) in factors.iter().enumerate() {
            if f.nrows() != n || f.ncols() != checked_pow(n, i + 1) {
                return Err(Error::ShapeMismatch(format!(
                    "factor {} is {}x{}, expected {n}x{}",
                    i + 1,
                    f.nrows(),
                    f.ncols(),
                    checked_pow(n, i + 1)
                )));
            }
        }
        Ok(Self {
            kind,
            eta,
            n,
            factors,
        })
    }

    pub fn kind(&self) -> EnergyKind {
        self.kind
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `ṽₖᵀ` for `k = 1..`.
    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    /// Degree of the expanded polynomial.
    pub fn degree(&self) -> usize {
        2 * self.factors.len()
    }

    /// `Σₖ Tₖx⊗ᵏ`.
    pub fn inner(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut s = DVector::zeros(self.n);
        let mut p = x.clone();
        for (k, t) in self.factors.iter().enumerate() {
            if k > 0 {
                p = crate::tensor::kron_vec(p.as_slice(), x.as_slice());
            }
            s.gemv(1.0, t, &p, 1.0);
        }
        s
    }

    fn inner_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut js = DMatrix::zeros(self.n, self.n);
        for (k, t) in self.factors.iter().enumerate() {
            js += t * kron_power_jacobian(x, k + 1);
        }
        js
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.n);
        self.inner(x).norm_squared()
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n);
        self.inner_jacobian(x).tr_mul(&self.inner(x)) * 2.0
    }
}

impl SquaredPolyEnergy {
    pub fn to_json(&self) -> SquaredPolyEnergyJson {
        SquaredPolyEnergyJson {
            kind: self.kind,
            eta: self.eta,
            n: self.n,
            factors: self
                .factors
                .iter()
                .map(|t| t.transpose().as_slice().to_vec())
                .collect(),
        }
    }

    pub fn from_json(doc: &SquaredPolyEnergyJson) -> Result<Self> {
        let factors = doc
            .factors
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let cols = checked_pow(doc.n, i + 1);
                if v.len() != doc.n * cols {
                    return Err(Error::ShapeMismatch(format!(
                        "factor {} has {} values",
                        i + 1,
                        v.len()
                    )));
                }
                Ok(DMatrix::from_row_slice(doc.n, cols, v))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(doc.kind, doc.eta, factors)
    }
}

/// Squared-energy export; `factors[k−1]` is `ṽₖᵀ` (`n × nᵏ`) in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquaredPolyEnergyJson {
    pub kind: EnergyKind,
    pub eta: f64,
    pub n: usize,
    pub factors: Vec<Vec<f64>>,
}

impl EnergyCandidate for SquaredPolyEnergy {
    fn n(&self) -> usize {
        self.n
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.eval(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.grad(x)
    }
}

/// `ṽᵢṽⱼᵀ = TᵢᵀTⱼ` flattened row-major, i.e. the coefficient of `x⊗ⁱ ⊗ x⊗ʲ`.
fn outer_rowmajor(ti: &DMatrix<f64>, tj: &DMatrix<f64>) -> DVector<f64> {
    let p = ti.tr_mul(tj);
    DVector::from_column_slice(p.transpose().as_slice())
}

/// Matches `‖ṽ₁ᵀx + … + ṽ_{d−1}ᵀx⊗^{d−1}‖²` to the degree `2..d` terms of `p`.
pub fn complete_sos(p: &PolyEnergy) -> Result<SquaredPolyEnergy> {
    let d = p.degree();
    let v2 = p.quadratic_matrix();
    let n = v2.nrows();
    let half = (&v2 + v2.transpose()) * 0.25;
    let chol = half.cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite("degree-2 coefficient of the Taylor energy".into())
    })?;
    let v1 = chol.l();
    let mut factors = vec![v1.transpose()];
    for k in 3..=d {
        let mut r = p.coeff(k).expect("degree checked").as_vector() * 0.5;
        for i in 2..k - 1 {
            r -= outer_rowmajor(&factors[i - 1], &factors[k - i - 1]);
        }
        let t = DMatrix::from_row_slice(n, checked_pow(n, k - 1), r.as_slice()) * 0.5;
        let next = v1
            .solve_lower_triangular(&t)
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factor is singular".into()))?;
        factors.push(next);
    }
    SquaredPolyEnergy::new(p.kind(), p.eta(), factors)
}

/// The polynomial `‖Σₖ ṽₖᵀx⊗ᵏ‖²` written as `½ Σₖ cₖᵀx⊗ᵏ`.
pub fn expand_squared(sq: &SquaredPolyEnergy) -> PolyEnergy {
    let f = sq.factors();
    let m = f.len();
    let coeffs = (2..=2 * m)
        .map(|k| {
            let mut c = DVector::zeros(checked_pow(sq.n, k));
            for i in 1..k {
                let j = k - i;
                if i <= m && j <= m {
                    c += outer_rowmajor(&f[i - 1], &f[j - 1]) * 2.0;
                }
            }
            KronCoeff::new(sq.n, k, c).expect("length is n^k")
        })
        .collect();
    PolyEnergy::new(sq.kind, sq.eta, coeffs).expect("coefficients are consistent")
}

/// Collocation problem for the single free factor `ṽ_d` of a squared energy.
struct TopFactorProblem<'a> {
    base: &'a SquaredPolyEnergy,
    system: &'a SystemModel,
    kind: EnergyKind,
    samples: &'a [DVector<f64>],
    d: usize,
    serial: bool,
}

impl TopFactorProblem<'_> {
    fn energy(&self, theta: &DVector<f64>) -> SquaredPolyEnergy {
        let n = self.system.n();
        let mut factors = self.base.factors.clone();
        // θ is ṽ_d (nᵈ × n) in column-major order, so Tₐ = ṽ_dᵀ
        let vd = DMatrix::from_column_slice(checked_pow(n, self.d), n, theta.as_slice());
        factors.push(vd.transpose());
        SquaredPolyEnergy {
            factors,
            ..self.base.clone()
        }
    }

    fn row(&self, e: &SquaredPolyEnergy, x: &DVector<f64>) -> (f64, Vec<f64>) {
        let s = e.inner(x);
        let js = e.inner_jacobian(x);
        let g = js.tr_mul(&s) * 2.0;
        let drift = self.system.drift(x);
        let r = residual_with(self.kind, self.system, x, &drift, &g);
        let bbt_g = self.system.b() * self.system.b().tr_mul(&g);
        let h = drift + bbt_g * quadratic_weight(self.kind, self.system.eta());
        let xd = kron_power(x, self.d);
        let a = kron_power_jacobian(x, self.d) * &h;
        let b = js * &h;
        let n = self.system.n();
        let rows = xd.len();
        let mut out = vec![0.0; rows * n];
        for c in 0..n {
            for i in 0..rows {
                out[c * rows + i] = 2.0 * (a[i] * s[c] + xd[i] * b[c]);
            }
        }
        (r, out)
    }
}

impl LeastSquaresProblem for TopFactorProblem<'_> {
    fn n_params(&self) -> usize {
        checked_pow(self.system.n(), self.d) * self.system.n()
    }
    fn n_residuals(&self) -> usize {
        self.samples.len()
    }
    fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        let e = self.energy(theta);
        let f = |x: &DVector<f64>| crate::hjb::residual(self.kind, &e, self.system, x);
        let r: Vec<f64> = if self.serial {
            self.samples.iter().map(f).collect()
        } else {
            self.samples.par_iter().map(f).collect()
        };
        DVector::from_vec(r)
    }
    fn jacobian(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let e = self.energy(theta);
        let rows: Vec<(f64, Vec<f64>)> = if self.serial {
            self.samples.iter().map(|x| self.row(&e, x)).collect()
        } else {
            self.samples.par_iter().map(|x| self.row(&e, x)).collect()
        };
        let p = self.n_params();
        let mut jac = DMatrix::zeros(rows.len(), p);
        let mut r = DVector::zeros(rows.len());
        for (k, (rk, row)) in rows.into_iter().enumerate() {
            r[k] = rk;
            jac.row_mut(k).copy_from_slice(&row);
        }
        (r, jac)
    }
}

/// Squared energy with `ṽ₁..ṽ_{d−1}` matched to `p` and `ṽ_d` fitted by
/// collocation, where `p` has degree `2d − 1`. The fit starts from `ṽ_d = 0`.
pub fn complete_sos_collocation(
    p: &PolyEnergy,
    system: &SystemModel,
    samples: &[DVector<f64>],
    opts: &LmOptions,
    serial: bool,
) -> Result<(SquaredPolyEnergy, OptimizerReport)> {
    let deg = p.degree();
    if deg < 3 || deg.is_multiple_of(2) {
        return Err(Error::DegreeOutOfRange {
            degree: deg,
            min: 3,
            max: usize::MAX,
        });
    }
    if samples.is_empty() {
        return Err(Error::InvalidInput(
            "collocation needs at least one sample".into(),
        ));
    }
    let d = deg.div_ceil(2);
    let base = complete_sos(&p.truncated(d)?)?;
    let problem = TopFactorProblem {
        base: &base,
        system,
        kind: p.kind(),
        samples,
        d,
        serial,
    };
    let (theta, report) = levenberg_marquardt(&problem, DVector::zeros(problem.n_params()), opts)?;
    Ok((problem.energy(&theta), report))
}
