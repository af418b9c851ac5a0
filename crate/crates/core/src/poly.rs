//! Taylor (Kronecker-polynomial) energy functions `E(x) = ½ Σₖ cₖᵀ x⊗ᵏ`.
//!
//! The degree-2 coefficient comes from the Riccati equation; higher degrees
//! solve `𝓛ₖ(M_clᵀ) cₖ = rhsₖ` where `M_cl` is the closed-loop matrix of the
//! quadratic energy (`A + BBᵀV₂` for past, `A − ηBBᵀW₂` for future) and
//!
//! ```text
//! rhsₖ = − Σₚ 𝓛_{k−p+1}(Fₚᵀ) c_{k−p+1}  +  s/4 · Σ_{i,j≥3, i+j=k+2} ij rowvec(VᵢBBᵀVⱼᵀ)
//! ```
//!
//! where `Vᵢ` is the `n^(i−1) × n` reshape of `cᵢ`, `s = −1` (past) or `s = η` (future), and `p` running over the drift
//! degrees present (2 and/or 3).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hjb::EnergyCandidate;
use crate::linalg::{solve_are_stabilizing, solve_kway_system, EnergyKind, KwayOptions};
use crate::system::SystemModel;
use crate::tensor::{checked_pow, contract_leading, kron_powers, kway_lyapunov_apply, KronCoeff};

#[derive(Clone, Debug, PartialEq)]
pub struct PolyEnergy {
    kind: EnergyKind,
    eta: f64,
    n: usize,
    /// `coeffs[i]` multiplies `x⊗(i+2)`.
    coeffs: Vec<KronCoeff>,
}

impl PolyEnergy {
    /// Wraps coefficients for degrees `2..=coeffs.len()+1`, symmetrizing them.
    pub fn new(kind: EnergyKind, eta: f64, coeffs: Vec<KronCoeff>) -> Result<Self> {
        let n = coeffs.first().map(KronCoeff::n).ok_or_else(|| {
            Error::InvalidInput("polynomial energy needs at least the degree-2 coefficient".into())
        })?;
        for (i, c) in coeffs.iter().enumerate() {
            if c.n() != n || c.degree() != i + 2 {
                return Err(Error::DimensionMismatch(format!(
                    "coefficient {i} has n = {}, degree {}; expected n = {n}, degree {}",
                    c.n(),
                    c.degree(),
                    i + 2
                )));
            }
        }
        let coeffs = coeffs.iter().map(KronCoeff::symmetrize).collect();
        Ok(Self {
            kind,
            eta,
            n,
            coeffs,
        })
    }

    pub fn kind(&self) -> EnergyKind {
        self.kind
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() + 1
    }

    pub fn coeff(&self, k: usize) -> Option<&KronCoeff> {
        k.checked_sub(2).and_then(|i| self.coeffs.get(i))
    }

    pub fn coeffs(&self) -> &[KronCoeff] {
        &self.coeffs
    }

    /// The same energy with all terms above degree `d` removed.
    pub fn truncated(&self, d: usize) -> Result<Self> {
        if d < 2 || d > self.degree() {
            return Err(Error::DegreeOutOfRange {
                degree: d,
                min: 2,
                max: self.degree(),
            });
        }
        Ok(Self {
            coeffs: self.coeffs[..d - 1].to_vec(),
            ..self.clone()
        })
    }

    /// `V₂` (or `W₂`) as an `n × n` matrix.
    pub fn quadratic_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n, self.n, self.coeffs[0].as_vector().as_slice())
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.n);
        let powers = kron_powers(x, self.degree());
        0.5 * self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c.as_vector().dot(&powers[i + 1]))
            .sum::<f64>()
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n);
        let powers = kron_powers(x, self.degree() - 1);
        let mut g = DVector::zeros(self.n);
        for (i, c) in self.coeffs.iter().enumerate() {
            let k = i + 2;
            // symmetric cₖ: ∇(cₖᵀx⊗ᵏ) = k · reshape(cₖ) x⊗(k−1)
            let part = contract_leading(c.as_vector().as_slice(), self.n, powers[k - 2].as_slice());
            g.axpy(0.5 * k as f64, &part, 1.0);
        }
        g
    }

    pub fn to_json(&self) -> PolyEnergyJson {
        PolyEnergyJson {
            kind: self.kind,
            eta: self.eta,
            degree: self.degree(),
            n: self.n,
            coeffs: self
                .coeffs
                .iter()
                .map(|c| (c.degree().to_string(), c.as_vector().as_slice().to_vec()))
                .collect(),
        }
    }

    pub fn from_json(doc: &PolyEnergyJson) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(doc.degree.saturating_sub(1));
        for k in 2..=doc.degree {
            let values = doc.coeffs.get(&k.to_string()).ok_or_else(|| {
                Error::InvalidInput(format!("missing coefficient for degree {k}"))
            })?;
            coeffs.push(KronCoeff::new(
                doc.n,
                k,
                DVector::from_column_slice(values),
            )?);
        }
        Self::new(doc.kind, doc.eta, coeffs)
    }
}

impl EnergyCandidate for PolyEnergy {
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

/// Coefficient export: `{kind, eta, degree, n, coeffs: {k: [values]}}`, column-major `vec`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyEnergyJson {
    pub kind: EnergyKind,
    pub eta: f64,
    pub degree: usize,
    pub n: usize,
    pub coeffs: BTreeMap<String, Vec<f64>>,
}

/// `VᵢBBᵀVⱼᵀ` flattened in Kronecker order `x⊗(i−1) ⊗ x⊗(j−1)`, with `Vᵢ`
/// the `n^(i−1) × n` reshape of `cᵢ`.
fn cross_term(ci: &KronCoeff, cj: &KronCoeff, bbt: &DMatrix<f64>) -> DVector<f64> {
    let n = ci.n();
    let ri = checked_pow(n, ci.degree() - 1);
    let rj = checked_pow(n, cj.degree() - 1);
    let vi = DMatrix::from_column_slice(ri, n, ci.as_vector().as_slice());
    let vj = DMatrix::from_column_slice(rj, n, cj.as_vector().as_slice());
    let p = &vi * bbt * vj.transpose();
    // row-major flattening of p: index a * rj + b
    DVector::from_column_slice(p.transpose().as_slice())
}

/// Taylor expansion of degree `d` of the past or future energy.
pub fn taylor(
    system: &SystemModel,
    kind: EnergyKind,
    d: usize,
    opts: &KwayOptions,
) -> Result<PolyEnergy> {
    if d < 2 {
        return Err(Error::DegreeOutOfRange {
            degree: d,
            min: 2,
            max: usize::MAX,
        });
    }
    let n = system.n();
    let eta = system.eta();
    let (a, b, c) = (system.a(), system.b(), system.c());
    let bbt = b * b.transpose();
    let (x2, closed_loop, cross_sign) = match kind {
        EnergyKind::Past => {
            let sol = solve_are_stabilizing(kind, a, b, c, eta)?;
            let cl = a + &bbt * &sol.x;
            (sol.x, cl, -1.0)
        }
        EnergyKind::Future => {
            let sol = solve_are_stabilizing(kind, a, b, c, eta)?;
            let cl = a - &bbt * &sol.x * eta;
            (sol.x, cl, eta)
        }
    };
    let mut coeffs =
        vec![KronCoeff::new(n, 2, DVector::from_column_slice(x2.as_slice()))?.symmetrize()];
    let drift: Vec<(usize, DMatrix<f64>)> = system
        .drift_tensors()
        .map(|(p, f)| (p, f.transpose()))
        .collect();

    for k in 3..=d {
        let mut rhs = DVector::<f64>::zeros(checked_pow(n, k));
        for (p, ft) in &drift {
            let j = k + 1 - p;
            if j >= 2 {
                rhs -= kway_lyapunov_apply(ft, j, coeffs[j - 2].as_vector().as_slice())?;
            }
        }
        for i in 3..k {
            let j = k + 2 - i;
            if j < 3 {
                continue;
            }
            let term = cross_term(&coeffs[i - 2], &coeffs[j - 2], &bbt);
            rhs.axpy(cross_sign * 0.25 * (i * j) as f64, &term, 1.0);
        }
        let ck = solve_kway_system(&closed_loop, k, &rhs, opts)?;
        coeffs.push(KronCoeff::new(n, k, ck)?.symmetrize());
    }
    PolyEnergy::new(kind, eta, coeffs)
}

pub fn taylor_past(system: &SystemModel, d: usize) -> Result<PolyEnergy> {
    taylor(system, EnergyKind::Past, d, &KwayOptions::default())
}

pub fn taylor_future(system: &SystemModel, d: usize) -> Result<PolyEnergy> {
    taylor(system, EnergyKind::Future, d, &KwayOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(eta: f64) -> SystemModel {
        let s = |v| DMatrix::from_element(1, 1, v);
        SystemModel::new(s(-2.0), vec![s(1.0)], s(2.0), s(2.0), eta).unwrap()
    }

    fn v2() -> f64 {
        (1.0 + 3f64.sqrt()) / 2.0
    }

    #[test]
    fn scalar_past_cubic_coefficient() {
        let e = taylor_past(&scalar(0.5), 3).unwrap();
        let v3_oracle = -2.0 * v2() / (3.0 * (-2.0 + 4.0 * v2()));
        assert!((e.coeff(2).unwrap().as_vector()[0] - v2()).abs() < 1e-12);
        assert!((e.coeff(3).unwrap().as_vector()[0] - v3_oracle).abs() < 1e-12);
    }

    #[test]
    fn scalar_future_cubic_coefficient() {
        let w2 = (5f64.sqrt() - 1.0) / 2.0;
        let e = taylor_future(&scalar(1.0), 3).unwrap();
        let w3_oracle = -2.0 * w2 / (3.0 * (-2.0 - 4.0 * w2));
        assert!((e.coeff(3).unwrap().as_vector()[0] - w3_oracle).abs() < 1e-12);
    }

    #[test]
    fn linear_systems_have_no_higher_terms() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
        let sys = SystemModel::new(
            a,
            vec![],
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            0.5,
        )
        .unwrap();
        for kind in [EnergyKind::Past, EnergyKind::Future] {
            let e = taylor(&sys, kind, 5, &KwayOptions::default()).unwrap();
            for k in 3..=5 {
                assert_eq!(e.coeff(k).unwrap().as_vector().amax(), 0.0);
            }
        }
    }

    #[test]
    fn evaluation_examples() {
        let e = taylor_past(&scalar(0.5), 2).unwrap();
        assert!((e.eval(&DVector::from_element(1, 1.0)) - 0.5 * v2()).abs() < 1e-14);
        assert!((e.grad(&DVector::from_element(1, 1.0))[0] - v2()).abs() < 1e-14);
        assert_eq!(e.eval(&DVector::zeros(1)), 0.0);

        let e3 = taylor_past(&scalar(0.5), 3).unwrap();
        let v3 = e3.coeff(3).unwrap().as_vector()[0];
        let x = DVector::from_element(1, 0.1);
        assert!((e3.eval(&x) - 0.5 * (v2() * 0.01 + v3 * 0.001)).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.4, -0.3, -1.5]);
        let mut f2 = DMatrix::zeros(2, 4);
        f2[(0, 3)] = 0.5;
        f2[(1, 1)] = -0.7;
        let sys = SystemModel::new(
            a,
            vec![f2],
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
            0.8,
        )
        .unwrap();
        let e = taylor_future(&sys, 4).unwrap();
        let x = DVector::from_vec(vec![0.37, -0.61]);
        let g = e.grad(&x);
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (e.eval(&xp) - e.eval(&xm)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-7 * g[j].abs().max(1e-3));
        }
    }

    #[test]
    fn json_round_trip() {
        let e = taylor_past(&scalar(0.5), 4).unwrap();
        let text = serde_json::to_string(&e.to_json()).unwrap();
        assert!(text.contains("\"kind\":\"past\""));
        let back = PolyEnergy::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn residual_vanishes_to_order_d_plus_one() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.4, -0.3, -1.5]);
        let mut f2 = DMatrix::zeros(2, 4);
        f2[(0, 3)] = 0.5;
        f2[(1, 1)] = -0.7;
        let mut f3 = DMatrix::zeros(2, 8);
        f3[(1, 7)] = -1.0;
        f3[(0, 1)] = 0.3;
        let sys = SystemModel::new(
            a,
            vec![f2, f3],
            DMatrix::from_row_slice(2, 1, &[0.2, 1.0]),
            DMatrix::identity(2, 2),
            0.6,
        )
        .unwrap();
        let dir = DVector::from_vec(vec![0.6, -0.8]);
        for kind in [EnergyKind::Past, EnergyKind::Future] {
            let e = taylor(&sys, kind, 5, &KwayOptions::default()).unwrap();
            for d in 2..=5 {
                let t = e.truncated(d).unwrap();
                let r = |s: f64| crate::hjb::residual(kind, &t, &sys, &(&dir * s)).abs();
                let ratio = r(1e-2) / r(5e-3);
                let expected = 2f64.powi(d as i32 + 1);
                assert!(ratio > 0.8 * expected, "{kind:?} d={d} ratio={ratio}");
            }
        }
    }
}
