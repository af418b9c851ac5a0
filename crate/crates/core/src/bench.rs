//! Benchmark systems and the closed-form scalar energy.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hjb::EnergyCandidate;
use crate::system::SystemModel;

/// `ẋ = −2x + x² + 2u`, `y = 2x`, `η = 0.5`.
pub fn make_scalar() -> SystemModel {
    let s = |v| DMatrix::from_element(1, 1, v);
    SystemModel::new(s(-2.0), vec![s(1.0)], s(2.0), s(2.0), 0.5)
        .expect("scalar system is well formed")
}

/// Ring of `g` coupled van der Pol oscillators,
/// `ÿᵢ + (yᵢ² − 1)ẏᵢ + yᵢ = y_{i−1} − 2yᵢ + y_{i+1} + bᵢuᵢ`,
/// with state `(y₁, ẏ₁, …, y_g, ẏ_g)`. Oscillators with `bᵢ = 0` get no input
/// column; `C` selects the positions; `η = 1`.
pub fn make_vdp_ring(g: usize, b: &[f64]) -> Result<SystemModel> {
    if g < 2 || b.len() != g {
        return Err(Error::InvalidInput(format!(
            "ring needs g >= 2 and {g} input gains, got {}",
            b.len()
        )));
    }
    let n = 2 * g;
    let mut a = DMatrix::zeros(n, n);
    let mut f3 = DMatrix::zeros(n, n * n * n);
    for i in 0..g {
        let (y, v) = (2 * i, 2 * i + 1);
        a[(y, v)] = 1.0;
        a[(v, y)] -= 3.0;
        a[(v, v)] = 1.0;
        a[(v, 2 * ((i + g - 1) % g))] += 1.0;
        a[(v, 2 * ((i + 1) % g))] += 1.0;
        f3[(v, (y * n + y) * n + v)] = -1.0;
    }
    let inputs: Vec<usize> = (0..g).filter(|&i| b[i] != 0.0).collect();
    let mut bm = DMatrix::zeros(n, inputs.len());
    for (col, &i) in inputs.iter().enumerate() {
        bm[(2 * i + 1, col)] = b[i];
    }
    let mut c = DMatrix::zeros(g, n);
    for i in 0..g {
        c[(i, 2 * i)] = 1.0;
    }
    SystemModel::new(a, vec![f3], bm, c, 1.0)
}

/// Periodic Burgers equation `z_t = −z z_x + ε z_xx + Σ χᵢ uᵢ` on `[0, 1]`,
/// discretized with `n_elem` linear finite elements. Inputs and outputs act
/// on `m` and `p` equal subintervals; `η = 1`.
pub fn make_burgers(n_elem: usize, eps: f64, m: usize, p: usize) -> Result<SystemModel> {
    if n_elem < 3 || m == 0 || p == 0 {
        return Err(Error::Assembly(format!(
            "need n_elem >= 3 and m, p >= 1 (got {n_elem}, {m}, {p})"
        )));
    }
    if !n_elem.is_multiple_of(m) || !n_elem.is_multiple_of(p) {
        return Err(Error::Assembly(format!(
            "{n_elem} elements cannot be split evenly into {m} inputs and {p} outputs"
        )));
    }
    let n = n_elem;
    let h = 1.0 / n as f64;
    let mut mass = DMatrix::zeros(n, n);
    let mut stiff = DMatrix::zeros(n, n);
    let mut conv = DMatrix::zeros(n, n * n);
    let mut loads = DMatrix::zeros(n, m);
    let mut outputs = DMatrix::zeros(p, n);
    // ∫ φₐ φ_b dξ on the reference element
    let pair = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
    for e in 0..n {
        let nodes = [e, (e + 1) % n];
        for (la, &ga) in nodes.iter().enumerate() {
            for (lb, &gb) in nodes.iter().enumerate() {
                mass[(ga, gb)] += h * pair[la][lb];
                stiff[(ga, gb)] += if la == lb { 1.0 / h } else { -1.0 / h };
                // ∫ ψₐ ψ_b ψ_c' dx with ψ_c' = ∓1/h on the element
                for (lc, &gc) in nodes.iter().enumerate() {
                    let sign = if lc == 0 { -1.0 } else { 1.0 };
                    conv[(ga, gb * n + gc)] += sign * pair[la][lb];
                }
            }
        }
        for &g in &nodes {
            loads[(g, e / (n / m))] += 0.5 * h;
            outputs[(e / (n / p), g)] += 0.5 * h;
        }
    }
    let minv = mass
        .try_inverse()
        .ok_or_else(|| Error::Assembly("mass matrix is singular".into()))?;
    let a = &minv * &stiff * (-eps);
    let f2 = &minv * &conv * -1.0;
    let b = &minv * &loads;
    SystemModel::new(a, vec![f2], b, outputs, 1.0)
}

/// `E′(s)` of the exact scalar past energy: the root of
/// `2E′² + (s² − 2s)E′ − 2ηs² = 0` that is smooth through `s = 0`.
pub fn analytic_scalar_past_derivative(s: f64, eta: f64) -> f64 {
    s * ((2.0 - s) + ((s - 2.0).powi(2) + 16.0 * eta).sqrt()) / 4.0
}

/// `E(x) = ∫₀ˣ E′(s) ds` by adaptive double-exponential quadrature.
pub fn analytic_scalar_past(x: f64, eta: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    quadrature::integrate(|s| analytic_scalar_past_derivative(s, eta), 0.0, x, 1e-12).integral
}

/// The closed-form scalar past energy as an [`EnergyCandidate`].
#[derive(Clone, Copy, Debug)]
pub struct AnalyticScalarPast {
    pub eta: f64,
}

impl EnergyCandidate for AnalyticScalarPast {
    fn n(&self) -> usize {
        1
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        analytic_scalar_past(x[0], self.eta)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, analytic_scalar_past_derivative(x[0], self.eta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::residual_past;
    use crate::tensor::kron_vec;

    #[test]
    fn scalar_fields() {
        let s = make_scalar();
        assert_eq!((s.n(), s.m(), s.p()), (1, 1, 1));
        assert_eq!(s.drift(&DVector::from_element(1, 1.0))[0], -1.0);
        assert_eq!(s.eta(), 0.5);
    }

    #[test]
    fn vdp_shapes_and_drift() {
        let s = make_vdp_ring(3, &[1.0, 1.0, 0.0]).unwrap();
        assert_eq!((s.n(), s.m(), s.p()), (6, 2, 3));
        assert_eq!(s.drift(&DVector::zeros(6)).amax(), 0.0);
        let eps = 1e-3;
        let mut x = DVector::zeros(6);
        x[0] = eps;
        let f = s.drift(&x);
        assert!((f[1] + 3.0 * eps).abs() < 1e-15);
        assert!((f[3] - eps).abs() < 1e-15 && (f[5] - eps).abs() < 1e-15);
        // cubic damping −y²ẏ
        let x = DVector::from_vec(vec![0.5, 0.2, 0.0, 0.0, 0.0, 0.0]);
        let expected = -3.0 * 0.5 + 0.2 - 0.25 * 0.2;
        assert!((s.drift(&x)[1] - expected).abs() < 1e-14);
    }

    #[test]
    fn burgers_structure() {
        let s = make_burgers(12, 5e-3, 6, 6).unwrap();
        assert_eq!((s.n(), s.m(), s.p()), (12, 6, 6));
        for i in 0..12 {
            assert!(s.a().row(i).sum().abs() < 1e-12);
        }
        let ones = DVector::from_element(12, 1.7);
        let q = kron_vec(ones.as_slice(), ones.as_slice());
        assert!((s.f2().unwrap() * q).amax() < 1e-12);
        assert!(matches!(
            make_burgers(12, 5e-3, 5, 6),
            Err(Error::Assembly(_))
        ));
    }

    #[test]
    fn analytic_oracle() {
        assert_eq!(analytic_scalar_past(0.0, 0.5), 0.0);
        let v2 = (1.0 + 3f64.sqrt()) / 2.0;
        assert!((analytic_scalar_past_derivative(1e-7, 0.5) / 1e-7 - v2).abs() < 1e-6);
        let sys = make_scalar();
        let e = AnalyticScalarPast { eta: 0.5 };
        for i in 0..=160 {
            let x = DVector::from_element(1, -8.0 + 0.1 * i as f64);
            assert!(residual_past(&e, &sys, &x).abs() < 1e-8);
            assert!(e.value(&x) >= 0.0);
        }
    }

    #[test]
    fn quadrature_matches_trapezoid() {
        let n = 200_000;
        let h = 1.0 / n as f64;
        let f = |s| analytic_scalar_past_derivative(s, 0.5);
        let trap = h * ((1..n).map(|i| f(i as f64 * h)).sum::<f64>() + 0.5 * (f(0.0) + f(1.0)));
        assert!((analytic_scalar_past(1.0, 0.5) - trap).abs() < 1e-8);
    }
}
