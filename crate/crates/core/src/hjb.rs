//! Hamilton–Jacobi–Bellman residuals of the past and future energy functions.
//!
//! Past:   `0 = ∇E·f + ½ ∇E BBᵀ ∇Eᵀ − (η/2) xᵀCᵀCx`
//! Future: `0 = ∇E·f − (η/2) ∇E BBᵀ ∇Eᵀ + ½ xᵀCᵀCx`
//!
//! Residuals are scalar, so the collocation objective is a plain sum of squares.

use nalgebra::DVector;

use crate::linalg::EnergyKind;
use crate::system::SystemModel;

/// Anything that can report `E(x)` and `∇E(x)`.
pub trait EnergyCandidate {
    fn n(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
}

impl<T: EnergyCandidate + ?Sized> EnergyCandidate for &T {
    fn n(&self) -> usize {
        (**self).n()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).gradient(x)
    }
}

/// Weight of the `∇E BBᵀ ∇Eᵀ` term, divided by one half.
pub(crate) fn quadratic_weight(kind: EnergyKind, eta: f64) -> f64 {
    match kind {
        EnergyKind::Past => 1.0,
        EnergyKind::Future => -eta,
    }
}

/// Residual evaluated from a precomputed gradient and drift.
pub(crate) fn residual_with(
    kind: EnergyKind,
    system: &SystemModel,
    x: &DVector<f64>,
    drift: &DVector<f64>,
    grad: &DVector<f64>,
) -> f64 {
    let bt_g = system.b().tr_mul(grad);
    let y = system.output(x);
    let eta = system.eta();
    let output_weight = match kind {
        EnergyKind::Past => -0.5 * eta,
        EnergyKind::Future => 0.5,
    };
    grad.dot(drift)
        + 0.5 * quadratic_weight(kind, eta) * bt_g.norm_squared()
        + output_weight * y.norm_squared()
}

pub fn residual_from_gradient(
    kind: EnergyKind,
    system: &SystemModel,
    x: &DVector<f64>,
    grad: &DVector<f64>,
) -> f64 {
    residual_with(kind, system, x, &system.drift(x), grad)
}

pub fn residual<E: EnergyCandidate + ?Sized>(
    kind: EnergyKind,
    e: &E,
    system: &SystemModel,
    x: &DVector<f64>,
) -> f64 {
    residual_from_gradient(kind, system, x, &e.gradient(x))
}

pub fn residual_past<E: EnergyCandidate + ?Sized>(
    e: &E,
    system: &SystemModel,
    x: &DVector<f64>,
) -> f64 {
    residual(EnergyKind::Past, e, system, x)
}

pub fn residual_future<E: EnergyCandidate + ?Sized>(
    e: &E,
    system: &SystemModel,
    x: &DVector<f64>,
) -> f64 {
    residual(EnergyKind::Future, e, system, x)
}

#[derive(Clone, Debug)]
pub struct Objective {
    /// `J = Σ R(xₖ)²`, summed in sample order.
    pub value: f64,
    pub residuals: DVector<f64>,
}

/// Collocation objective over a sample set.
pub fn objective<E: EnergyCandidate + ?Sized>(
    e: &E,
    system: &SystemModel,
    kind: EnergyKind,
    samples: &[DVector<f64>],
) -> Objective {
    assert!(!samples.is_empty(), "objective needs at least one sample");
    let residuals = DVector::from_iterator(
        samples.len(),
        samples.iter().map(|x| residual(kind, e, system, x)),
    );
    let value = residuals.iter().fold(0.0, |acc, r| acc + r * r);
    Objective { value, residuals }
}
