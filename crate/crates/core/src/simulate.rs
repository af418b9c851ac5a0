//! Closed-loop simulation under `u = −Bᵀ∇E(x)` with cost accumulation.

use nalgebra::DVector;
use ode_solvers::{Dopri5, OutputType, System};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hjb::EnergyCandidate;
use crate::system::SystemModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    pub horizon: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Stable iff `‖x(T)‖ < settle_factor · max(1, ‖x₀‖)`.
    pub settle_factor: f64,
    /// Diverged once `‖x(t)‖ > divergence_factor · max(1, ‖x₀‖)`.
    pub divergence_factor: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            horizon: 50.0,
            rtol: 1e-8,
            atol: 1e-10,
            settle_factor: 1e-4,
            divergence_factor: 1e3,
        }
    }
}

impl SimOptions {
    pub fn with_horizon(horizon: f64) -> Self {
        Self {
            horizon,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopResult {
    pub x0: Vec<f64>,
    pub horizon: f64,
    /// `½∫(‖Cx‖² + ‖u‖²)dt` up to the end of the run.
    pub cost: f64,
    pub stable: bool,
    pub final_state_norm: f64,
    pub diverged_at: Option<f64>,
    /// Integrator failure message, when the run was cut short by one.
    pub diagnostic: Option<String>,
}

struct ClosedLoop<'a, E: ?Sized> {
    system: &'a SystemModel,
    energy: &'a E,
    limit: f64,
}

impl<E: EnergyCandidate + ?Sized> System<f64, DVector<f64>> for ClosedLoop<'_, E> {
    fn system(&self, _t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let n = self.system.n();
        let x = y.rows(0, n).into_owned();
        let u = -self.system.b().tr_mul(&self.energy.gradient(&x));
        let xdot = self.system.drift(&x) + self.system.b() * &u;
        dy.rows_mut(0, n).copy_from(&xdot);
        dy[n] = 0.5 * (self.system.output(&x).norm_squared() + u.norm_squared());
    }

    fn solout(&mut self, _t: f64, y: &DVector<f64>, _dy: &DVector<f64>) -> bool {
        let n = self.system.n();
        let norm = y.rows(0, n).norm();
        !norm.is_finite() || norm > self.limit
    }
}

/// Integrates the closed loop from `x0` to `opts.horizon` with an adaptive
/// Dormand–Prince 5(4) scheme, co-integrating the running cost.
pub fn simulate_closed_loop<E: EnergyCandidate + ?Sized>(
    system: &SystemModel,
    energy: &E,
    x0: &DVector<f64>,
    opts: &SimOptions,
) -> Result<ClosedLoopResult> {
    let n = system.n();
    if x0.len() != n || energy.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "state has length {}, system n = {n}, energy n = {}",
            x0.len(),
            energy.n()
        )));
    }
    if !(opts.horizon > 0.0) {
        return Err(Error::InvalidInput(format!(
            "horizon must be positive, got {}",
            opts.horizon
        )));
    }
    let scale = x0.norm().max(1.0);
    let mut y0 = DVector::zeros(n + 1);
    y0.rows_mut(0, n).copy_from(x0);
    if x0.amax() == 0.0 {
        return Ok(ClosedLoopResult {
            x0: x0.as_slice().to_vec(),
            horizon: opts.horizon,
            cost: 0.0,
            stable: true,
            final_state_norm: 0.0,
            diverged_at: None,
            diagnostic: None,
        });
    }
    let rhs = ClosedLoop {
        system,
        energy,
        limit: opts.divergence_factor * scale,
    };
    let mut stepper = Dopri5::new(
        rhs,
        0.0,
        opts.horizon,
        opts.horizon,
        y0,
        opts.rtol,
        opts.atol,
    );
    stepper.set_output(OutputType::Sparse);
    let outcome = stepper.integrate();
    let t_end = *stepper.x_out().last().expect("initial point is recorded");
    let y_end = stepper.y_out().last().expect("initial point is recorded");
    let final_state_norm = y_end.rows(0, n).norm();
    let cost = y_end[n];

    let diagnostic = outcome.err().map(|e| e.to_string());
    let diverged =
        !final_state_norm.is_finite() || final_state_norm > opts.divergence_factor * scale;
    let reached_end = diagnostic.is_none() && t_end >= opts.horizon * (1.0 - 1e-12);
    let stable = reached_end && !diverged && final_state_norm < opts.settle_factor * scale;
    Ok(ClosedLoopResult {
        x0: x0.as_slice().to_vec(),
        horizon: opts.horizon,
        cost,
        stable,
        final_state_norm,
        diverged_at: diverged.then_some(t_end),
        diagnostic,
    })
}

/// `|E(x₀) − cost| / cost` for a stable run.
pub fn relative_error<E: EnergyCandidate + ?Sized>(
    energy: &E,
    result: &ClosedLoopResult,
) -> Result<f64> {
    if !result.stable {
        return Err(Error::UnstableExcluded);
    }
    let x0 = DVector::from_column_slice(&result.x0);
    Ok((energy.value(&x0) - result.cost).abs() / result.cost)
}
