//! Drivers for the scalar error curves, objective landscapes and
//! closed-loop tables.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{analytic_scalar_past, make_scalar};
use crate::collocation::{
    algorithm1, derive_seed, equispaced, sample_window, Algorithm1Output, CollocationOptions,
    Window,
};
use crate::error::Result;
use crate::hjb::{objective, EnergyCandidate};
use crate::linalg::{solve_are_past, EnergyKind, KwayOptions};
use crate::poly::{taylor, PolyEnergy};
use crate::simulate::{relative_error, simulate_closed_loop, ClosedLoopResult, SimOptions};
use crate::sos::{sos_from_factor, BlockStructure, SosEnergy};
use crate::system::SystemModel;
use crate::tensor::MonomialBasis;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarErrorRow {
    pub x: f64,
    pub analytic: f64,
    pub taylor: f64,
    pub sos: f64,
    pub err_taylor: f64,
    pub err_sos: f64,
}

pub struct ScalarError {
    pub degree: usize,
    pub taylor: PolyEnergy,
    pub sos: Algorithm1Output,
    pub rows: Vec<ScalarErrorRow>,
}

impl ScalarError {
    pub fn max_abs_err_taylor(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.err_taylor.abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_err_sos(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.err_sos.abs())
            .fold(0.0, f64::max)
    }
}

/// Degree-`degree` Taylor and SOS past energies of the scalar benchmark,
/// compared to the exact energy at `points` equispaced points on `[−extent, extent]`.
pub fn scalar_error(
    degree: usize,
    schedule: &[Window],
    extent: f64,
    points: usize,
    seed: u64,
    opts: &CollocationOptions,
) -> Result<ScalarError> {
    let sys = make_scalar();
    let taylor = taylor(&sys, EnergyKind::Past, degree, &KwayOptions::default())?;
    let sos = algorithm1(&sys, EnergyKind::Past, degree, schedule, seed, opts)?;
    let rows = equispaced(extent, points)
        .into_iter()
        .map(|x| {
            let analytic = analytic_scalar_past(x[0], sys.eta());
            let t = taylor.eval(&x);
            let s = sos.energy.eval(&x);
            ScalarErrorRow {
                x: x[0],
                analytic,
                taylor: t,
                sos: s,
                err_taylor: t - analytic,
                err_sos: s - analytic,
            }
        })
        .collect();
    Ok(ScalarError {
        degree,
        taylor,
        sos,
        rows,
    })
}

/// Grid of `J(L)` for the degree-4 scalar past SOS with `L₁₁` fixed at the
/// Riccati value `√(V₂/2)`; rows follow `l21`, columns `l22`.
#[derive(Clone, Debug)]
pub struct Landscape {
    pub half_width: f64,
    pub l11: f64,
    pub l21: Vec<f64>,
    pub l22: Vec<f64>,
    pub j: DMatrix<f64>,
}

pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

pub fn landscape(half_width: f64, samples: usize, l21: &[f64], l22: &[f64]) -> Result<Landscape> {
    let sys = make_scalar();
    let v2 = solve_are_past(sys.a(), sys.b(), sys.c(), sys.eta())?.x[(0, 0)];
    let l11 = (0.5 * v2).sqrt();
    let pts = equispaced(half_width, samples);
    let basis = MonomialBasis::new(1, 2);
    let mut j = DMatrix::zeros(l21.len(), l22.len());
    for (a, &p) in l21.iter().enumerate() {
        for (b, &q) in l22.iter().enumerate() {
            let l = DMatrix::from_row_slice(2, 2, &[l11, 0.0, p, q]);
            let e = sos_from_factor(basis.clone(), l, BlockStructure::full(2))?;
            j[(a, b)] = objective(&e, &sys, EnergyKind::Past, &pts).value;
        }
    }
    Ok(Landscape {
        half_width,
        l11,
        l21: l21.to_vec(),
        l22: l22.to_vec(),
        j,
    })
}

/// Indices of strict interior local minima of a 1-D sequence.
pub fn local_minima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] < values[i - 1] && values[i] < values[i + 1])
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub half_width: f64,
    pub runs: usize,
    pub taylor_unstable: usize,
    pub sos_unstable: usize,
    /// Mean over stable runs; `None` when every run was unstable.
    pub taylor_mean_error: Option<f64>,
    pub sos_mean_error: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunPair {
    pub taylor: ClosedLoopResult,
    pub sos: ClosedLoopResult,
}

fn mean_error<E: EnergyCandidate + ?Sized>(e: &E, results: &[&ClosedLoopResult]) -> Option<f64> {
    let errs: Vec<f64> = results
        .iter()
        .filter_map(|r| relative_error(e, r).ok())
        .collect();
    (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Closed-loop runs of both controllers from `ics`, with per-method
/// instability counts and mean relative errors.
pub fn compare_controllers(
    system: &SystemModel,
    taylor: &PolyEnergy,
    sos: &SosEnergy,
    half_width: f64,
    ics: &[DVector<f64>],
    sim: &SimOptions,
    serial: bool,
) -> Result<(TableRow, Vec<RunPair>)> {
    let run = |x0: &DVector<f64>| -> Result<RunPair> {
        Ok(RunPair {
            taylor: simulate_closed_loop(system, taylor, x0, sim)?,
            sos: simulate_closed_loop(system, sos, x0, sim)?,
        })
    };
    let pairs: Vec<RunPair> = if serial {
        ics.iter().map(run).collect::<Result<_>>()?
    } else {
        ics.par_iter().map(run).collect::<Result<_>>()?
    };
    let t: Vec<&ClosedLoopResult> = pairs.iter().map(|p| &p.taylor).collect();
    let s: Vec<&ClosedLoopResult> = pairs.iter().map(|p| &p.sos).collect();
    let row = TableRow {
        half_width,
        runs: ics.len(),
        taylor_unstable: t.iter().filter(|r| !r.stable).count(),
        sos_unstable: s.iter().filter(|r| !r.stable).count(),
        taylor_mean_error: mean_error(taylor, &t),
        sos_mean_error: mean_error(sos, &s),
    };
    Ok((row, pairs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableOptions {
    /// Initial conditions per window.
    pub runs: usize,
    pub taylor_degree: usize,
    pub sos_degree: usize,
    pub sim: SimOptions,
    pub collocation: CollocationOptions,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            runs: 100,
            taylor_degree: 4,
            sos_degree: 4,
            sim: SimOptions::default(),
            collocation: CollocationOptions::default(),
        }
    }
}

pub struct ClosedLoopTable {
    pub taylor: PolyEnergy,
    pub sos: Algorithm1Output,
    pub rows: Vec<TableRow>,
    /// Initial conditions used per row.
    pub ics: Vec<Vec<DVector<f64>>>,
}

fn draw_ics(seed: u64, row: usize, half_width: f64, n: usize, runs: usize) -> Vec<DVector<f64>> {
    sample_window(
        half_width,
        n,
        runs,
        derive_seed(seed ^ 0x1C5E_ED00, row as u64),
    )
}

/// Future-energy controllers on a window schedule; row `i` simulates the
/// SOS energy from stage `i` with fresh initial conditions drawn in window `i`.
pub fn windowed_table(
    system: &SystemModel,
    schedule: &[Window],
    seed: u64,
    opts: &TableOptions,
) -> Result<ClosedLoopTable> {
    let taylor = taylor(
        system,
        EnergyKind::Future,
        opts.taylor_degree,
        &KwayOptions::default(),
    )?;
    let sos = algorithm1(
        system,
        EnergyKind::Future,
        opts.sos_degree,
        schedule,
        seed,
        &opts.collocation,
    )?;
    let offset = sos.stages.len() - schedule.len();
    let mut rows = Vec::new();
    let mut all_ics = Vec::new();
    for (i, w) in schedule.iter().enumerate() {
        let ics = draw_ics(seed, i, w.half_width, system.n(), opts.runs);
        let stage = &sos.stages[i + offset].energy;
        let (row, _) = compare_controllers(
            system,
            &taylor,
            stage,
            w.half_width,
            &ics,
            &opts.sim,
            opts.collocation.serial,
        )?;
        rows.push(row);
        all_ics.push(ics);
    }
    Ok(ClosedLoopTable {
        taylor,
        sos,
        rows,
        ics: all_ics,
    })
}

/// Future-energy controllers optimized once on `window`, then evaluated on
/// each of `eval_half_widths`.
pub fn fixed_window_table(
    system: &SystemModel,
    window: Window,
    eval_half_widths: &[f64],
    seed: u64,
    opts: &TableOptions,
) -> Result<ClosedLoopTable> {
    let taylor = taylor(
        system,
        EnergyKind::Future,
        opts.taylor_degree,
        &KwayOptions::default(),
    )?;
    let sos = algorithm1(
        system,
        EnergyKind::Future,
        opts.sos_degree,
        &[window],
        seed,
        &opts.collocation,
    )?;
    let mut rows = Vec::new();
    let mut all_ics = Vec::new();
    for (i, &a) in eval_half_widths.iter().enumerate() {
        let ics = draw_ics(seed, i, a, system.n(), opts.runs);
        let (row, _) = compare_controllers(
            system,
            &taylor,
            &sos.energy,
            a,
            &ics,
            &opts.sim,
            opts.collocation.serial,
        )?;
        rows.push(row);
        all_ics.push(ics);
    }
    Ok(ClosedLoopTable {
        taylor,
        sos,
        rows,
        ics: all_ics,
    })
}

/// Initial condition singled out for the van der Pol ring.
pub fn vdp_pinned_ic() -> DVector<f64> {
    DVector::from_vec(vec![-0.21, 0.08, 0.06, -0.35, 0.36, -0.47])
}

/// The van der Pol schedule: half-widths `0.1, 0.2, …, 0.5`.
pub fn vdp_schedule(samples: Option<usize>) -> Vec<Window> {
    (1..=5)
        .map(|i| Window {
            half_width: 0.1 * i as f64,
            samples,
        })
        .collect()
}

/// Evaluation half-widths for the Burgers table.
pub fn burgers_eval_windows() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.4]
}
