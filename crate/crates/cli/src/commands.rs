//! Subcommand drivers.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sosenergy::collocation::lm::{OptimizerReport, Termination};
use sosenergy::collocation::{derive_seed, sample_window, Algorithm1Output};
use sosenergy::experiments::{
    fixed_window_table, landscape, linspace, scalar_error, vdp_pinned_ic, windowed_table,
    ClosedLoopTable, TableOptions, TableRow,
};
use sosenergy::hjb::{objective, residual, EnergyCandidate};
use sosenergy::linalg::KwayOptions;
use sosenergy::poly::{taylor, PolyEnergyJson};
use sosenergy::simulate::{simulate_closed_loop, ClosedLoopResult};
use sosenergy::sos::{
    complete_sos, complete_sos_collocation, SosEnergyJson, SquaredPolyEnergyJson,
};
use sosenergy::{PolyEnergy, SosEnergy, SquaredPolyEnergy, SystemModel};

use crate::config::{Method, RunConfig};
use crate::output::{num, opt, OutDir, Table};
use crate::CliError;

/// Any energy artifact written by `solve`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnergyFile {
    Taylor(PolyEnergyJson),
    Squared(SquaredPolyEnergyJson),
    Sos(SosEnergyJson),
}

pub enum LoadedEnergy {
    Taylor(PolyEnergy),
    Squared(SquaredPolyEnergy),
    Sos(SosEnergy),
}

impl LoadedEnergy {
    pub fn from_file(doc: &EnergyFile) -> sosenergy::Result<Self> {
        Ok(match doc {
            EnergyFile::Taylor(j) => Self::Taylor(PolyEnergy::from_json(j)?),
            EnergyFile::Squared(j) => Self::Squared(SquaredPolyEnergy::from_json(j)?),
            EnergyFile::Sos(j) => Self::Sos(SosEnergy::from_json(j)?),
        })
    }

    pub fn as_candidate(&self) -> &dyn EnergyCandidate {
        match self {
            Self::Taylor(e) => e,
            Self::Squared(e) => e,
            Self::Sos(e) => e,
        }
    }
}

fn system(cfg: &RunConfig) -> Result<SystemModel, CliError> {
    cfg.system
        .as_ref()
        .expect("resolved config has a system")
        .build()
}

#[derive(Serialize)]
struct WindowReport {
    half_width: f64,
    samples: usize,
    seed: u64,
    initial_j: f64,
    final_j: f64,
    iterations: usize,
    stationarity: f64,
    termination: Termination,
    seconds: f64,
}

fn window_reports(out: &Algorithm1Output) -> Vec<WindowReport> {
    out.stages
        .iter()
        .map(|s| WindowReport {
            half_width: s.window.half_width,
            samples: s.samples,
            seed: s.seed,
            initial_j: s.report.initial_j,
            final_j: s.report.final_j,
            iterations: s.report.iterations,
            stationarity: s.report.stationarity,
            termination: s.report.termination,
            seconds: s.seconds,
        })
        .collect()
}

#[derive(Serialize)]
struct SolveReport {
    config_sha256: String,
    seed: u64,
    method: Method,
    kind: sosenergy::EnergyKind,
    degree: usize,
    windows: Vec<WindowReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerReport>,
    seconds: f64,
}

pub fn solve(cfg: &RunConfig, out: &OutDir) -> Result<Vec<PathBuf>, CliError> {
    let sys = system(cfg)?;
    let kind = cfg.kind.expect("resolved");
    let method = cfg.method.expect("resolved");
    let degree = cfg.degree.expect("resolved");
    let seed = cfg.seed.expect("resolved");
    let schedule = cfg.schedule.as_ref().expect("resolved").windows();
    let opts = &cfg.collocation;
    let start = Instant::now();
    let mut windows = Vec::new();
    let mut optimizer = None;
    let energy = match method {
        Method::Taylor => {
            EnergyFile::Taylor(taylor(&sys, kind, degree, &KwayOptions::default())?.to_json())
        }
        Method::CompleteSos => {
            let p = taylor(&sys, kind, degree, &KwayOptions::default())?;
            EnergyFile::Squared(complete_sos(&p)?.to_json())
        }
        Method::CompleteSosColloc => {
            let p = taylor(&sys, kind, degree, &KwayOptions::default())?;
            let window = *schedule.last().expect("validated");
            let d = degree.div_ceil(2);
            let params = sys.n().pow(d as u32) * sys.n();
            let s = derive_seed(seed, 0);
            let samples = sample_window(window.half_width, sys.n(), window.sample_count(params), s);
            let (sq, report) = complete_sos_collocation(&p, &sys, &samples, &opts.lm, opts.serial)?;
            optimizer = Some(report);
            EnergyFile::Squared(sq.to_json())
        }
        Method::SosColloc => {
            let res =
                sosenergy::collocation::algorithm1(&sys, kind, degree, &schedule, seed, opts)?;
            windows = window_reports(&res);
            EnergyFile::Sos(res.energy.to_json())
        }
    };
    let report = SolveReport {
        config_sha256: out.digest.clone(),
        seed,
        method,
        kind,
        degree,
        windows,
        optimizer,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(vec![
        out.json("energy.json", &energy)?,
        out.json("report.json", &report)?,
    ])
}

pub fn scalar_error_cmd(cfg: &RunConfig, out: &OutDir) -> Result<Vec<PathBuf>, CliError> {
    let degree = cfg.degree.expect("resolved");
    let schedule = cfg.schedule.as_ref().expect("resolved").windows();
    let sc = &cfg.scalar_error;
    let res = scalar_error(
        degree,
        &schedule,
        sc.extent,
        sc.points,
        cfg.seed.expect("resolved"),
        &cfg.collocation,
    )?;
    let mut t = Table::new(&[
        "x".to_string(),
        "analytic".into(),
        format!("taylor_{degree}"),
        format!("sos_{degree}"),
        "err_taylor".into(),
        "err_sos".into(),
    ]);
    for r in &res.rows {
        t.push(vec![
            num(r.x),
            num(r.analytic),
            num(r.taylor),
            num(r.sos),
            num(r.err_taylor),
            num(r.err_sos),
        ]);
    }
    Ok(vec![
        out.csv(&format!("scalar_error_d{degree}.csv"), &t)?,
        out.json(
            &format!("scalar_sos_d{degree}.json"),
            &res.sos.energy.to_json(),
        )?,
    ])
}

fn table_options(cfg: &RunConfig) -> TableOptions {
    TableOptions {
        runs: cfg.runs.expect("resolved"),
        taylor_degree: cfg.taylor_degree.expect("resolved"),
        sos_degree: cfg.degree.expect("resolved"),
        sim: cfg.sim.expect("resolved"),
        collocation: cfg.collocation.clone(),
    }
}

fn rows_table(rows: &[TableRow]) -> Table {
    let mut t = Table::new(&[
        "half_width",
        "runs",
        "taylor_stable",
        "taylor_unstable",
        "sos_stable",
        "sos_unstable",
        "taylor_mean_rel_error",
        "sos_mean_rel_error",
    ]);
    for r in rows {
        t.push(vec![
            num(r.half_width),
            r.runs.to_string(),
            (r.runs - r.taylor_unstable).to_string(),
            r.taylor_unstable.to_string(),
            (r.runs - r.sos_unstable).to_string(),
            r.sos_unstable.to_string(),
            opt(r.taylor_mean_error),
            opt(r.sos_mean_error),
        ]);
    }
    t
}

#[derive(Serialize)]
struct PinnedCase {
    taylor: ClosedLoopResult,
    sos: ClosedLoopResult,
}

#[derive(Serialize)]
struct TableReport {
    config_sha256: String,
    seed: u64,
    rows: Vec<TableRow>,
    windows: Vec<WindowReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pinned: Option<PinnedCase>,
}

fn write_table(
    name: &str,
    table: &ClosedLoopTable,
    pinned: Option<PinnedCase>,
    out: &OutDir,
) -> Result<Vec<PathBuf>, CliError> {
    let report = TableReport {
        config_sha256: out.digest.clone(),
        seed: out.seed,
        rows: table.rows.clone(),
        windows: window_reports(&table.sos),
        pinned,
    };
    Ok(vec![
        out.csv(&format!("{name}.csv"), &rows_table(&table.rows))?,
        out.json(&format!("{name}.json"), &report)?,
        out.json(
            &format!("{name}_sos_energy.json"),
            &table.sos.energy.to_json(),
        )?,
        out.json(
            &format!("{name}_taylor_energy.json"),
            &table.taylor.to_json(),
        )?,
    ])
}

pub fn vdp_table(cfg: &RunConfig, out: &OutDir) -> Result<Vec<PathBuf>, CliError> {
    let sys = system(cfg)?;
    let schedule = cfg.schedule.as_ref().expect("resolved").windows();
    let opts = table_options(cfg);
    let table = windowed_table(&sys, &schedule, cfg.seed.expect("resolved"), &opts)?;
    let x0 = vdp_pinned_ic();
    let pinned = if x0.len() == sys.n() {
        Some(PinnedCase {
            taylor: simulate_closed_loop(&sys, &table.taylor, &x0, &opts.sim)?,
            sos: simulate_closed_loop(&sys, &table.sos.energy, &x0, &opts.sim)?,
        })
    } else {
        None
    };
    write_table("vdp_table", &table, pinned, out)
}

pub fn burgers_table(cfg: &RunConfig, out: &OutDir) -> Result<Vec<PathBuf>, CliError> {
    let sys = system(cfg)?;
    let schedule = cfg.schedule.as_ref().expect("resolved").windows();
    let window = *schedule.last().expect("validated");
    let eval = cfg.eval_windows.clone().expect("resolved");
    let table = fixed_window_table(
        &sys,
        window,
        &eval,
        cfg.seed.expect("resolved"),
        &table_options(cfg),
    )?;
    write_table("burgers_table", &table, None, out)
}

pub fn landscape_cmd(cfg: &RunConfig, out: &OutDir) -> Result<Vec<PathBuf>, CliError> {
    let l = &cfg.landscape;
    let l21 = linspace(l.l21.lo, l.l21.hi, l.l21.count);
    let l22 = linspace(l.l22.lo, l.l22.hi, l.l22.count);
    let mut paths = Vec::new();
    for &a in &l.half_widths {
        let grid = landscape(a, l.samples, &l21, &l22)?;
        let mut t = Table::new(&["l21", "l22", "j", "log10_j"]);
        for (i, p) in grid.l21.iter().enumerate() {
            for (k, q) in grid.l22.iter().enumerate() {
                let j = grid.j[(i, k)];
                t.push(vec![num(*p), num(*q), num(j), num(j.log10())]);
            }
        }
        paths.push(out.csv(&format!("landscape_w{a}.csv"), &t)?);
    }
    Ok(paths)
}

pub fn eval(
    cfg: &RunConfig,
    energy_path: &std::path::Path,
    out: &OutDir,
) -> Result<Vec<PathBuf>, CliError> {
    let text = std::fs::read_to_string(energy_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", energy_path.display())))?;
    let doc: EnergyFile = serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!(
            "{}: not a Taylor, squared or SOS energy file ({e})",
            energy_path.display()
        ))
    })?;
    let energy = LoadedEnergy::from_file(&doc)
        .map_err(|e| CliError::Config(format!("{}: {e}", energy_path.display())))?;
    let e = energy.as_candidate();
    let n = e.n();
    let points: Vec<DVector<f64>> = cfg
        .eval
        .points
        .iter()
        .map(|p| DVector::from_column_slice(p))
        .collect();
    if let Some(p) = points.iter().find(|p| p.len() != n) {
        return Err(CliError::Config(format!(
            "point has {} coordinates, energy has n = {n}",
            p.len()
        )));
    }
    // residual column only when a system of matching size is given
    let sys = match &cfg.system {
        Some(spec) => Some(spec.build()?).filter(|s| s.n() == n),
        None => None,
    };
    let kind = cfg.kind.expect("resolved");
    let mut header: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    header.push("value".into());
    header.extend((0..n).map(|i| format!("grad{i}")));
    if sys.is_some() {
        header.push("residual".into());
    }
    let mut t = Table::new(&header);
    for x in &points {
        let mut row: Vec<String> = x.iter().map(|v| num(*v)).collect();
        row.push(num(e.value(x)));
        row.extend(e.gradient(x).iter().map(|v| num(*v)));
        if let Some(s) = &sys {
            row.push(num(residual(kind, e, s, x)));
        }
        t.push(row);
    }
    let mut paths = vec![out.csv("eval.csv", &t)?];
    if let (Some(s), false) = (&sys, points.is_empty()) {
        let j = objective(e, s, kind, &points).value;
        paths.push(out.json(
            "eval_objective.json",
            &serde_json::json!({ "objective": j, "points": points.len() }),
        )?);
    }
    Ok(paths)
}
