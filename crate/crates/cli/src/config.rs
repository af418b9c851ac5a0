//! Run configuration: JSON on disk, command defaults, validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sosenergy::bench::{make_burgers, make_scalar, make_vdp_ring};
use sosenergy::collocation::{doubling_schedule, CollocationOptions, Window};
use sosenergy::experiments::{burgers_eval_windows, vdp_schedule};
use sosenergy::simulate::SimOptions;
use sosenergy::system::SystemJson;
use sosenergy::{EnergyKind, SystemModel};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Scalar,
    VdpRing {
        #[serde(default = "default_ring_size")]
        g: usize,
        #[serde(default = "default_ring_gains")]
        b: Vec<f64>,
    },
    Burgers {
        #[serde(default = "default_elements")]
        n_elem: usize,
        #[serde(default = "default_viscosity")]
        eps: f64,
        #[serde(default = "default_ports")]
        m: usize,
        #[serde(default = "default_ports")]
        p: usize,
    },
    /// System JSON file `{n, m, p, eta, A, B, C, F2, F3}`.
    File {
        path: PathBuf,
    },
}

fn default_ring_size() -> usize {
    3
}
fn default_ring_gains() -> Vec<f64> {
    vec![1.0, 1.0, 0.0]
}
fn default_elements() -> usize {
    12
}
fn default_viscosity() -> f64 {
    5e-3
}
fn default_ports() -> usize {
    6
}

impl SystemSpec {
    pub fn build(&self) -> Result<SystemModel, CliError> {
        let sys = match self {
            SystemSpec::Scalar => Ok(make_scalar()),
            SystemSpec::VdpRing { g, b } => make_vdp_ring(*g, b),
            SystemSpec::Burgers { n_elem, eps, m, p } => make_burgers(*n_elem, *eps, *m, *p),
            SystemSpec::File { path } => {
                let text = read(path)?;
                let doc: SystemJson = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                SystemModel::from_json(&doc)
            }
        };
        sys.map_err(|e| CliError::Config(format!("system: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Taylor,
    CompleteSos,
    CompleteSosColloc,
    SosColloc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Windows(Vec<Window>),
    Doubling {
        first: f64,
        last: f64,
        #[serde(default)]
        samples: Option<usize>,
    },
}

impl ScheduleSpec {
    pub fn windows(&self) -> Vec<Window> {
        match self {
            ScheduleSpec::Windows(w) => w.clone(),
            ScheduleSpec::Doubling {
                first,
                last,
                samples,
            } => doubling_schedule(*first, *last, *samples),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeConfig {
    pub half_widths: Vec<f64>,
    pub samples: usize,
    pub l21: Range,
    pub l22: Range,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            half_widths: vec![1.0, 20.0],
            samples: 201,
            l21: Range {
                lo: -0.5,
                hi: 0.5,
                count: 101,
            },
            l22: Range {
                lo: -0.5,
                hi: 0.5,
                count: 101,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarErrorConfig {
    pub extent: f64,
    pub points: usize,
}

impl Default for ScalarErrorConfig {
    fn default() -> Self {
        Self {
            extent: 8.0,
            points: 401,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub energy: Option<PathBuf>,
    pub points: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: Option<SystemSpec>,
    pub kind: Option<EnergyKind>,
    pub method: Option<Method>,
    /// Taylor degree for `taylor`/`complete-sos*`, SOS degree for `sos-colloc` and the tables.
    pub degree: Option<usize>,
    pub taylor_degree: Option<usize>,
    pub schedule: Option<ScheduleSpec>,
    pub seed: Option<u64>,
    pub collocation: CollocationOptions,
    pub sim: Option<SimOptions>,
    pub runs: Option<usize>,
    pub eval_windows: Option<Vec<f64>>,
    pub scalar_error: ScalarErrorConfig,
    pub landscape: LandscapeConfig,
    pub eval: EvalConfig,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    ScalarError,
    VdpTable,
    BurgersTable,
    Landscape,
    Eval,
}

/// Default samples per window for the van der Pol table.
pub const VDP_SAMPLES: usize = 1000;
/// Samples for the single Burgers window (reduced profile).
pub const BURGERS_SAMPLES: usize = 500;
pub const DEFAULT_SEED: u64 = 11;
/// The slowest Burgers closed-loop mode decays at rate ≈ 0.17.
pub const BURGERS_HORIZON: f64 = 100.0;

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fills unset fields with the defaults of `cmd`.
    pub fn resolve(mut self, cmd: Command) -> Self {
        let (system, kind, degree, schedule, horizon) = match cmd {
            Command::Solve | Command::ScalarError | Command::Landscape | Command::Eval => (
                SystemSpec::Scalar,
                EnergyKind::Past,
                4,
                ScheduleSpec::Doubling {
                    first: 1.0,
                    last: 8.0,
                    samples: None,
                },
                50.0,
            ),
            Command::VdpTable => (
                SystemSpec::VdpRing {
                    g: 3,
                    b: default_ring_gains(),
                },
                EnergyKind::Future,
                4,
                ScheduleSpec::Windows(vdp_schedule(Some(VDP_SAMPLES))),
                50.0,
            ),
            Command::BurgersTable => (
                SystemSpec::Burgers {
                    n_elem: 12,
                    eps: 5e-3,
                    m: 6,
                    p: 6,
                },
                EnergyKind::Future,
                4,
                ScheduleSpec::Windows(vec![Window::new(0.1, BURGERS_SAMPLES)]),
                BURGERS_HORIZON,
            ),
        };
        if cmd != Command::Eval {
            self.system.get_or_insert(system);
        }
        self.kind.get_or_insert(kind);
        self.method.get_or_insert(Method::SosColloc);
        self.degree.get_or_insert(degree);
        self.taylor_degree.get_or_insert(4);
        self.schedule.get_or_insert(schedule);
        self.seed.get_or_insert(DEFAULT_SEED);
        self.sim.get_or_insert(SimOptions::with_horizon(horizon));
        self.runs.get_or_insert(100);
        if cmd == Command::BurgersTable {
            self.eval_windows.get_or_insert_with(burgers_eval_windows);
        }
        self
    }

    pub fn validate(&self, cmd: Command) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let degree = self.degree.unwrap_or(4);
        match cmd {
            Command::Solve => match self.method.unwrap_or(Method::SosColloc) {
                Method::Taylor if degree < 2 => {
                    return bad(format!("taylor needs degree >= 2, got {degree}"))
                }
                Method::CompleteSos if degree < 3 => {
                    return bad(format!(
                        "complete-sos needs a Taylor degree >= 3, got {degree}"
                    ))
                }
                Method::CompleteSosColloc if degree < 3 || degree.is_multiple_of(2) => {
                    return bad(format!(
                        "complete-sos-colloc needs an odd Taylor degree >= 3, got {degree}"
                    ))
                }
                Method::SosColloc if degree < 2 || !degree.is_multiple_of(2) => {
                    return bad(format!(
                        "sos-colloc needs an even SOS degree >= 2, got {degree}"
                    ))
                }
                _ => {}
            },
            Command::ScalarError | Command::VdpTable | Command::BurgersTable => {
                if degree < 2 || !degree.is_multiple_of(2) {
                    return bad(format!("SOS degree must be even and >= 2, got {degree}"));
                }
                if self.taylor_degree.is_some_and(|d| d < 2) {
                    return bad("taylor_degree must be >= 2".into());
                }
            }
            Command::Landscape | Command::Eval => {}
        }
        if let Some(s) = &self.schedule {
            let w = s.windows();
            if w.is_empty() {
                return bad("schedule has no windows".into());
            }
            if w.iter()
                .any(|w| !(w.half_width > 0.0) || w.samples == Some(0))
            {
                return bad("windows need a positive half_width and sample count".into());
            }
            if w.windows(2).any(|p| p[1].half_width < p[0].half_width) {
                return bad("schedule half-widths must be nondecreasing".into());
            }
        }
        if self.runs == Some(0) {
            return bad("runs must be >= 1".into());
        }
        if cmd == Command::ScalarError
            && (self.scalar_error.points < 2 || !(self.scalar_error.extent > 0.0))
        {
            return bad("scalar_error needs points >= 2 and a positive extent".into());
        }
        if cmd == Command::Landscape {
            let l = &self.landscape;
            if l.half_widths.is_empty() || l.half_widths.iter().any(|a| !(*a > 0.0)) {
                return bad("landscape.half_widths must be positive".into());
            }
            if l.samples == 0 || l.l21.count == 0 || l.l22.count == 0 {
                return bad("landscape grid sizes must be positive".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration; the thread mode is left out
    /// because it does not change results.
    pub fn digest(&self) -> String {
        let mut copy = self.clone();
        copy.collocation.serial = false;
        copy.out = None;
        let bytes = serde_json::to_vec(&copy).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
