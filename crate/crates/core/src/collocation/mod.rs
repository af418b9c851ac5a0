//! Least-squares collocation of SOS energies over sampled windows.

pub mod lm;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hjb::{quadratic_weight, residual_with};
use crate::linalg::{cholesky_psd, solve_are_stabilizing, EnergyKind};
use crate::sos::{sos_from_factor, trapezoid_positions, BlockStructure, SosEnergy};
use crate::system::SystemModel;
use crate::tensor::MonomialBasis;

pub use lm::{levenberg_marquardt, LeastSquaresProblem, LmOptions, OptimizerReport, Termination};

/// Hypercube `[−a, a]ⁿ` with a sample budget. `samples = None` means
/// `max(200, 20 · #decision variables)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub half_width: f64,
    #[serde(default)]
    pub samples: Option<usize>,
}

impl Window {
    pub fn new(half_width: f64, samples: usize) -> Self {
        Self {
            half_width,
            samples: Some(samples),
        }
    }

    pub fn sample_count(&self, n_params: usize) -> usize {
        self.samples.unwrap_or_else(|| 200.max(20 * n_params))
    }
}

/// Schedule of half-widths `a, 2a, 4a, …` up to and including `last`.
pub fn doubling_schedule(first: f64, last: f64, samples: Option<usize>) -> Vec<Window> {
    let mut out = Vec::new();
    let mut a = first;
    while a < last * (1.0 - 1e-12) {
        out.push(Window {
            half_width: a,
            samples,
        });
        a *= 2.0;
    }
    out.push(Window {
        half_width: last,
        samples,
    });
    out
}

/// Mixes a stream index into a base seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE5_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` i.i.d. uniform points in `[−a, a]ⁿ`.
pub fn sample_window(half_width: f64, n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            DVector::from_iterator(
                n,
                (0..n).map(|_| rng.random_range(-half_width..=half_width)),
            )
        })
        .collect()
}

/// `count` equispaced points on `[−a, a]` (scalar systems).
pub fn equispaced(half_width: f64, count: usize) -> Vec<DVector<f64>> {
    if count == 1 {
        return vec![DVector::zeros(1)];
    }
    (0..count)
        .map(|i| {
            DVector::from_element(
                1,
                -half_width + 2.0 * half_width * i as f64 / (count - 1) as f64,
            )
        })
        .collect()
}

/// Drops the top diagonal block when more than half of the samples lie
/// outside the unit hypercube.
pub fn select_structure(basis: &MonomialBasis, samples: &[DVector<f64>]) -> BlockStructure {
    let r = basis.max_degree();
    let outside = samples.iter().filter(|x| x.amax() > 1.0).count();
    if 2 * outside > samples.len() {
        BlockStructure::drop_top(r)
    } else {
        BlockStructure::full(r)
    }
}

/// `J(L) = Σ R(xₖ)²` over the free entries of a lower-trapezoidal factor.
pub struct SosProblem<'a> {
    template: SosEnergy,
    positions: Vec<(usize, usize)>,
    system: &'a SystemModel,
    kind: EnergyKind,
    samples: &'a [DVector<f64>],
    serial: bool,
}

impl<'a> SosProblem<'a> {
    pub fn new(
        template: SosEnergy,
        system: &'a SystemModel,
        kind: EnergyKind,
        samples: &'a [DVector<f64>],
        serial: bool,
    ) -> Result<Self> {
        if template.basis().n() != system.n() {
            return Err(Error::DimensionMismatch(format!(
                "basis has n = {}, system has n = {}",
                template.basis().n(),
                system.n()
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput(
                "collocation needs at least one sample".into(),
            ));
        }
        let l = template.factor();
        let positions = trapezoid_positions(l.nrows(), l.ncols());
        Ok(Self {
            template,
            positions,
            system,
            kind,
            samples,
            serial,
        })
    }

    pub fn energy(&self, theta: &DVector<f64>) -> SosEnergy {
        self.template
            .with_params(theta)
            .expect("parameter count fixed by the problem")
    }

    fn map<T: Send>(&self, f: impl Fn(&DVector<f64>) -> T + Sync + Send) -> Vec<T> {
        if self.serial {
            self.samples.iter().map(f).collect()
        } else {
            self.samples.par_iter().map(f).collect()
        }
    }

    /// Residual and its gradient with respect to the free entries of `L`:
    /// `∂R/∂Lᵢc = 2(aᵢ w_c + zᵢ b_c)` with `w = Lᵀz`, `a = Jz h`, `b = LᵀJz h`
    /// and `h = f + σBBᵀ∇E`.
    fn row(&self, e: &SosEnergy, x: &DVector<f64>) -> (f64, Vec<f64>) {
        let (l, basis) = (e.factor(), e.basis());
        let (z, jz) = basis.eval(x);
        let w = l.tr_mul(&z);
        let p = jz.tr_mul(l);
        let g = jz.tr_mul(&(l * &w)) * 2.0;
        let drift = self.system.drift(x);
        let r = residual_with(self.kind, self.system, x, &drift, &g);
        let bbt_g = self.system.b() * self.system.b().tr_mul(&g);
        let h = drift + bbt_g * quadratic_weight(self.kind, self.system.eta());
        let a = &jz * &h;
        let b = p.tr_mul(&h);
        let row = self
            .positions
            .iter()
            .map(|&(i, c)| 2.0 * (a[i] * w[c] + z[i] * b[c]))
            .collect();
        (r, row)
    }
}

impl LeastSquaresProblem for SosProblem<'_> {
    fn n_params(&self) -> usize {
        self.positions.len()
    }

    fn n_residuals(&self) -> usize {
        self.samples.len()
    }

    fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        let e = self.energy(theta);
        DVector::from_vec(self.map(|x| crate::hjb::residual(self.kind, &e, self.system, x)))
    }

    fn jacobian(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let e = self.energy(theta);
        let rows = self.map(|x| self.row(&e, x));
        let mut r = DVector::zeros(rows.len());
        let mut jac = DMatrix::zeros(rows.len(), self.positions.len());
        for (k, (rk, row)) in rows.into_iter().enumerate() {
            r[k] = rk;
            jac.row_mut(k).copy_from_slice(&row);
        }
        (r, jac)
    }
}

/// Collocation fit of `L` starting from `init` on a fixed sample set.
pub fn optimize_factor(
    init: &SosEnergy,
    system: &SystemModel,
    kind: EnergyKind,
    samples: &[DVector<f64>],
    opts: &LmOptions,
    serial: bool,
) -> Result<(SosEnergy, OptimizerReport)> {
    let problem = SosProblem::new(init.clone(), system, kind, samples, serial)?;
    let (theta, report) = levenberg_marquardt(&problem, init.params(), opts)?;
    Ok((problem.energy(&theta), report))
}

/// `L` with the degree-1 diagonal block set to `chol(½X)` for the Riccati
/// solution `X`, the remaining diagonal set to `diagonal_seed` and every
/// other entry zero.
pub fn riccati_start(
    system: &SystemModel,
    kind: EnergyKind,
    r: usize,
    structure: BlockStructure,
    diagonal_seed: f64,
) -> Result<SosEnergy> {
    let (a, b, c, eta) = (system.a(), system.b(), system.c(), system.eta());
    let x = solve_are_stabilizing(kind, a, b, c, eta)?.x;
    let n = system.n();
    let l11 = cholesky_psd(&((&x + x.transpose()) * 0.25))?;
    let basis = MonomialBasis::new(n, r);
    let mut l = DMatrix::zeros(basis.len(), structure.columns(&basis));
    l.view_mut((0, 0), (n, n)).copy_from(&l11);
    for j in n..l.ncols() {
        l[(j, j)] = diagonal_seed;
    }
    sos_from_factor(basis, l, structure)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollocationOptions {
    pub lm: LmOptions,
    /// Evaluate samples on the calling thread only.
    pub serial: bool,
    /// Apply the block-dropping rule; `false` keeps the full factor.
    pub block_dropping: bool,
    /// Diagonal entries of `L` outside the Riccati block at the start.
    /// A zero column of `L` is a stationary point of `J`, so an all-zero
    /// start leaves those columns unused.
    pub diagonal_seed: f64,
}

impl Default for CollocationOptions {
    fn default() -> Self {
        Self {
            lm: LmOptions::default(),
            serial: false,
            block_dropping: true,
            diagonal_seed: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WindowStage {
    pub window: Window,
    pub seed: u64,
    pub samples: usize,
    pub report: OptimizerReport,
    pub energy: SosEnergy,
    /// Wall-clock time of the optimization.
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct Algorithm1Output {
    pub energy: SosEnergy,
    pub structure: BlockStructure,
    /// One stage per window; a single-window schedule gets a leading `1/10` window.
    pub stages: Vec<WindowStage>,
}

impl Algorithm1Output {
    pub fn reports(&self) -> Vec<OptimizerReport> {
        self.stages.iter().map(|s| s.report.clone()).collect()
    }
}

/// Windowed SOS collocation with warm starts.
///
/// Samples are redrawn per window from `derive_seed(seed, i)`. The block
/// structure is chosen once, from the samples of the largest window.
pub fn algorithm1(
    system: &SystemModel,
    kind: EnergyKind,
    sos_degree: usize,
    schedule: &[Window],
    seed: u64,
    opts: &CollocationOptions,
) -> Result<Algorithm1Output> {
    if sos_degree < 2 || !sos_degree.is_multiple_of(2) {
        return Err(Error::DegreeOutOfRange {
            degree: sos_degree,
            min: 2,
            max: usize::MAX,
        });
    }
    let Some(last) = schedule.last() else {
        return Err(Error::InvalidInput("window schedule is empty".into()));
    };
    for pair in schedule.windows(2) {
        if pair[1].half_width < pair[0].half_width {
            return Err(Error::InvalidInput(
                "window schedule must be nested (nondecreasing half-widths)".into(),
            ));
        }
    }
    if schedule
        .iter()
        .any(|w| !(w.half_width > 0.0) || w.samples == Some(0))
    {
        return Err(Error::InvalidInput(
            "windows need a positive half-width and sample count".into(),
        ));
    }
    let windows: Vec<Window> = if schedule.len() == 1 {
        vec![
            Window {
                half_width: last.half_width / 10.0,
                samples: last.samples,
            },
            *last,
        ]
    } else {
        schedule.to_vec()
    };

    let r = sos_degree / 2;
    let n = system.n();
    let basis = MonomialBasis::new(n, r);
    let full_params = trapezoid_positions(basis.len(), basis.len()).len();
    let draw = |i: usize, w: &Window, params: usize| {
        let s = derive_seed(seed, i as u64);
        (s, sample_window(w.half_width, n, w.sample_count(params), s))
    };

    let structure = if opts.block_dropping {
        let (_, probe) = draw(windows.len() - 1, windows.last().unwrap(), full_params);
        select_structure(&basis, &probe)
    } else {
        BlockStructure::full(r)
    };
    let mut current = riccati_start(system, kind, r, structure, opts.diagonal_seed)?;
    let params = current.params().len();

    let mut stages = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        let (s, samples) = draw(i, w, params);
        let start = std::time::Instant::now();
        let (next, report) =
            optimize_factor(&current, system, kind, &samples, &opts.lm, opts.serial).map_err(
                |e| Error::WindowFailed {
                    window: i,
                    last_factor: (i > 0).then(|| current.params().as_slice().to_vec()),
                    source: Box::new(e),
                },
            )?;
        current = next;
        stages.push(WindowStage {
            window: *w,
            seed: s,
            samples: samples.len(),
            report,
            energy: current.clone(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(Algorithm1Output {
        energy: current,
        structure,
        stages,
    })
}
