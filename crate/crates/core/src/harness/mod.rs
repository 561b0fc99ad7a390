//! Config-driven experiments over (method, n, replication) cells.

pub mod metrics;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{
    contrast_error, jaccard, mean_stderr, median, normalized_mse, spearman, ContrastError,
};

use crate::dgp::{build_dgp, DgpInstance, DgpSpec, OracleGrid};
use crate::error::{Result, TauqError};
use crate::nuisance::{
    fit_nuisances, fqe_on, noise_sd, perturb_nuisances, q_solver_options, NoiseSpec,
    NuisanceConfig, NuisanceSet, QModel, TAG_Q,
};
use crate::regress::{fit_regressor, RegressorSpec, SolverOptions};
use crate::rlearner::{fit_tau_all, NextAction};
use crate::rng::derive_seed;
use crate::tau::{ContrastFunction, TauModel};
use crate::types::{Dataset, FeatureBasis, FoldAssignment};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Method {
    /// Fitted-Q evaluation with thresholded lasso; contrast from the Q difference.
    FqeTl,
    /// Fitted-Q evaluation restricted to the state coordinates selected by a
    /// thresholded-lasso reward regression.
    FqeRf,
    /// Residualized contrast with cross-validated lasso.
    TauCv,
    /// Residualized contrast refit without penalty on the coordinates kept by the
    /// thresholded-lasso reward regression.
    TauTl,
    /// `TauTl` with `N(0, n^{-1/4})` noise on every nuisance prediction.
    TauTlNoisy,
    /// `FqeTl` with the same noise on `Q̂`.
    FqeTlNoisy,
    /// Fitted-Q evaluation with plain least squares.
    FqePlain,
    /// Residualized contrast without penalty.
    OrthDiffQ,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::FqeTl,
        Method::FqeRf,
        Method::TauCv,
        Method::TauTl,
        Method::TauTlNoisy,
        Method::FqeTlNoisy,
        Method::FqePlain,
        Method::OrthDiffQ,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FqeTl => "FQE-TL",
            Method::FqeRf => "FQE-RF",
            Method::TauCv => "TAU-CV",
            Method::TauTl => "TAU-TL",
            Method::TauTlNoisy => "TAU-TL-NOISY",
            Method::FqeTlNoisy => "FQE-TL-NOISY",
            Method::FqePlain => "FQE-PLAIN",
            Method::OrthDiffQ => "ORTH-DIFF-Q",
        }
    }

    fn uses_nuisances(self) -> bool {
        matches!(
            self,
            Method::TauCv | Method::TauTl | Method::TauTlNoisy | Method::OrthDiffQ
        )
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = TauqError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| TauqError::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
}

fn default_grid_size() -> usize {
    500
}
fn default_rollouts() -> usize {
    200
}
fn default_replications() -> usize {
    20
}
fn default_folds() -> usize {
    5
}
fn default_cv() -> RegressorSpec {
    RegressorSpec::LassoCv {
        grid_size: 20,
        folds: 5,
    }
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            grid_size: default_grid_size(),
            rollouts: default_rollouts(),
        }
    }
}

/// Experiment file, versioned by `schema`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub dgp: DgpSpec,
    pub methods: Vec<Method>,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub oracle: OracleSettings,
    /// Timesteps scored; all of `1..=T` when absent.
    #[serde(default)]
    pub timesteps: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
    /// Cross-fitting folds for the residualized methods.
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub nuisance: NuisanceConfig,
    /// Regressor for FQE-TL and the reward filter.
    #[serde(default = "RegressorSpec::thresholded")]
    pub thresholded: RegressorSpec,
    #[serde(default = "default_cv")]
    pub cross_validated: RegressorSpec,
    #[serde(default)]
    pub next_action: NextAction,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Wall-clock seconds in the report; off by default so reports are reproducible.
    #[serde(default)]
    pub record_runtime: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(dgp: DgpSpec, methods: Vec<Method>, n_grid: Vec<usize>) -> Self {
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            dgp,
            methods,
            n_grid,
            replications: default_replications(),
            oracle: OracleSettings::default(),
            timesteps: None,
            seed: 0,
            folds: default_folds(),
            nuisance: NuisanceConfig::default(),
            thresholded: RegressorSpec::thresholded(),
            cross_validated: default_cv(),
            next_action: NextAction::Integrated,
            solver: SolverOptions::default(),
            record_runtime: false,
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| TauqError::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TauqError::Config(m));
        if self.schema != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema {} (expected {SCHEMA_VERSION})",
                self.schema
            ));
        }
        self.dgp.validate()?;
        if self.methods.is_empty() {
            return bad("no methods".into());
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be non-empty and strictly increasing".into());
        }
        if self.folds < 2 {
            return bad("folds must be at least 2".into());
        }
        if self.n_grid[0] < 2 * self.folds {
            return bad(format!(
                "n = {} is too small for {} folds",
                self.n_grid[0], self.folds
            ));
        }
        if self.oracle.grid_size == 0 || self.oracle.rollouts == 0 {
            return bad("oracle grid and rollouts must be positive".into());
        }
        if let Some(ts) = &self.timesteps {
            if ts.is_empty() || ts.iter().any(|&t| t == 0 || t > self.dgp.horizon) {
                return bad(format!("timesteps must lie in 1..={}", self.dgp.horizon));
            }
        }
        if self.solver.penalty_factor.is_some() {
            return bad("penalty_factor cannot be set for a whole experiment".into());
        }
        self.solver.validate(0)
    }

    pub fn timesteps(&self) -> Vec<usize> {
        self.timesteps
            .clone()
            .unwrap_or_else(|| (1..=self.dgp.horizon).collect())
    }
}

/// One (method, n, replication, t) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub n: usize,
    pub replication: usize,
    pub t: usize,
    pub normalized_mse: Option<f64>,
    pub mse: Option<f64>,
    pub zero_range: bool,
    pub runtime_s: f64,
    /// Seed of the simulated dataset shared by every method in the cell.
    pub data_seed: u64,
    /// State coordinates in the fitted contrast (or the selected Q support).
    pub support: Option<Vec<usize>>,
    pub error: Option<String>,
}

/// Summary over replications; `t = None` averages each replication over timesteps first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub n: usize,
    pub t: Option<usize>,
    pub count: usize,
    pub failures: usize,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    /// `1.96 · stderr`
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleInfo {
    pub t: usize,
    pub seed: u64,
    pub states: usize,
    pub rollouts: usize,
    pub range: f64,
    pub mean_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub version: String,
    pub config: ExperimentConfig,
    pub oracle: Vec<OracleInfo>,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
}

/// A fitted estimate from one method.
pub enum Fitted {
    Tau(TauModel),
    Q {
        model: FqeContrast,
        /// Coordinates kept by the reward filter.
        selected: Option<Vec<usize>>,
    },
}

impl Fitted {
    pub fn contrast(&self) -> &dyn ContrastFunction {
        match self {
            Fitted::Tau(t) => t,
            Fitted::Q { model, .. } => model,
        }
    }

    /// State coordinates the fit at `t` depends on (binary contrast).
    pub fn support(&self, t: usize) -> Option<Vec<usize>> {
        match self {
            Fitted::Tau(tau) => {
                let m = tau.linear(t, 1)?;
                let nz: Vec<usize> = match &m.support {
                    Some(s) => s.clone(),
                    None => (0..m.coef.len()).filter(|&j| m.coef[j] != 0.0).collect(),
                };
                Some(coords(&tau.basis, nz))
            }
            Fitted::Q { model, selected } => {
                if selected.is_some() {
                    return selected.clone();
                }
                let lin = model
                    .q
                    .stages
                    .get(t.checked_sub(1)?)?
                    .as_ref()?
                    .as_linear()?;
                let nz = (0..lin.coef.len())
                    .filter(|&j| lin.coef[j] != 0.0)
                    .collect();
                Some(coords(&model.q.basis, nz))
            }
        }
    }
}

fn coords(basis: &FeatureBasis, cols: Vec<usize>) -> Vec<usize> {
    let mut out: Vec<usize> = cols
        .into_iter()
        .filter_map(|j| basis.regression_state_coordinate(j))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Contrast `Q̂_t(s,a) − Q̂_t(s,a0)` from a fitted-Q model, optionally with
/// prediction noise keyed by the query.
#[derive(Debug, Clone)]
pub struct FqeContrast {
    pub q: QModel,
    pub noise: Option<NoiseSpec>,
}

impl FqeContrast {
    fn q_at(&self, t: usize, s: &[f64], a: usize) -> f64 {
        let v = self.q.q(t, s, a);
        match &self.noise {
            Some(n) => v + n.draw(TAG_Q, t, a, s),
            None => v,
        }
    }
}

impl ContrastFunction for FqeContrast {
    fn n_actions(&self) -> usize {
        self.q.n_actions
    }

    fn contrast(&self, t: usize, s: &[f64], a: usize) -> f64 {
        if a == 0 {
            return 0.0;
        }
        self.q_at(t, s, a) - self.q_at(t, s, 0)
    }
}

/// Everything one cell's methods share: the dataset and lazily fitted models.
struct CellData<'a> {
    cfg: &'a ExperimentConfig,
    inst: &'a DgpInstance,
    ds: Dataset,
    seed: u64,
    nuisances: Option<std::result::Result<NuisanceSet, String>>,
    fqe_tl: Option<std::result::Result<QModel, String>>,
    reward_support: Option<std::result::Result<Vec<usize>, String>>,
}

impl CellData<'_> {
    fn all(&self) -> Vec<usize> {
        (0..self.ds.len()).collect()
    }

    fn q_basis(&self) -> FeatureBasis {
        self.cfg.nuisance.q_basis_for(&self.ds)
    }

    fn fqe(&self, spec: &RegressorSpec, tag: u64) -> Result<QModel> {
        fqe_on(
            &self.ds,
            &self.all(),
            &self.inst.evaluation,
            &self.q_basis(),
            spec,
            &self.cfg.solver,
            derive_seed(self.seed, &[0xF9E, tag]),
        )
    }

    fn fqe_tl(&mut self) -> Result<QModel> {
        if self.fqe_tl.is_none() {
            self.fqe_tl = Some(
                self.fqe(&self.cfg.thresholded, 1)
                    .map_err(|e| e.to_string()),
            );
        }
        self.fqe_tl.clone().unwrap().map_err(TauqError::Numerical)
    }

    fn nuisances(&mut self) -> Result<NuisanceSet> {
        if self.nuisances.is_none() {
            let run = || -> Result<NuisanceSet> {
                let folds = FoldAssignment::random(
                    self.ds.len(),
                    self.cfg.folds,
                    derive_seed(self.seed, &[0xF01D]),
                )?;
                fit_nuisances(
                    &self.ds,
                    &folds,
                    &self.inst.evaluation,
                    &self.cfg.nuisance,
                    derive_seed(self.seed, &[0x1105]),
                )
            };
            self.nuisances = Some(run().map_err(|e| e.to_string()));
        }
        self.nuisances
            .clone()
            .unwrap()
            .map_err(TauqError::Numerical)
    }

    fn tau(&self, nuis: &NuisanceSet, reg: &RegressorSpec) -> Result<TauModel> {
        fit_tau_all(
            &self.ds,
            nuis,
            &FeatureBasis::state_only(self.ds.state_dim),
            reg,
            self.cfg.next_action,
            &self.cfg.solver,
            derive_seed(self.seed, &[0x7A0]),
        )
    }

    fn reward_filter(&self) -> Result<Vec<usize>> {
        let basis = self.q_basis();
        let p = basis.regression_dim();
        let rows = self.ds.len() * self.ds.horizon;
        let mut x = DMatrix::zeros(rows, p);
        let mut y = Vec::with_capacity(rows);
        let mut buf = Vec::new();
        let mut r = 0;
        for tr in &self.ds.trajectories {
            for t in 1..=self.ds.horizon {
                basis.regression_row_into(tr.state(t), tr.action(t), &mut buf);
                for (j, v) in buf.iter().enumerate() {
                    x[(r, j)] = *v;
                }
                y.push(tr.reward(t));
                r += 1;
            }
        }
        let opts = q_solver_options(&basis, &self.cfg.solver);
        let (model, _) = fit_regressor(
            &self.cfg.thresholded,
            &x,
            &y,
            None,
            &opts,
            derive_seed(self.seed, &[0x4F]),
        )?;
        let lin = model
            .as_linear()
            .ok_or_else(|| TauqError::Config("reward filter needs a linear regressor".into()))?;
        let mut sel: Vec<usize> = (0..p)
            .filter(|&j| lin.coef[j] != 0.0)
            .filter_map(|j| basis.regression_state_coordinate(j))
            .collect();
        sel.sort_unstable();
        sel.dedup();
        Ok(sel)
    }

    fn reward_support(&mut self) -> Result<Vec<usize>> {
        if self.reward_support.is_none() {
            self.reward_support = Some(self.reward_filter().map_err(|e| e.to_string()));
        }
        self.reward_support
            .clone()
            .unwrap()
            .map_err(TauqError::Numerical)
    }

    /// Unpenalized contrast fit restricted to the reward-filtered coordinates
    /// (plus the constant), for every non-reference action block.
    fn tau_on_reward_support(&mut self) -> Result<RegressorSpec> {
        let selected = self.reward_support()?;
        let d = self.ds.state_dim;
        let p = d + 1;
        let support = (0..self.ds.n_actions.saturating_sub(1))
            .flat_map(|b| selected.iter().copied().chain([d]).map(move |j| b * p + j))
            .collect();
        Ok(RegressorSpec::RidgeOnSupport {
            support,
            lambda: 0.0,
        })
    }

    fn run(&mut self, method: Method) -> Result<Fitted> {
        let n = self.ds.len();
        let noise_seed = derive_seed(self.seed, &[0x4015E]);
        Ok(match method {
            Method::FqePlain => Fitted::Q {
                model: FqeContrast {
                    q: self.fqe(&RegressorSpec::default_q(), 0)?,
                    noise: None,
                },
                selected: None,
            },
            Method::FqeTl => Fitted::Q {
                model: FqeContrast {
                    q: self.fqe_tl()?,
                    noise: None,
                },
                selected: None,
            },
            Method::FqeTlNoisy => Fitted::Q {
                model: FqeContrast {
                    q: self.fqe_tl()?,
                    noise: Some(NoiseSpec {
                        sd: noise_sd(n),
                        seed: noise_seed,
                    }),
                },
                selected: None,
            },
            Method::FqeRf => {
                let selected = self.reward_support()?;
                let basis = self.q_basis();
                let free = basis.unpenalized_regression_columns();
                let support: Vec<usize> = (0..basis.regression_dim())
                    .filter(|j| {
                        free.contains(j)
                            || basis
                                .regression_state_coordinate(*j)
                                .is_some_and(|c| selected.binary_search(&c).is_ok())
                    })
                    .collect();
                let spec = RegressorSpec::RidgeOnSupport {
                    support,
                    lambda: 1e-6,
                };
                Fitted::Q {
                    model: FqeContrast {
                        q: self.fqe(&spec, 2)?,
                        noise: None,
                    },
                    selected: Some(selected),
                }
            }
            Method::OrthDiffQ | Method::TauCv => {
                let nuis = self.nuisances()?;
                let reg = match method {
                    Method::OrthDiffQ => RegressorSpec::Ridge { lambda: 0.0 },
                    _ => self.cfg.cross_validated.clone(),
                };
                Fitted::Tau(self.tau(&nuis, &reg)?)
            }
            Method::TauTl => {
                let nuis = self.nuisances()?;
                let reg = self.tau_on_reward_support()?;
                Fitted::Tau(self.tau(&nuis, &reg)?)
            }
            Method::TauTlNoisy => {
                let noisy = perturb_nuisances(&self.nuisances()?, n, noise_seed);
                let reg = self.tau_on_reward_support()?;
                Fitted::Tau(self.tau(&noisy, &reg)?)
            }
        })
    }
}

/// Oracle contrasts at each scored timestep, computed once per experiment.
pub fn oracle_grids(cfg: &ExperimentConfig, inst: &DgpInstance) -> Result<Vec<(OracleGrid, u64)>> {
    cfg.timesteps()
        .into_iter()
        .map(|t| {
            let seed = derive_seed(cfg.seed, &[0x0AC1E, t as u64]);
            let states = inst.sample_states(
                &inst.behavior,
                t,
                cfg.oracle.grid_size,
                derive_seed(seed, &[0]),
            )?;
            Ok((
                inst.oracle_tau_grid(
                    &inst.evaluation,
                    t,
                    states,
                    cfg.oracle.rollouts,
                    derive_seed(seed, &[1]),
                ),
                seed,
            ))
        })
        .collect()
}

/// Runs every (n, replication) cell on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    // one instance for the whole experiment; replications differ only in the data
    let inst = build_dgp(&cfg.dgp)?;
    let grids = oracle_grids(cfg, &inst)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.replications)
        .flat_map(|r| cfg.n_grid.iter().map(move |&n| (r, n)))
        .collect();
    let per_job: Vec<Vec<CellResult>> = jobs
        .par_iter()
        .map(|&(rep, n)| run_cell(cfg, &inst, &grids, rep, n))
        .collect();
    let mut cells: Vec<CellResult> = per_job.into_iter().flatten().collect();
    cells.sort_by_key(|c| (method_order(cfg, c.method), c.n, c.replication, c.t));
    let aggregates = aggregate(cfg, &cells);
    Ok(ExperimentReport {
        schema: SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        oracle: grids
            .iter()
            .map(|(g, seed)| {
                let hi = g.tau_true.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = g.tau_true.iter().copied().fold(f64::INFINITY, f64::min);
                OracleInfo {
                    t: g.t,
                    seed: *seed,
                    states: g.len(),
                    rollouts: g.rollouts,
                    range: hi - lo,
                    mean_stderr: mean_stderr(&g.stderr).0,
                }
            })
            .collect(),
        cells,
        aggregates,
    })
}

/// [`run_experiment`] on a dedicated pool with `jobs` threads (0 = rayon default).
pub fn run_experiment_with_jobs(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| TauqError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(cfg))
}

fn method_order(cfg: &ExperimentConfig, m: Method) -> usize {
    cfg.methods
        .iter()
        .position(|x| *x == m)
        .unwrap_or(usize::MAX)
}

fn run_cell(
    cfg: &ExperimentConfig,
    inst: &DgpInstance,
    grids: &[(OracleGrid, u64)],
    rep: usize,
    n: usize,
) -> Vec<CellResult> {
    let data_seed = derive_seed(cfg.seed, &[0xDA7A, rep as u64, n as u64]);
    let failed = |method: Method, msg: String| -> Vec<CellResult> {
        grids
            .iter()
            .map(|(g, _)| CellResult {
                method,
                n,
                replication: rep,
                t: g.t,
                normalized_mse: None,
                mse: None,
                zero_range: false,
                runtime_s: 0.0,
                data_seed,
                support: None,
                error: Some(msg.clone()),
            })
            .collect()
    };
    let ds = match inst.simulate(&inst.behavior, n, data_seed) {
        Ok(ds) => ds,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .flat_map(|m| failed(*m, e.to_string()))
                .collect()
        }
    };
    let mut data = CellData {
        cfg,
        inst,
        ds,
        seed: data_seed,
        nuisances: None,
        fqe_tl: None,
        reward_support: None,
    };
    let mut out = Vec::new();
    for &method in &cfg.methods {
        let start = Instant::now();
        if method.uses_nuisances() {
            // nuisance time is charged to the first method that needs it
            let _ = data.nuisances();
        }
        let fitted = data.run(method);
        let runtime = if cfg.record_runtime {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        match fitted {
            Err(e) => out.extend(failed(method, e.to_string())),
            Ok(f) => {
                for (g, _) in grids {
                    let err = contrast_error(f.contrast(), g);
                    out.push(CellResult {
                        method,
                        n,
                        replication: rep,
                        t: g.t,
                        normalized_mse: err.as_ref().ok().map(|e| e.normalized),
                        mse: err.as_ref().ok().map(|e| e.mse),
                        zero_range: err.as_ref().is_ok_and(|e| e.zero_range),
                        runtime_s: runtime,
                        data_seed,
                        support: f.support(g.t),
                        error: err.err().map(|e| e.to_string()),
                    });
                }
            }
        }
    }
    out
}

fn summarize(
    method: Method,
    n: usize,
    t: Option<usize>,
    values: &[f64],
    failures: usize,
) -> Aggregate {
    let (mean, se) = mean_stderr(values);
    let some = |v: f64| (!values.is_empty()).then_some(v);
    Aggregate {
        method,
        n,
        t,
        count: values.len(),
        failures,
        median: median(values),
        mean: some(mean),
        half_width: some(1.96 * se),
    }
}

fn aggregate(cfg: &ExperimentConfig, cells: &[CellResult]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    let ts = cfg.timesteps();
    for &method in &cfg.methods {
        for &n in &cfg.n_grid {
            let sel: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.method == method && c.n == n)
                .collect();
            for &t in &ts {
                let v: Vec<f64> = sel
                    .iter()
                    .filter(|c| c.t == t)
                    .filter_map(|c| c.normalized_mse)
                    .collect();
                let fails = sel
                    .iter()
                    .filter(|c| c.t == t && c.normalized_mse.is_none())
                    .count();
                out.push(summarize(method, n, Some(t), &v, fails));
            }
            let mut per_rep = Vec::new();
            let mut fails = 0;
            for r in 0..cfg.replications {
                let v: Vec<Option<f64>> = sel
                    .iter()
                    .filter(|c| c.replication == r)
                    .map(|c| c.normalized_mse)
                    .collect();
                if v.iter().all(Option::is_some) && !v.is_empty() {
                    per_rep.push(v.iter().flatten().sum::<f64>() / v.len() as f64);
                } else {
                    fails += 1;
                }
            }
            out.push(summarize(method, n, None, &per_rep, fails));
        }
    }
    out
}

impl ExperimentReport {
    /// Aggregate for `(method, n, t)`.
    pub fn aggregate(&self, method: Method, n: usize, t: Option<usize>) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.n == n && a.t == t)
    }

    /// Cells for one method and sample size, ordered by replication then `t`.
    pub fn cells_for(&self, method: Method, n: usize) -> Vec<&CellResult> {
        self.cells
            .iter()
            .filter(|c| c.method == method && c.n == n)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Long-format CSV: `method, n, replication, t, normalized_mse, runtime_s, mse`.
pub fn write_report_csv<W: Write>(report: &ExperimentReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "method",
        "n",
        "replication",
        "t",
        "normalized_mse",
        "runtime_s",
        "mse",
    ])?;
    for c in &report.cells {
        out.write_record([
            c.method.name().to_string(),
            c.n.to_string(),
            c.replication.to_string(),
            c.t.to_string(),
            fmt_opt(c.normalized_mse),
            c.runtime_s.to_string(),
            fmt_opt(c.mse),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `report.csv` and/or `report.json` under `dir`.
pub fn emit_report(
    report: &ExperimentReport,
    dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        let path = match f {
            ReportFormat::Csv => {
                let p = dir.join("report.csv");
                write_report_csv(report, std::io::BufWriter::new(std::fs::File::create(&p)?))?;
                p
            }
            ReportFormat::Json => {
                let p = dir.join("report.json");
                let file = std::io::BufWriter::new(std::fs::File::create(&p)?);
                serde_json::to_writer_pretty(file, report)?;
                p
            }
        };
        written.push(path);
    }
    Ok(written)
}

pub fn read_report_json(path: &Path) -> Result<ExperimentReport> {
    Ok(serde_json::from_reader(std::io::BufReader::new(
        std::fs::File::open(path)?,
    ))?)
}
