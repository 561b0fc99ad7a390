//! Residualized estimation of `τ_t`: residual problems, contrast fits, cross-fitted
//! evaluation, three-fold greedy optimization, and exact tabular diagnostics.

mod diagnostics;

pub use diagnostics::{
    default_eps_grid, excess_variance_check, orthogonality_check, ExcessVariance,
    OrthogonalityReport, Perturbation, TabularMdp,
};

use std::collections::HashSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TauqError};
use crate::nuisance::{
    fit_behavior_on, fit_nuisances, FoldNuisance, MMode, NuisanceConfig, NuisanceModel,
    NuisanceProvider, NuisanceSet, QModel,
};
use crate::policy::PolicySpec;
use crate::regress::{fit_regressor, FittedRegressor, LinearModel, RegressorSpec, SolverOptions};
use crate::rng::derive_seed;
use crate::tau::{Contrast, ContrastFunction, TauModel};
use crate::types::{Dataset, FeatureBasis, FoldAssignment};

/// How the continuation term `γ Q̂_{t+1}(S_{t+1}, ·)` enters the pseudo-outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NextAction {
    /// `Σ_a' π(a'|S_{t+1}) Q̂_{t+1}(S_{t+1}, a')`
    #[default]
    Integrated,
    /// `Q̂_{t+1}(S_{t+1}, A_{t+1})` with the logged action.
    Observed,
}

/// Rows `(Y_i, W_i, S_i)` of the residualized regression at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualProblem {
    pub t: usize,
    pub action: usize,
    pub reference: usize,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub trajectories: Vec<usize>,
    /// Fold whose nuisances produced each row.
    pub folds: Vec<usize>,
}

impl ResidualProblem {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Binary residual problem (`a = 1`, `a0 = 0`) over `rows` (all trajectories when `None`).
pub fn build_residual_problem(
    ds: &Dataset,
    nuis: &dyn NuisanceProvider,
    t: usize,
    rows: Option<&[usize]>,
    next: NextAction,
) -> Result<ResidualProblem> {
    multi_action_residual(ds, nuis, t, 1, 0, rows, next)
}

/// Residual problem for contrast `a` against reference `a0`:
/// `Y = R_t + γ·cont − m̂_t(S_t)`, `W = 1{A_t = a} − π̂^b(a|S_t)`.
pub fn multi_action_residual(
    ds: &Dataset,
    nuis: &dyn NuisanceProvider,
    t: usize,
    a: usize,
    a0: usize,
    rows: Option<&[usize]>,
    next: NextAction,
) -> Result<ResidualProblem> {
    if t == 0 || t > ds.horizon {
        return Err(TauqError::InvalidArgument(format!(
            "timestep {t} outside 1..={}",
            ds.horizon
        )));
    }
    if a == a0 || a >= ds.n_actions || a0 >= ds.n_actions {
        return Err(TauqError::InvalidArgument(format!(
            "contrast {a} vs {a0} is not valid for {} actions",
            ds.n_actions
        )));
    }
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..ds.len()).collect();
            &all
        }
    };
    for &i in rows {
        if i >= ds.len() {
            return Err(TauqError::InvalidArgument(format!(
                "row {i} outside the dataset"
            )));
        }
        let f = nuis.fold_of(i);
        if f >= nuis.n_folds() {
            return Err(TauqError::Config(format!("no nuisance model for fold {f}")));
        }
    }
    let gamma = ds.discount;
    let out: Vec<(f64, f64, usize)> = rows
        .par_iter()
        .map(|&i| {
            let tr = &ds.trajectories[i];
            let f = nuis.fold_of(i);
            let m = nuis.model(f);
            let s = tr.state(t);
            let cont = if t < ds.horizon && gamma > 0.0 {
                match next {
                    NextAction::Integrated => m.value(t + 1, tr.state(t + 1)),
                    NextAction::Observed => m.q(t + 1, tr.state(t + 1), tr.action(t + 1)),
                }
            } else {
                0.0
            };
            let y = tr.reward(t) + gamma * cont - m.m(t, s);
            let w = f64::from(u8::from(tr.action(t) == a)) - m.behavior_probs(t, s)[a];
            (y, w, f)
        })
        .collect();
    Ok(ResidualProblem {
        t,
        action: a,
        reference: a0,
        y: out.iter().map(|r| r.0).collect(),
        w: out.iter().map(|r| r.1).collect(),
        states: rows
            .iter()
            .map(|&i| ds.trajectories[i].state(t).to_vec())
            .collect(),
        trajectories: rows.to_vec(),
        folds: out.iter().map(|r| r.2).collect(),
    })
}

/// True when no row was scored by a model trained on its own trajectory.
pub fn verify_cross_fit(problem: &ResidualProblem, nuis: &dyn NuisanceProvider) -> bool {
    let sets: Vec<Option<HashSet<usize>>> = (0..nuis.n_folds())
        .map(|f| nuis.trained_on(f).map(|v| v.iter().copied().collect()))
        .collect();
    problem
        .trajectories
        .iter()
        .zip(&problem.folds)
        .all(|(i, f)| sets[*f].as_ref().is_none_or(|s| !s.contains(i)))
}

/// Residual weights with less variance than this are treated as an overlap failure.
pub const MIN_W_VARIANCE: f64 = 1e-6;

fn check_overlap(p: &ResidualProblem) -> Result<()> {
    let n = p.len() as f64;
    let mean = p.w.iter().sum::<f64>() / n;
    let var = p.w.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
    if !(var >= MIN_W_VARIANCE) {
        return Err(TauqError::Overlap(format!(
            "residual weights for action {} at t={} have variance {var:.3e}",
            p.action, p.t
        )));
    }
    Ok(())
}

/// Fits `τ̂_{a,t}` by minimizing `Σ_i (Y_i − W_i·τ(S_i))²` plus the regularizer.
/// Linear contrasts use the transformed design `W_i·ψ(S_i)` with the constant
/// column unpenalized; kernel contrasts use weights `W_i²` on the response `Y_i/W_i`.
pub fn fit_tau_t(
    problem: &ResidualProblem,
    basis: &FeatureBasis,
    reg: &RegressorSpec,
    opts: &SolverOptions,
    seed: u64,
) -> Result<Contrast> {
    Ok(fit_tau_joint(std::slice::from_ref(problem), basis, reg, opts, seed)?.remove(0))
}

/// Joint fit of several contrasts sharing `Y` and `S`:
/// `Σ_i (Y_i − Σ_a W_{a,i}·τ_a(S_i))²`.
pub fn fit_tau_joint(
    problems: &[ResidualProblem],
    basis: &FeatureBasis,
    reg: &RegressorSpec,
    opts: &SolverOptions,
    seed: u64,
) -> Result<Vec<Contrast>> {
    let first = problems
        .first()
        .ok_or_else(|| TauqError::InvalidArgument("no residual problems".into()))?;
    if first.is_empty() {
        return Err(TauqError::InvalidArgument("empty residual problem".into()));
    }
    for p in problems {
        if p.t != first.t || p.trajectories != first.trajectories || p.y != first.y {
            return Err(TauqError::InvalidArgument(
                "joint contrast fit needs problems over the same rows".into(),
            ));
        }
        check_overlap(p)?;
    }
    if let Some(s) = first.states.first() {
        if s.len() != basis.state_dim() {
            return Err(TauqError::Config(format!(
                "contrast basis over {} coordinates for states of dimension {}",
                basis.state_dim(),
                s.len()
            )));
        }
    }
    let n = first.len();
    let p = basis.output_dim();
    let psi: Vec<Vec<f64>> = first
        .states
        .iter()
        .map(|s| {
            let mut row = Vec::with_capacity(p);
            basis.featurize_into(s, 0, &mut row);
            row
        })
        .collect();

    if let RegressorSpec::Krr { .. } = reg {
        if problems.len() != 1 {
            return Err(TauqError::Config(
                "kernel contrasts support two actions only".into(),
            ));
        }
        let x = DMatrix::from_fn(n, p, |i, j| psi[i][j]);
        let w2: Vec<f64> = first.w.iter().map(|w| w * w).collect();
        let y: Vec<f64> = first
            .y
            .iter()
            .zip(&first.w)
            .map(|(y, w)| if *w != 0.0 { y / w } else { 0.0 })
            .collect();
        let (model, info) = fit_regressor(reg, &x, &y, Some(&w2), opts, seed)?;
        return Ok(vec![Contrast {
            action: first.action,
            model,
            info,
        }]);
    }

    let k = problems.len();
    let x = DMatrix::from_fn(n, k * p, |i, c| problems[c / p].w[i] * psi[i][c % p]);
    let mut pf = vec![1.0; k * p];
    if let Some(c) = basis.constant_index() {
        for b in 0..k {
            pf[b * p + c] = 0.0;
        }
    }
    let o = SolverOptions {
        fit_intercept: false,
        penalty_factor: Some(pf),
        ..opts.clone()
    };
    let (model, info) = fit_regressor(reg, &x, &first.y, None, &o, seed)?;
    let lin = model.as_linear().ok_or_else(|| {
        TauqError::Numerical("linear contrast fit returned a kernel model".into())
    })?;
    Ok(problems
        .iter()
        .enumerate()
        .map(|(b, prob)| {
            let coef = lin.coef[b * p..(b + 1) * p].to_vec();
            let support = lin
                .support
                .as_ref()
                .map(|s| s.iter().filter(|&&j| j / p == b).map(|&j| j % p).collect());
            Contrast {
                action: prob.action,
                model: FittedRegressor::Linear(LinearModel {
                    coef,
                    intercept: 0.0,
                    support,
                    converged: lin.converged,
                }),
                info: info.clone(),
            }
        })
        .collect())
}

/// Settings for [`evaluate_policy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub nuisance: NuisanceConfig,
    #[serde(default = "unpenalized")]
    pub tau_regularizer: RegressorSpec,
    /// Defaults to `[s, 1]`.
    #[serde(default)]
    pub tau_basis: Option<FeatureBasis>,
    #[serde(default)]
    pub next_action: NextAction,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub seed: u64,
}

fn default_folds() -> usize {
    5
}

pub fn unpenalized() -> RegressorSpec {
    RegressorSpec::Ridge { lambda: 0.0 }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            folds: default_folds(),
            nuisance: NuisanceConfig::default(),
            tau_regularizer: unpenalized(),
            tau_basis: None,
            next_action: NextAction::Integrated,
            solver: SolverOptions::default(),
            seed: 0,
        }
    }
}

fn tau_basis_for(basis: &Option<FeatureBasis>, ds: &Dataset) -> FeatureBasis {
    basis
        .clone()
        .unwrap_or_else(|| FeatureBasis::state_only(ds.state_dim))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub tau: TauModel,
    pub nuisances: NuisanceSet,
}

/// Cross-fitted evaluation of `policy`: nuisances per fold, then `τ̂_T, .., τ̂_1`
/// from the pooled held-out residual problems.
pub fn evaluate_policy(ds: &Dataset, policy: &PolicySpec, cfg: &EvalConfig) -> Result<Evaluation> {
    ds.validate()?;
    let folds = FoldAssignment::random(ds.len(), cfg.folds, derive_seed(cfg.seed, &[0xF01D5]))?;
    let nuisances = fit_nuisances(
        ds,
        &folds,
        policy,
        &cfg.nuisance,
        derive_seed(cfg.seed, &[0x1105]),
    )?;
    let tau = fit_tau_all(
        ds,
        &nuisances,
        &tau_basis_for(&cfg.tau_basis, ds),
        &cfg.tau_regularizer,
        cfg.next_action,
        &cfg.solver,
        cfg.seed,
    )?;
    Ok(Evaluation { tau, nuisances })
}

/// Contrast fits at every timestep from already fitted nuisances.
pub fn fit_tau_all(
    ds: &Dataset,
    nuis: &dyn NuisanceProvider,
    basis: &FeatureBasis,
    reg: &RegressorSpec,
    next: NextAction,
    opts: &SolverOptions,
    seed: u64,
) -> Result<TauModel> {
    let mut tau = TauModel::empty(ds.horizon, ds.n_actions, basis.clone());
    for t in (1..=ds.horizon).rev() {
        for c in fit_stage(ds, nuis, t, None, basis, reg, next, opts, seed)? {
            tau.set(t, c)?;
        }
    }
    Ok(tau)
}

/// Contrast fits at a single timestep.
#[allow(clippy::too_many_arguments)]
pub fn fit_stage(
    ds: &Dataset,
    nuis: &dyn NuisanceProvider,
    t: usize,
    rows: Option<&[usize]>,
    basis: &FeatureBasis,
    reg: &RegressorSpec,
    next: NextAction,
    opts: &SolverOptions,
    seed: u64,
) -> Result<Vec<Contrast>> {
    let run = || -> Result<Vec<Contrast>> {
        let problems = (1..ds.n_actions)
            .map(|a| multi_action_residual(ds, nuis, t, a, 0, rows, next))
            .collect::<Result<Vec<_>>>()?;
        fit_tau_joint(
            &problems,
            basis,
            reg,
            opts,
            derive_seed(seed, &[0x7A0, t as u64]),
        )
    };
    run().map_err(|e| e.at_stage(t, None))
}

/// `(1/n) Σ_i (Y_i − Σ_a W_{a,i} τ̂_{a,t}(S_i))²` over all trajectories.
pub fn empirical_loss(
    tau: &TauModel,
    nuis: &dyn NuisanceProvider,
    ds: &Dataset,
    t: usize,
    next: NextAction,
) -> Result<f64> {
    let problems = (0..ds.n_actions)
        .filter(|&a| a != tau.reference_action)
        .map(|a| multi_action_residual(ds, nuis, t, a, tau.reference_action, None, next))
        .collect::<Result<Vec<_>>>()?;
    let n = ds.len();
    let mut total = 0.0;
    for i in 0..n {
        let s = &problems[0].states[i];
        let fit: f64 = problems
            .iter()
            .map(|p| p.w[i] * tau.contrast(t, s, p.action))
            .sum();
        total += (problems[0].y[i] - fit).powi(2);
    }
    Ok(total / n as f64)
}

/// Settings for [`optimize_policy`]; the three-fold split is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    #[serde(default)]
    pub nuisance: NuisanceConfig,
    #[serde(default = "unpenalized")]
    pub tau_regularizer: RegressorSpec,
    #[serde(default)]
    pub tau_basis: Option<FeatureBasis>,
    #[serde(default)]
    pub next_action: NextAction,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            nuisance: NuisanceConfig::default(),
            tau_regularizer: unpenalized(),
            tau_basis: None,
            next_action: NextAction::Integrated,
            solver: SolverOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimization {
    pub tau: TauModel,
    pub policy: PolicySpec,
    pub assignment: FoldAssignment,
    /// 1-based fold each `τ̂_t` was fit on, indexed by `t - 1`.
    pub stage_fold: Vec<usize>,
}

/// 1-based fold that fits `τ̂_t`: 2 for odd `t`, 3 for even `t`.
pub fn stage_fold(t: usize) -> usize {
    if t % 2 == 1 {
        2
    } else {
        3
    }
}

struct SingleFold<'a> {
    model: &'a FoldNuisance,
}

impl NuisanceProvider for SingleFold<'_> {
    fn n_folds(&self) -> usize {
        1
    }
    fn fold_of(&self, _i: usize) -> usize {
        0
    }
    fn model(&self, _fold: usize) -> &dyn NuisanceModel {
        self.model
    }
    fn trained_on(&self, _fold: usize) -> Option<&[usize]> {
        Some(&self.model.training)
    }
}

/// Greedy optimization over three folds: nuisances on fold 1, `τ̂_t` on fold
/// [`stage_fold`]`(t)`, with `Q̂_t` refit on fold 1 under the greedy policy for
/// `t + 1..T` at every step of the backward sweep.
pub fn optimize_policy(ds: &Dataset, cfg: &OptConfig) -> Result<Optimization> {
    ds.validate()?;
    let assignment = FoldAssignment::random(ds.len(), 3, derive_seed(cfg.seed, &[0xF01D3]))?;
    let d1 = assignment.members(0);
    let basis = tau_basis_for(&cfg.tau_basis, ds);
    let q_basis = cfg.nuisance.q_basis_for(ds);
    let behavior = fit_behavior_on(
        ds,
        &d1,
        &cfg.nuisance.behavior,
        cfg.nuisance.behavior_ridge,
        cfg.nuisance.clip,
    )?;
    let mut tau = TauModel::empty(ds.horizon, ds.n_actions, basis.clone());
    let greedy = |tau: &TauModel| PolicySpec::Greedy {
        tau: Box::new(tau.clone()),
    };
    let mut q = QModel::empty(q_basis, ds.horizon, ds.n_actions, greedy(&tau));
    let mut stage_folds = vec![0; ds.horizon];
    for t in (1..=ds.horizon).rev() {
        q.policy = greedy(&tau);
        q.fit_stage(
            ds,
            &d1,
            t,
            &cfg.nuisance.q_regressor,
            &cfg.nuisance.solver,
            derive_seed(cfg.seed, &[0x0F0E, t as u64]),
        )?;
        let fold = FoldNuisance {
            q: q.clone(),
            behavior: behavior.clone(),
            m_mode: MMode::PlugIn,
            m_models: Vec::new(),
            training: d1.clone(),
            noise: None,
        };
        let provider = SingleFold { model: &fold };
        let k = stage_fold(t);
        stage_folds[t - 1] = k;
        let rows = assignment.members(k - 1);
        let contrasts = fit_stage(
            ds,
            &provider,
            t,
            Some(&rows),
            &basis,
            &cfg.tau_regularizer,
            cfg.next_action,
            &cfg.solver,
            cfg.seed,
        )?;
        for c in contrasts {
            tau.set(t, c)?;
        }
    }
    let policy = greedy(&tau);
    Ok(Optimization {
        tau,
        policy,
        assignment,
        stage_fold: stage_folds,
    })
}
