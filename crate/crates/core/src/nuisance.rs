//! Nuisance functions `η = (Q_t, m_t, π^b_t)`: fitted-Q evaluation, behavior-policy
//! classification, the `m̂` construction, noise injection and cross-fitted sets.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::LinearQ;
use crate::error::{Result, TauqError};
use crate::policy::PolicySpec;
use crate::regress::{
    fit_logistic, fit_multinomial, fit_regressor, FittedRegressor, LogisticModel, RegressorSpec,
    SolverOptions,
};
use crate::rng::{derive_seed, hash_reals, substream};
use crate::types::{Dataset, FeatureBasis, FoldAssignment};

/// Read access to one fold's nuisance estimates.
pub trait NuisanceModel: Sync {
    fn horizon(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// `Q̂_t(s, a)`; zero for `t > T`.
    fn q(&self, t: usize, s: &[f64], a: usize) -> f64;
    /// Clipped `π̂^b_t(·|s)`.
    fn behavior_probs(&self, t: usize, s: &[f64]) -> Vec<f64>;
    fn m(&self, t: usize, s: &[f64]) -> f64;
    /// Policy the Q-functions evaluate.
    fn target_policy(&self) -> &PolicySpec;

    /// `Σ_a π(a|s) Q̂_t(s, a)`; zero for `t > T`.
    fn value(&self, t: usize, s: &[f64]) -> f64 {
        if t > self.horizon() {
            return 0.0;
        }
        let p = self.target_policy().action_probabilities(t, s);
        p.iter()
            .enumerate()
            .filter(|(_, pa)| **pa > 0.0)
            .map(|(a, pa)| pa * self.q(t, s, a))
            .sum()
    }

    /// `Σ_a π̂^b(a|s) Q̂_t(s, a)`
    fn plug_in_m(&self, t: usize, s: &[f64]) -> f64 {
        let p = self.behavior_probs(t, s);
        p.iter()
            .enumerate()
            .map(|(a, pa)| pa * self.q(t, s, a))
            .sum()
    }
}

/// Cross-fitted nuisances: which model scores which trajectory.
pub trait NuisanceProvider: Sync {
    fn n_folds(&self) -> usize;
    /// Fold whose held-out model scores trajectory `i`.
    fn fold_of(&self, i: usize) -> usize;
    fn model(&self, fold: usize) -> &dyn NuisanceModel;
    /// Trajectories the fold's models were trained on, when recorded.
    fn trained_on(&self, fold: usize) -> Option<&[usize]>;
}

/// Per-timestep fitted `Q̂_t` over a state-action basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QModel {
    pub basis: FeatureBasis,
    pub horizon: usize,
    pub n_actions: usize,
    /// `stages[t - 1]`; an unfitted stage predicts 0.
    pub stages: Vec<Option<FittedRegressor>>,
    pub policy: PolicySpec,
}

impl QModel {
    pub fn empty(
        basis: FeatureBasis,
        horizon: usize,
        n_actions: usize,
        policy: PolicySpec,
    ) -> Self {
        QModel {
            basis,
            horizon,
            n_actions,
            stages: vec![None; horizon],
            policy,
        }
    }

    pub fn q(&self, t: usize, s: &[f64], a: usize) -> f64 {
        if t == 0 || t > self.horizon {
            return 0.0;
        }
        match &self.stages[t - 1] {
            Some(m) => {
                let mut row = Vec::with_capacity(self.basis.output_dim());
                self.basis.regression_row_into(s, a, &mut row);
                m.predict_row(&row)
            }
            None => 0.0,
        }
    }

    /// `Σ_a π_t(a|s) Q̂_t(s, a)` under `policy`.
    pub fn value_under(&self, policy: &PolicySpec, t: usize, s: &[f64]) -> f64 {
        if t > self.horizon {
            return 0.0;
        }
        let p = policy.action_probabilities(t, s);
        p.iter()
            .enumerate()
            .filter(|(_, pa)| **pa > 0.0)
            .map(|(a, pa)| pa * self.q(t, s, a))
            .sum()
    }

    /// Fits stage `t` by regressing `R_t + γ Σ_a' π(a'|S_{t+1}) Q̂_{t+1}(S_{t+1}, a')` on
    /// `φ(S_t, A_t)`, using the already-fitted stage `t + 1` and `self.policy`.
    pub fn fit_stage(
        &mut self,
        ds: &Dataset,
        idx: &[usize],
        t: usize,
        spec: &RegressorSpec,
        opts: &SolverOptions,
        seed: u64,
    ) -> Result<()> {
        if idx.is_empty() {
            return Err(TauqError::InvalidArgument(
                "no training trajectories".into(),
            ));
        }
        let p = self.basis.regression_dim();
        let gamma = ds.discount;
        let mut x = DMatrix::<f64>::zeros(idx.len(), p);
        let mut y = Vec::with_capacity(idx.len());
        let mut row = Vec::with_capacity(self.basis.output_dim());
        for (r, &i) in idx.iter().enumerate() {
            let tr = &ds.trajectories[i];
            self.basis
                .regression_row_into(tr.state(t), tr.action(t), &mut row);
            for (j, v) in row.iter().enumerate() {
                x[(r, j)] = *v;
            }
            let cont = if t < self.horizon && gamma > 0.0 {
                gamma * self.value_under(&self.policy, t + 1, tr.state(t + 1))
            } else {
                0.0
            };
            y.push(tr.reward(t) + cont);
        }
        let opts = q_solver_options(&self.basis, opts);
        let (model, _) =
            fit_regressor(spec, &x, &y, None, &opts, seed).map_err(|e| e.at_stage(t, None))?;
        self.stages[t - 1] = Some(model);
        Ok(())
    }
}

/// Solver options for a Q regression over `basis`: intercept from the constant
/// feature, action indicators unpenalized.
pub fn q_solver_options(basis: &FeatureBasis, opts: &SolverOptions) -> SolverOptions {
    let free = basis.unpenalized_regression_columns();
    let mut o = opts.clone();
    o.fit_intercept = basis.has_constant();
    if !free.is_empty() {
        let mut pf = vec![1.0; basis.regression_dim()];
        for j in free {
            pf[j] = 0.0;
        }
        o.penalty_factor = Some(pf);
    }
    o
}

/// Fitted-Q evaluation of `policy` on the listed trajectories, `t = T..1`.
pub fn fqe_on(
    ds: &Dataset,
    idx: &[usize],
    policy: &PolicySpec,
    basis: &FeatureBasis,
    spec: &RegressorSpec,
    opts: &SolverOptions,
    seed: u64,
) -> Result<QModel> {
    policy.validate(ds.state_dim, ds.n_actions, ds.horizon)?;
    check_basis(ds, basis)?;
    let mut q = QModel::empty(basis.clone(), ds.horizon, ds.n_actions, policy.clone());
    for t in (1..=ds.horizon).rev() {
        q.fit_stage(
            ds,
            idx,
            t,
            spec,
            opts,
            derive_seed(seed, &[0x0F0E, t as u64]),
        )?;
    }
    Ok(q)
}

/// One [`QModel`] per fold, each trained on the other folds.
pub fn fqe(
    ds: &Dataset,
    folds: &FoldAssignment,
    policy: &PolicySpec,
    basis: &FeatureBasis,
    spec: &RegressorSpec,
    opts: &SolverOptions,
    seed: u64,
) -> Result<Vec<QModel>> {
    (0..folds.k)
        .into_par_iter()
        .map(|f| {
            fqe_on(
                ds,
                &folds.complement(f),
                policy,
                basis,
                spec,
                opts,
                derive_seed(seed, &[f as u64]),
            )
            .map_err(|e| with_fold(e, f))
        })
        .collect()
}

fn with_fold(e: TauqError, f: usize) -> TauqError {
    match e {
        TauqError::Stage { t, source, .. } => TauqError::Stage {
            t,
            fold: Some(f),
            source,
        },
        other => other,
    }
}

fn check_basis(ds: &Dataset, basis: &FeatureBasis) -> Result<()> {
    if basis.state_dim() != ds.state_dim {
        return Err(TauqError::Config(format!(
            "basis over {} state coordinates for a dataset with {}",
            basis.state_dim(),
            ds.state_dim
        )));
    }
    match basis {
        FeatureBasis::InteractedLinear { n_actions, .. }
        | FeatureBasis::CustomGrid { n_actions, .. }
            if *n_actions != ds.n_actions =>
        {
            Err(TauqError::Config(
                "basis action count does not match the dataset".into(),
            ))
        }
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum BehaviorMode {
    Pooled,
    PerTimestep,
    Known { policy: PolicySpec },
}

impl Default for BehaviorMode {
    fn default() -> Self {
        BehaviorMode::Pooled
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BehaviorFit {
    Pooled { model: LogisticModel },
    PerTimestep { models: Vec<LogisticModel> },
    Known { policy: PolicySpec },
}

/// `π̂^b` with propensities clipped to `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorModel {
    pub fit: BehaviorFit,
    pub n_actions: usize,
    pub clip: (f64, f64),
    /// True when some training split lacked an action and a constant model was used.
    #[serde(default)]
    pub degenerate: bool,
}

impl BehaviorModel {
    pub fn probs(&self, t: usize, s: &[f64]) -> Vec<f64> {
        let raw = match &self.fit {
            BehaviorFit::Pooled { model } => model.predict_proba_row(s),
            BehaviorFit::PerTimestep { models } => {
                models[(t - 1).min(models.len() - 1)].predict_proba_row(s)
            }
            BehaviorFit::Known { policy } => policy.action_probabilities(t, s),
        };
        clip_probs(raw, self.clip)
    }
}

/// Binary: clip `p(1)` and set `p(0) = 1 − p(1)`. More actions: clip then renormalize.
pub fn clip_probs(mut p: Vec<f64>, (lo, hi): (f64, f64)) -> Vec<f64> {
    if p.len() == 2 {
        let p1 = p[1].clamp(lo, hi);
        return vec![1.0 - p1, p1];
    }
    p.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

pub const DEFAULT_CLIP: (f64, f64) = (0.01, 0.99);

/// Fits `π̂^b` on the listed trajectories.
pub fn fit_behavior_on(
    ds: &Dataset,
    idx: &[usize],
    mode: &BehaviorMode,
    ridge: f64,
    clip: (f64, f64),
) -> Result<BehaviorModel> {
    if !(clip.0 > 0.0 && clip.0 < clip.1 && clip.1 < 1.0) {
        return Err(TauqError::Config(
            "propensity clip must satisfy 0 < lo < hi < 1".into(),
        ));
    }
    let k = ds.n_actions;
    let opts = SolverOptions::default();
    let fit_rows = |rows: &[(usize, usize)]| -> Result<LogisticModel> {
        let x = DMatrix::from_fn(rows.len(), ds.state_dim, |r, j| {
            let (i, t) = rows[r];
            ds.trajectories[i].state(t)[j]
        });
        let y: Vec<usize> = rows
            .iter()
            .map(|&(i, t)| ds.trajectories[i].action(t))
            .collect();
        if k == 2 {
            fit_logistic(&x, &y, None, ridge, &opts)
        } else {
            fit_multinomial(&x, &y, k, None, ridge, &opts)
        }
    };
    let fit = match mode {
        BehaviorMode::Known { policy } => {
            policy.validate(ds.state_dim, k, ds.horizon)?;
            BehaviorFit::Known {
                policy: policy.clone(),
            }
        }
        BehaviorMode::Pooled => {
            let rows: Vec<(usize, usize)> = idx
                .iter()
                .flat_map(|&i| (1..=ds.horizon).map(move |t| (i, t)))
                .collect();
            BehaviorFit::Pooled {
                model: fit_rows(&rows)?,
            }
        }
        BehaviorMode::PerTimestep => {
            let models = (1..=ds.horizon)
                .map(|t| {
                    let rows: Vec<(usize, usize)> = idx.iter().map(|&i| (i, t)).collect();
                    fit_rows(&rows).map_err(|e| e.at_stage(t, None))
                })
                .collect::<Result<Vec<_>>>()?;
            BehaviorFit::PerTimestep { models }
        }
    };
    let degenerate = match &fit {
        BehaviorFit::Pooled { model } => model.constant.is_some(),
        BehaviorFit::PerTimestep { models } => models.iter().any(|m| m.constant.is_some()),
        BehaviorFit::Known { .. } => false,
    };
    Ok(BehaviorModel {
        fit,
        n_actions: k,
        clip,
        degenerate,
    })
}

/// One behavior model per fold, each blind to its own fold.
pub fn fit_behavior(
    ds: &Dataset,
    folds: &FoldAssignment,
    mode: &BehaviorMode,
    ridge: f64,
    clip: (f64, f64),
) -> Result<Vec<BehaviorModel>> {
    (0..folds.k)
        .map(|f| fit_behavior_on(ds, &folds.complement(f), mode, ridge, clip))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MMode {
    /// `m̂_t(s) = Σ_a π̂^b(a|s) Q̂_t(s, a)`
    #[default]
    PlugIn,
    /// Direct regression of `R_t + γ V̂_{t+1}(S_{t+1})` on the state (with intercept).
    Regression,
}

/// Additive Gaussian noise on every nuisance prediction, keyed by the query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sd: f64,
    pub seed: u64,
}

/// `n^{-1/4}`
pub fn noise_sd(n: usize) -> f64 {
    (n as f64).powf(-0.25)
}

pub const TAG_Q: u64 = 1;
pub const TAG_M: u64 = 2;
pub const TAG_B: u64 = 3;

impl NoiseSpec {
    /// The same `(tag, t, a, s)` always receives the same draw.
    pub fn draw(&self, tag: u64, t: usize, a: usize, s: &[f64]) -> f64 {
        let mut rng = substream(self.seed, &[tag, t as u64, a as u64, hash_reals(s)]);
        self.sd * rng.sample::<f64, _>(StandardNormal)
    }
}

/// Fitted nuisances for one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldNuisance {
    pub q: QModel,
    pub behavior: BehaviorModel,
    pub m_mode: MMode,
    /// Regression-mode `m̂_t` per timestep.
    #[serde(default)]
    pub m_models: Vec<FittedRegressor>,
    /// Trajectory indices the models were trained on.
    pub training: Vec<usize>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

impl NuisanceModel for FoldNuisance {
    fn horizon(&self) -> usize {
        self.q.horizon
    }

    fn n_actions(&self) -> usize {
        self.q.n_actions
    }

    fn q(&self, t: usize, s: &[f64], a: usize) -> f64 {
        let v = self.q.q(t, s, a);
        match &self.noise {
            Some(n) if t <= self.q.horizon => v + n.draw(TAG_Q, t, a, s),
            _ => v,
        }
    }

    fn behavior_probs(&self, t: usize, s: &[f64]) -> Vec<f64> {
        let p = self.behavior.probs(t, s);
        match &self.noise {
            Some(n) => {
                let noisy: Vec<f64> = p
                    .iter()
                    .enumerate()
                    .map(|(a, v)| v + n.draw(TAG_B, t, a, s))
                    .collect();
                if noisy.len() == 2 {
                    clip_probs(noisy, self.behavior.clip)
                } else {
                    let mut c: Vec<f64> =
                        noisy.iter().map(|v| v.max(self.behavior.clip.0)).collect();
                    let z: f64 = c.iter().sum();
                    c.iter_mut().for_each(|v| *v /= z);
                    clip_probs(c, self.behavior.clip)
                }
            }
            None => p,
        }
    }

    fn m(&self, t: usize, s: &[f64]) -> f64 {
        let base = match self.m_mode {
            MMode::PlugIn => {
                let p = self.behavior.probs(t, s);
                p.iter()
                    .enumerate()
                    .map(|(a, pa)| pa * self.q.q(t, s, a))
                    .sum()
            }
            MMode::Regression => self.m_models[t - 1].predict_row(s),
        };
        match &self.noise {
            Some(n) => base + n.draw(TAG_M, t, 0, s),
            None => base,
        }
    }

    fn target_policy(&self) -> &PolicySpec {
        &self.q.policy
    }
}

/// Settings for [`fit_nuisances`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig {
    /// Defaults to one linear Q per action over the interacted basis.
    #[serde(default)]
    pub q_basis: Option<FeatureBasis>,
    #[serde(default = "RegressorSpec::default_q")]
    pub q_regressor: RegressorSpec,
    #[serde(default)]
    pub behavior: BehaviorMode,
    #[serde(default = "default_behavior_ridge")]
    pub behavior_ridge: f64,
    #[serde(default = "default_clip")]
    pub clip: (f64, f64),
    #[serde(default)]
    pub m_mode: MMode,
    #[serde(default = "RegressorSpec::default_q")]
    pub m_regressor: RegressorSpec,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn default_behavior_ridge() -> f64 {
    1e-3
}
fn default_clip() -> (f64, f64) {
    DEFAULT_CLIP
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            q_basis: None,
            q_regressor: RegressorSpec::default_q(),
            behavior: BehaviorMode::Pooled,
            behavior_ridge: default_behavior_ridge(),
            clip: DEFAULT_CLIP,
            m_mode: MMode::PlugIn,
            m_regressor: RegressorSpec::default_q(),
            solver: SolverOptions::default(),
        }
    }
}

impl NuisanceConfig {
    pub fn q_basis_for(&self, ds: &Dataset) -> FeatureBasis {
        self.q_basis
            .clone()
            .unwrap_or_else(|| FeatureBasis::per_action_linear(ds.state_dim, ds.n_actions))
    }
}

/// Fits all nuisances for one fold on the trajectories `idx`.
pub fn fit_fold_nuisance(
    ds: &Dataset,
    idx: &[usize],
    policy: &PolicySpec,
    cfg: &NuisanceConfig,
    seed: u64,
) -> Result<FoldNuisance> {
    let basis = cfg.q_basis_for(ds);
    let q = fqe_on(
        ds,
        idx,
        policy,
        &basis,
        &cfg.q_regressor,
        &cfg.solver,
        derive_seed(seed, &[1]),
    )?;
    let behavior = fit_behavior_on(ds, idx, &cfg.behavior, cfg.behavior_ridge, cfg.clip)?;
    let m_models = match cfg.m_mode {
        MMode::PlugIn => Vec::new(),
        MMode::Regression => fit_m_regression(ds, idx, &q, &cfg.m_regressor, &cfg.solver, seed)?,
    };
    Ok(FoldNuisance {
        q,
        behavior,
        m_mode: cfg.m_mode,
        m_models,
        training: idx.to_vec(),
        noise: None,
    })
}

fn fit_m_regression(
    ds: &Dataset,
    idx: &[usize],
    q: &QModel,
    spec: &RegressorSpec,
    opts: &SolverOptions,
    seed: u64,
) -> Result<Vec<FittedRegressor>> {
    let d = ds.state_dim;
    (1..=ds.horizon)
        .map(|t| {
            let x = DMatrix::from_fn(idx.len(), d, |r, j| ds.trajectories[idx[r]].state(t)[j]);
            let y: Vec<f64> = idx
                .iter()
                .map(|&i| {
                    let tr = &ds.trajectories[i];
                    tr.reward(t) + ds.discount * q.value_under(&q.policy, t + 1, tr.state(t + 1))
                })
                .collect();
            let o = SolverOptions {
                fit_intercept: true,
                penalty_factor: None,
                ..opts.clone()
            };
            fit_regressor(spec, &x, &y, None, &o, derive_seed(seed, &[2, t as u64]))
                .map(|r| r.0)
                .map_err(|e| e.at_stage(t, None))
        })
        .collect()
}

/// Cross-fitted nuisance set: fold `f`'s models never saw fold `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSet {
    pub assignment: FoldAssignment,
    pub folds: Vec<FoldNuisance>,
}

pub fn fit_nuisances(
    ds: &Dataset,
    folds: &FoldAssignment,
    policy: &PolicySpec,
    cfg: &NuisanceConfig,
    seed: u64,
) -> Result<NuisanceSet> {
    if folds.n() != ds.len() {
        return Err(TauqError::Config(
            "fold assignment does not match the dataset".into(),
        ));
    }
    policy.validate(ds.state_dim, ds.n_actions, ds.horizon)?;
    let fits = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            fit_fold_nuisance(
                ds,
                &folds.complement(f),
                policy,
                cfg,
                derive_seed(seed, &[0xF0, f as u64]),
            )
            .map_err(|e| with_fold(e, f))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NuisanceSet {
        assignment: folds.clone(),
        folds: fits,
    })
}

/// Copy of `set` whose predictions carry `N(0, n^{-1/4})` noise.
pub fn perturb_nuisances(set: &NuisanceSet, n: usize, seed: u64) -> NuisanceSet {
    let mut out = set.clone();
    for (f, fold) in out.folds.iter_mut().enumerate() {
        fold.noise = Some(NoiseSpec {
            sd: noise_sd(n),
            seed: derive_seed(seed, &[0x4015E, f as u64]),
        });
    }
    out
}

impl NuisanceProvider for NuisanceSet {
    fn n_folds(&self) -> usize {
        self.folds.len()
    }

    fn fold_of(&self, i: usize) -> usize {
        self.assignment.fold_of[i]
    }

    fn model(&self, fold: usize) -> &dyn NuisanceModel {
        &self.folds[fold]
    }

    fn trained_on(&self, fold: usize) -> Option<&[usize]> {
        Some(&self.folds[fold].training)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheManifest {
    assignment: FoldAssignment,
    folds: Vec<FoldMeta>,
}

#[derive(Serialize, Deserialize)]
struct FoldMeta {
    basis: FeatureBasis,
    horizon: usize,
    n_actions: usize,
    policy: PolicySpec,
    m_mode: MMode,
    training: Vec<usize>,
    noise: Option<NoiseSpec>,
}

impl NuisanceSet {
    /// Writes `manifest.json` plus `fold-{f}/{q,m}-t{t}.json` and `fold-{f}/behavior.json`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = CacheManifest {
            assignment: self.assignment.clone(),
            folds: self
                .folds
                .iter()
                .map(|f| FoldMeta {
                    basis: f.q.basis.clone(),
                    horizon: f.q.horizon,
                    n_actions: f.q.n_actions,
                    policy: f.q.policy.clone(),
                    m_mode: f.m_mode,
                    training: f.training.clone(),
                    noise: f.noise,
                })
                .collect(),
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        for (k, f) in self.folds.iter().enumerate() {
            let fd = dir.join(format!("fold-{k}"));
            std::fs::create_dir_all(&fd)?;
            write_json(&fd.join("behavior.json"), &f.behavior)?;
            for (t, stage) in f.q.stages.iter().enumerate() {
                write_json(&fd.join(format!("q-t{}.json", t + 1)), stage)?;
            }
            for (t, m) in f.m_models.iter().enumerate() {
                write_json(&fd.join(format!("m-t{}.json", t + 1)), m)?;
            }
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let manifest: CacheManifest = read_json(&dir.join("manifest.json"))?;
        let mut folds = Vec::with_capacity(manifest.folds.len());
        for (k, meta) in manifest.folds.into_iter().enumerate() {
            let fd = dir.join(format!("fold-{k}"));
            let behavior: BehaviorModel = read_json(&fd.join("behavior.json"))?;
            let stages = (1..=meta.horizon)
                .map(|t| read_json(&fd.join(format!("q-t{t}.json"))))
                .collect::<Result<Vec<Option<FittedRegressor>>>>()?;
            let m_models = match meta.m_mode {
                MMode::PlugIn => Vec::new(),
                MMode::Regression => (1..=meta.horizon)
                    .map(|t| read_json(&fd.join(format!("m-t{t}.json"))))
                    .collect::<Result<Vec<_>>>()?,
            };
            folds.push(FoldNuisance {
                q: QModel {
                    basis: meta.basis,
                    horizon: meta.horizon,
                    n_actions: meta.n_actions,
                    stages,
                    policy: meta.policy,
                },
                behavior,
                m_mode: meta.m_mode,
                m_models,
                training: meta.training,
                noise: meta.noise,
            });
        }
        Ok(NuisanceSet {
            assignment: manifest.assignment,
            folds,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(f, v)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}

/// True nuisances: closed-form `Q` and the known behavior policy, used for every trajectory.
#[derive(Debug, Clone)]
pub struct OracleNuisance {
    pub q: LinearQ,
    pub behavior: PolicySpec,
    pub target: PolicySpec,
    pub n_actions: usize,
    pub clip: (f64, f64),
    pub noise: Option<NoiseSpec>,
}

impl OracleNuisance {
    pub fn new(q: LinearQ, behavior: PolicySpec, target: PolicySpec) -> Self {
        let n_actions = behavior.n_actions();
        OracleNuisance {
            q,
            behavior,
            target,
            n_actions,
            clip: DEFAULT_CLIP,
            noise: None,
        }
    }
}

impl NuisanceModel for OracleNuisance {
    fn horizon(&self) -> usize {
        self.q.horizon()
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn q(&self, t: usize, s: &[f64], a: usize) -> f64 {
        let v = self.q.q(t, s, a);
        match &self.noise {
            Some(n) if t <= self.q.horizon() => v + n.draw(TAG_Q, t, a, s),
            _ => v,
        }
    }

    fn behavior_probs(&self, t: usize, s: &[f64]) -> Vec<f64> {
        clip_probs(self.behavior.action_probabilities(t, s), self.clip)
    }

    fn m(&self, t: usize, s: &[f64]) -> f64 {
        self.plug_in_m(t, s)
    }

    fn target_policy(&self) -> &PolicySpec {
        &self.target
    }
}

impl NuisanceProvider for OracleNuisance {
    fn n_folds(&self) -> usize {
        1
    }

    fn fold_of(&self, _i: usize) -> usize {
        0
    }

    fn model(&self, _fold: usize) -> &dyn NuisanceModel {
        self
    }

    fn trained_on(&self, _fold: usize) -> Option<&[usize]> {
        None
    }
}
