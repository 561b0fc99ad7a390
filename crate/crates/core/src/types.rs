//! Offline data model: trajectories, datasets, fold partitions and feature bases.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TauqError};
use crate::rng;

/// One episode: states `S_1..S_{T+1}`, actions `A_1..A_T`, rewards `R_1..R_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    /// State at 1-based timestep `t` (`t = T + 1` is the terminal state).
    #[inline]
    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t - 1]
    }

    #[inline]
    pub fn action(&self, t: usize) -> usize {
        self.actions[t - 1]
    }

    #[inline]
    pub fn reward(&self, t: usize) -> f64 {
        self.rewards[t - 1]
    }
}

/// The offline dataset `D` of `n` i.i.d. trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub horizon: usize,
    pub state_dim: usize,
    pub n_actions: usize,
    pub discount: f64,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(
        horizon: usize,
        state_dim: usize,
        n_actions: usize,
        discount: f64,
        trajectories: Vec<Trajectory>,
    ) -> Result<Self> {
        let ds = Dataset {
            horizon,
            state_dim,
            n_actions,
            discount,
            trajectories,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(TauqError::InvalidArgument(
                "dataset has no trajectories".into(),
            ));
        }
        if self.horizon == 0 || self.state_dim == 0 {
            return Err(TauqError::Config(
                "horizon and state_dim must be positive".into(),
            ));
        }
        if self.n_actions < 2 {
            return Err(TauqError::Config(
                "at least two actions are required".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(TauqError::Config(format!(
                "discount {} outside [0, 1]",
                self.discount
            )));
        }
        for (i, tr) in self.trajectories.iter().enumerate() {
            if tr.states.len() != self.horizon + 1
                || tr.actions.len() != self.horizon
                || tr.rewards.len() != self.horizon
            {
                return Err(TauqError::Config(format!(
                    "trajectory {i} lengths ({}, {}, {}) inconsistent with horizon {}",
                    tr.states.len(),
                    tr.actions.len(),
                    tr.rewards.len(),
                    self.horizon
                )));
            }
            if let Some(s) = tr.states.iter().find(|s| s.len() != self.state_dim) {
                return Err(TauqError::Config(format!(
                    "trajectory {i} has a state of dimension {} (expected {})",
                    s.len(),
                    self.state_dim
                )));
            }
            if let Some(a) = tr.actions.iter().find(|&&a| a >= self.n_actions) {
                return Err(TauqError::Config(format!(
                    "trajectory {i} has action {a} outside 0..{}",
                    self.n_actions
                )));
            }
            if tr.rewards.iter().any(|r| !r.is_finite())
                || tr.states.iter().flatten().any(|x| !x.is_finite())
            {
                return Err(TauqError::InvalidArgument(format!(
                    "trajectory {i} contains non-finite values"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Sub-dataset made of the listed trajectories, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            horizon: self.horizon,
            state_dim: self.state_dim,
            n_actions: self.n_actions,
            discount: self.discount,
            trajectories: indices
                .iter()
                .map(|&i| self.trajectories[i].clone())
                .collect(),
        }
    }
}

/// Trajectory-level partition into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
}

impl FoldAssignment {
    /// Uniformly random, balanced partition of `n` trajectories into `k` folds.
    pub fn random(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(TauqError::InvalidArgument(format!(
                "need at least 2 folds, got {k}"
            )));
        }
        if k > n {
            return Err(TauqError::InvalidArgument(format!(
                "cannot split {n} trajectories into {k} folds"
            )));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng::substream(seed, &[0xF01D]));
        let mut fold_of = vec![0; n];
        for (j, &i) in perm.iter().enumerate() {
            fold_of[i] = j % k;
        }
        Ok(FoldAssignment { fold_of, k })
    }

    /// Builds an assignment from explicit fold ids.
    pub fn from_labels(fold_of: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(f) = fold_of.iter().find(|&&f| f >= k) {
            return Err(TauqError::InvalidArgument(format!(
                "fold id {f} outside 0..{k}"
            )));
        }
        Ok(FoldAssignment { fold_of, k })
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    /// Trajectory indices held out in fold `f`.
    pub fn members(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == f).collect()
    }

    /// Trajectory indices used to train the nuisances scored on fold `f`.
    pub fn complement(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] != f).collect()
    }
}

/// Entry point matching the data-model operation: partition a dataset into folds.
pub fn assign_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    FoldAssignment::random(dataset.len(), k, seed)
}

/// Feature maps for Q-functions (state-action) and contrasts (state only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureBasis {
    /// `[s, s·1{a=1}, ..., s·1{a=K-1}, 1]`, optionally followed by the action
    /// indicators `1{a=1}, ..., 1{a=K-1}` (a separate intercept per action).
    InteractedLinear {
        state_dim: usize,
        n_actions: usize,
        #[serde(default)]
        action_intercept: bool,
    },
    /// `[s, 1]`; ignores the action.
    LinearStateOnly { state_dim: usize },
    /// One-hot of (nearest grid point, action). No constant column.
    CustomGrid {
        points: Vec<Vec<f64>>,
        n_actions: usize,
    },
}

impl FeatureBasis {
    pub fn interacted(state_dim: usize) -> Self {
        FeatureBasis::InteractedLinear {
            state_dim,
            n_actions: 2,
            action_intercept: false,
        }
    }

    /// Interacted basis with per-action intercepts, i.e. one linear Q per action.
    pub fn per_action_linear(state_dim: usize, n_actions: usize) -> Self {
        FeatureBasis::InteractedLinear {
            state_dim,
            n_actions,
            action_intercept: true,
        }
    }

    pub fn state_only(state_dim: usize) -> Self {
        FeatureBasis::LinearStateOnly { state_dim }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            FeatureBasis::InteractedLinear { state_dim, .. }
            | FeatureBasis::LinearStateOnly { state_dim } => *state_dim,
            FeatureBasis::CustomGrid { points, .. } => points.first().map_or(0, Vec::len),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureBasis::InteractedLinear {
                state_dim,
                n_actions,
                action_intercept,
            } => {
                let extra = if *action_intercept { n_actions - 1 } else { 0 };
                state_dim * n_actions + 1 + extra
            }
            FeatureBasis::LinearStateOnly { state_dim } => state_dim + 1,
            FeatureBasis::CustomGrid { points, n_actions } => points.len() * n_actions,
        }
    }

    /// Position of the constant feature, if the basis carries one.
    pub fn constant_index(&self) -> Option<usize> {
        match self {
            FeatureBasis::InteractedLinear {
                state_dim,
                n_actions,
                ..
            } => Some(state_dim * n_actions),
            FeatureBasis::LinearStateOnly { state_dim } => Some(*state_dim),
            FeatureBasis::CustomGrid { .. } => None,
        }
    }

    pub fn has_constant(&self) -> bool {
        self.constant_index().is_some()
    }

    fn n_actions(&self) -> Option<usize> {
        match self {
            FeatureBasis::InteractedLinear { n_actions, .. }
            | FeatureBasis::CustomGrid { n_actions, .. } => Some(*n_actions),
            FeatureBasis::LinearStateOnly { .. } => None,
        }
    }

    fn check(&self, s: &[f64], a: usize) -> Result<()> {
        if s.len() != self.state_dim() {
            return Err(TauqError::Config(format!(
                "state of dimension {} given to a basis over dimension {}",
                s.len(),
                self.state_dim()
            )));
        }
        if let Some(k) = self.n_actions() {
            if a >= k {
                return Err(TauqError::Config(format!("action {a} outside 0..{k}")));
            }
        }
        Ok(())
    }

    /// Feature vector `φ(s, a)`.
    pub fn featurize(&self, s: &[f64], a: usize) -> Result<Vec<f64>> {
        self.check(s, a)?;
        let mut out = Vec::with_capacity(self.output_dim());
        self.featurize_into(s, a, &mut out);
        Ok(out)
    }

    /// Unchecked `featurize` writing into a reusable buffer.
    pub fn featurize_into(&self, s: &[f64], a: usize, out: &mut Vec<f64>) {
        out.clear();
        match self {
            FeatureBasis::InteractedLinear {
                state_dim,
                n_actions,
                action_intercept,
            } => {
                out.extend_from_slice(s);
                for b in 1..*n_actions {
                    if a == b {
                        out.extend_from_slice(s);
                    } else {
                        out.extend(std::iter::repeat_n(0.0, *state_dim));
                    }
                }
                out.push(1.0);
                if *action_intercept {
                    out.extend((1..*n_actions).map(|b| if a == b { 1.0 } else { 0.0 }));
                }
            }
            FeatureBasis::LinearStateOnly { .. } => {
                out.extend_from_slice(s);
                out.push(1.0);
            }
            FeatureBasis::CustomGrid { points, n_actions } => {
                out.resize(points.len() * n_actions, 0.0);
                out[nearest(points, s) * n_actions + a] = 1.0;
            }
        }
    }

    /// Number of columns handed to a regression (the constant becomes the intercept).
    pub fn regression_dim(&self) -> usize {
        self.output_dim() - usize::from(self.has_constant())
    }

    /// `φ(s, a)` with the constant column removed.
    pub fn regression_row_into(&self, s: &[f64], a: usize, out: &mut Vec<f64>) {
        self.featurize_into(s, a, out);
        if let Some(c) = self.constant_index() {
            out.remove(c);
        }
    }

    /// Regression columns that act as intercepts and are never penalized.
    pub fn unpenalized_regression_columns(&self) -> Vec<usize> {
        match self {
            FeatureBasis::InteractedLinear {
                state_dim,
                n_actions,
                action_intercept: true,
            } => (0..n_actions - 1)
                .map(|b| state_dim * n_actions + b)
                .collect(),
            _ => Vec::new(),
        }
    }

    /// State coordinate a regression column reads, if any.
    pub fn regression_state_coordinate(&self, col: usize) -> Option<usize> {
        match self {
            FeatureBasis::InteractedLinear {
                state_dim,
                n_actions,
                ..
            } => (col < state_dim * n_actions).then(|| col % state_dim),
            FeatureBasis::LinearStateOnly { state_dim } => (col < *state_dim).then_some(col),
            FeatureBasis::CustomGrid { .. } => None,
        }
    }
}

fn nearest(points: &[Vec<f64>], s: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (g, p) in points.iter().enumerate() {
        let d: f64 = p.iter().zip(s).map(|(x, y)| (x - y) * (x - y)).sum();
        if d < best.1 {
            best = (g, d);
        }
    }
    best.0
}
