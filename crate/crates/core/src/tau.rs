//! Fitted difference-of-Q contrasts `τ̂_{a,t}` and greedy action selection.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TauqError};
use crate::regress::{FitInfo, FittedRegressor, LinearModel};
use crate::types::FeatureBasis;

/// Anything that can report `τ_{a,t}(s)` (zero for the reference action).
pub trait ContrastFunction: Sync {
    fn n_actions(&self) -> usize;
    fn reference_action(&self) -> usize {
        0
    }
    fn contrast(&self, t: usize, s: &[f64], a: usize) -> f64;

    /// Binary shorthand for `contrast(t, s, 1)`.
    fn tau(&self, t: usize, s: &[f64]) -> f64 {
        self.contrast(t, s, 1)
    }

    /// Argmax over actions with the reference action scoring 0. Ties keep the
    /// reference action, then the lowest index.
    fn greedy_action(&self, t: usize, s: &[f64]) -> usize {
        let a0 = self.reference_action();
        let mut best = (a0, 0.0);
        for a in 0..self.n_actions() {
            if a == a0 {
                continue;
            }
            let v = self.contrast(t, s, a);
            if v > best.1 {
                best = (a, v);
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub action: usize,
    /// Evaluated on `basis.featurize(s, 0)`.
    pub model: FittedRegressor,
    #[serde(default)]
    pub info: FitInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauStage {
    pub t: usize,
    pub contrasts: Vec<Contrast>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauModel {
    pub horizon: usize,
    pub n_actions: usize,
    pub reference_action: usize,
    /// State basis `ψ` the contrast models read.
    pub basis: FeatureBasis,
    /// `stages[t - 1]`; a stage without contrasts scores every action 0.
    pub stages: Vec<TauStage>,
}

impl TauModel {
    pub fn empty(horizon: usize, n_actions: usize, basis: FeatureBasis) -> Self {
        TauModel {
            horizon,
            n_actions,
            reference_action: 0,
            basis,
            stages: (1..=horizon)
                .map(|t| TauStage {
                    t,
                    contrasts: Vec::new(),
                })
                .collect(),
        }
    }

    pub fn set(&mut self, t: usize, contrast: Contrast) -> Result<()> {
        if t == 0 || t > self.horizon {
            return Err(TauqError::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.horizon
            )));
        }
        if contrast.action == self.reference_action || contrast.action >= self.n_actions {
            return Err(TauqError::InvalidArgument(format!(
                "contrast action {} is not a non-reference action",
                contrast.action
            )));
        }
        let stage = &mut self.stages[t - 1];
        stage.contrasts.retain(|c| c.action != contrast.action);
        stage.contrasts.push(contrast);
        stage.contrasts.sort_by_key(|c| c.action);
        Ok(())
    }

    pub fn get(&self, t: usize, a: usize) -> Option<&Contrast> {
        self.stages
            .get(t.checked_sub(1)?)?
            .contrasts
            .iter()
            .find(|c| c.action == a)
    }

    pub fn is_fitted(&self, t: usize) -> bool {
        self.stages
            .get(t.wrapping_sub(1))
            .is_some_and(|s| s.contrasts.len() + 1 == self.n_actions)
    }

    /// Linear coefficients of `τ̂_{a,t}` over `ψ`, if the contrast is linear.
    pub fn linear(&self, t: usize, a: usize) -> Option<&LinearModel> {
        self.get(t, a)?.model.as_linear()
    }

    /// Checked evaluation.
    pub fn evaluate(&self, t: usize, s: &[f64], a: usize) -> Result<f64> {
        if s.len() != self.basis.state_dim() {
            return Err(TauqError::Config(format!(
                "state of dimension {} for a contrast over dimension {}",
                s.len(),
                self.basis.state_dim()
            )));
        }
        if t == 0 || t > self.horizon || a >= self.n_actions {
            return Err(TauqError::InvalidArgument(format!(
                "no contrast for t={t}, a={a}"
            )));
        }
        Ok(self.contrast(t, s, a))
    }

    /// Copy with every contrast multiplied by `c` (linear contrasts only).
    pub fn scaled(&self, c: f64) -> TauModel {
        let mut out = self.clone();
        for stage in &mut out.stages {
            for k in &mut stage.contrasts {
                match &mut k.model {
                    FittedRegressor::Linear(m) => {
                        m.coef.iter_mut().for_each(|v| *v *= c);
                        m.intercept *= c;
                    }
                    FittedRegressor::Kernel(m) => {
                        m.dual_weights.iter_mut().for_each(|v| *v *= c);
                        m.offset *= c;
                    }
                }
            }
        }
        out
    }
}

impl ContrastFunction for TauModel {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn reference_action(&self) -> usize {
        self.reference_action
    }

    fn contrast(&self, t: usize, s: &[f64], a: usize) -> f64 {
        if a == self.reference_action {
            return 0.0;
        }
        match self.get(t, a) {
            Some(c) => {
                let mut buf = Vec::with_capacity(self.basis.output_dim());
                self.basis.featurize_into(s, 0, &mut buf);
                c.model.predict_row(&buf)
            }
            None => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin(coef: Vec<f64>) -> FittedRegressor {
        FittedRegressor::Linear(LinearModel {
            coef,
            intercept: 0.0,
            support: None,
            converged: true,
        })
    }

    fn model(values: &[f64]) -> TauModel {
        let mut m = TauModel::empty(1, values.len() + 1, FeatureBasis::state_only(1));
        for (k, v) in values.iter().enumerate() {
            m.set(
                1,
                Contrast {
                    action: k + 1,
                    model: lin(vec![0.0, *v]),
                    info: FitInfo::default(),
                },
            )
            .unwrap();
        }
        m
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(model(&[0.3]).greedy_action(1, &[1.0]), 1);
        assert_eq!(model(&[0.0]).greedy_action(1, &[1.0]), 0);
        assert_eq!(model(&[-0.2, 0.5]).greedy_action(1, &[1.0]), 2);
        assert_eq!(model(&[-0.2, -0.5]).greedy_action(1, &[1.0]), 0);
    }

    #[test]
    fn positive_scaling_keeps_decisions() {
        let m = model(&[-0.2, 0.5]);
        for c in [0.01, 1.0, 30.0] {
            assert_eq!(m.scaled(c).greedy_action(1, &[2.0]), 2);
        }
    }

    #[test]
    fn rejects_reference_contrast() {
        let mut m = TauModel::empty(2, 2, FeatureBasis::state_only(1));
        let c = Contrast {
            action: 0,
            model: lin(vec![0.0, 1.0]),
            info: FitInfo::default(),
        };
        assert!(m.set(1, c).is_err());
        assert!(!m.is_fitted(1));
    }
}
