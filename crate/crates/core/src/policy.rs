//! Decision rules mapping `(t, s)` to a distribution over actions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TauqError};
use crate::tau::{ContrastFunction, TauModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicySpec {
    /// Binary: `p(1|s) = (1 − ρ)·sigmoid(coefᵀ[s, 1]) + ρ/2`.
    Logistic {
        coef: Vec<f64>,
        uniform_mix: f64,
    },
    /// `K` actions: softmax over `[0, coef_1ᵀ[s,1], ..]` mixed with the uniform distribution.
    Softmax {
        coef: Vec<Vec<f64>>,
        uniform_mix: f64,
    },
    Uniform {
        n_actions: usize,
    },
    /// Scalar-state rule `p(1|s) = scale·sigmoid(slope·s) + mix·U` with a fresh
    /// `U ~ Unif[0,1]` at every decision.
    FixedBernoulli1d {
        scale: f64,
        slope: f64,
        mix: f64,
    },
    Constant {
        action: usize,
        n_actions: usize,
    },
    /// Deterministic argmax of a fitted contrast.
    Greedy {
        tau: Box<TauModel>,
    },
    /// A separate rule per timestep: `stages[t - 1]`.
    Staged {
        stages: Vec<PolicySpec>,
    },
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn affine(coef: &[f64], s: &[f64]) -> f64 {
    let d = s.len();
    coef[..d].iter().zip(s).map(|(c, v)| c * v).sum::<f64>() + coef[d]
}

impl PolicySpec {
    /// The evaluation policy of the one-dimensional example.
    pub fn one_d_evaluation() -> Self {
        PolicySpec::FixedBernoulli1d {
            scale: 0.2,
            slope: 0.1,
            mix: 0.2,
        }
    }

    /// The behavior policy of the one-dimensional example.
    pub fn one_d_behavior() -> Self {
        PolicySpec::FixedBernoulli1d {
            scale: 0.9,
            slope: 0.1,
            mix: 0.1,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            PolicySpec::Logistic { .. } | PolicySpec::FixedBernoulli1d { .. } => 2,
            PolicySpec::Softmax { coef, .. } => coef.len() + 1,
            PolicySpec::Uniform { n_actions } | PolicySpec::Constant { n_actions, .. } => {
                *n_actions
            }
            PolicySpec::Greedy { tau } => tau.n_actions,
            PolicySpec::Staged { stages } => stages.first().map_or(0, PolicySpec::n_actions),
        }
    }

    /// Checks the policy against a state dimension, action count and horizon.
    pub fn validate(&self, state_dim: usize, n_actions: usize, horizon: usize) -> Result<()> {
        let bad = |m: String| Err(TauqError::Config(m));
        let mix_ok = |m: f64| (0.0..=1.0).contains(&m);
        match self {
            PolicySpec::Logistic { coef, uniform_mix } => {
                if coef.len() != state_dim + 1 || !mix_ok(*uniform_mix) {
                    return bad(format!(
                        "logistic policy needs {} coefficients and uniform_mix in [0,1]",
                        state_dim + 1
                    ));
                }
            }
            PolicySpec::Softmax { coef, uniform_mix } => {
                if coef.iter().any(|c| c.len() != state_dim + 1) || !mix_ok(*uniform_mix) {
                    return bad("softmax policy coefficient shape mismatch".into());
                }
            }
            PolicySpec::FixedBernoulli1d { scale, mix, .. } => {
                if state_dim != 1 || *scale < 0.0 || *mix < 0.0 || scale + mix > 1.0 {
                    return bad(
                        "1-d Bernoulli policy needs scalar states and scale + mix <= 1".into(),
                    );
                }
            }
            PolicySpec::Uniform { n_actions: k } => {
                if *k == 0 {
                    return bad("uniform policy over zero actions".into());
                }
            }
            PolicySpec::Constant {
                action,
                n_actions: k,
            } => {
                if action >= k {
                    return bad(format!("constant action {action} outside 0..{k}"));
                }
            }
            PolicySpec::Greedy { tau } => {
                if tau.basis.state_dim() != state_dim || tau.horizon < horizon {
                    return bad("greedy policy contrast does not match the dataset".into());
                }
            }
            PolicySpec::Staged { stages } => {
                if stages.len() < horizon {
                    return bad(format!(
                        "staged policy has {} stages, need {horizon}",
                        stages.len()
                    ));
                }
                for s in stages {
                    s.validate(state_dim, n_actions, horizon.min(1))?;
                }
            }
        }
        if self.n_actions() != n_actions {
            return bad(format!(
                "policy acts on {} actions but the problem has {n_actions}",
                self.n_actions()
            ));
        }
        Ok(())
    }

    /// `π(·|s)` at timestep `t`. For the 1-d Bernoulli rule this is the mean over `U`.
    pub fn action_probabilities(&self, t: usize, s: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_actions());
        self.probabilities_into(t, s, &mut out);
        out
    }

    pub fn probabilities_into(&self, t: usize, s: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self {
            PolicySpec::Logistic { coef, uniform_mix } => {
                let p1 = (1.0 - uniform_mix) * sigmoid(affine(coef, s)) + 0.5 * uniform_mix;
                out.push(1.0 - p1);
                out.push(p1);
            }
            PolicySpec::Softmax { coef, uniform_mix } => {
                let k = coef.len() + 1;
                let mut eta = vec![0.0];
                eta.extend(coef.iter().map(|c| affine(c, s)));
                let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = eta.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = e.iter().sum();
                out.extend(
                    e.iter()
                        .map(|v| (1.0 - uniform_mix) * v / z + uniform_mix / k as f64),
                );
            }
            PolicySpec::Uniform { n_actions } => {
                out.extend(std::iter::repeat_n(1.0 / *n_actions as f64, *n_actions));
            }
            PolicySpec::FixedBernoulli1d { scale, slope, mix } => {
                let p1 = scale * sigmoid(slope * s[0]) + 0.5 * mix;
                out.push(1.0 - p1);
                out.push(p1);
            }
            PolicySpec::Constant { action, n_actions } => {
                out.resize(*n_actions, 0.0);
                out[*action] = 1.0;
            }
            PolicySpec::Greedy { tau } => {
                out.resize(tau.n_actions, 0.0);
                out[tau.greedy_action(t, s)] = 1.0;
            }
            PolicySpec::Staged { stages } => stages[t - 1].probabilities_into(t, s, out),
        }
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, t: usize, s: &[f64], rng: &mut R) -> usize {
        match self {
            PolicySpec::FixedBernoulli1d { scale, slope, mix } => {
                let u: f64 = rng.random();
                let p1 = scale * sigmoid(slope * s[0]) + mix * u;
                usize::from(rng.random::<f64>() < p1)
            }
            PolicySpec::Staged { stages } => stages[t - 1].sample_action(t, s, rng),
            PolicySpec::Constant { action, .. } => *action,
            PolicySpec::Greedy { tau } => tau.greedy_action(t, s),
            _ => {
                let p = self.action_probabilities(t, s);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (a, pa) in p.iter().enumerate() {
                    acc += pa;
                    if u < acc {
                        return a;
                    }
                }
                p.len() - 1
            }
        }
    }

    /// True when the action distribution does not depend on the state.
    pub fn is_state_independent(&self) -> bool {
        match self {
            PolicySpec::Uniform { .. } | PolicySpec::Constant { .. } => true,
            PolicySpec::Logistic { coef, uniform_mix } => {
                *uniform_mix == 1.0 || coef[..coef.len() - 1].iter().all(|c| *c == 0.0)
            }
            PolicySpec::Softmax { coef, uniform_mix } => {
                *uniform_mix == 1.0
                    || coef
                        .iter()
                        .all(|c| c[..c.len() - 1].iter().all(|v| *v == 0.0))
            }
            PolicySpec::FixedBernoulli1d { scale, slope, .. } => *scale == 0.0 || *slope == 0.0,
            PolicySpec::Greedy { .. } => false,
            PolicySpec::Staged { stages } => stages.iter().all(PolicySpec::is_state_independent),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn probability_examples() {
        let u = PolicySpec::Uniform { n_actions: 2 };
        assert_eq!(u.action_probabilities(1, &[3.0]), vec![0.5, 0.5]);
        let l = PolicySpec::Logistic {
            coef: vec![0.0, 0.0, 0.0],
            uniform_mix: 0.0,
        };
        assert_eq!(l.action_probabilities(1, &[1.0, -2.0]), vec![0.5, 0.5]);
        let big = PolicySpec::Logistic {
            coef: vec![0.0, 0.0, 1e6],
            uniform_mix: 0.2,
        };
        let p = big.action_probabilities(1, &[0.3, 0.1]);
        assert!((p[1] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_1d_mean_over_u() {
        let pe = PolicySpec::one_d_evaluation();
        let p = pe.action_probabilities(1, &[0.0]);
        assert!((p[1] - (0.2 * 0.5 + 0.1)).abs() < 1e-15);
        let mut rng = substream(4, &[]);
        let n = 200_000;
        let hits = (0..n)
            .filter(|_| pe.sample_action(1, &[0.0], &mut rng) == 1)
            .count();
        assert!((hits as f64 / n as f64 - 0.2).abs() < 0.005);
    }

    #[test]
    fn validation_catches_shape_errors() {
        let l = PolicySpec::Logistic {
            coef: vec![0.0; 3],
            uniform_mix: 0.2,
        };
        assert!(l.validate(2, 2, 5).is_ok());
        assert!(l.validate(3, 2, 5).is_err());
        assert!(l.validate(2, 3, 5).is_err());
    }
}
