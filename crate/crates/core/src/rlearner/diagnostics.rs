//! Exact checks on small tabular MDPs with two actions: the excess-variance
//! identity of the empirical residual loss and Neyman orthogonality of its
//! `τ`-derivative. All expectations are computed by enumeration.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::NextAction;
use crate::error::{Result, TauqError};
use crate::rng::substream;

/// Finite-state, two-action MDP observed under `behavior` and evaluated under `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub horizon: usize,
    pub discount: f64,
    pub init: Vec<f64>,
    /// `trans[s][a][s']`
    pub trans: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]` is the mean reward.
    pub reward: Vec<Vec<f64>>,
    pub reward_var: Vec<Vec<f64>>,
    /// `π^b(1|s)`
    pub behavior: Vec<f64>,
    /// `π^e(1|s)`
    pub target: Vec<f64>,
}

fn random_simplex<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
    let z: f64 = v.iter().sum();
    v.into_iter().map(|x| x / z).collect()
}

impl TabularMdp {
    pub fn random(n_states: usize, horizon: usize, discount: f64, seed: u64) -> Self {
        let mut rng = substream(seed, &[0x7AB]);
        let init = random_simplex(n_states, &mut rng);
        let trans = (0..n_states)
            .map(|_| (0..2).map(|_| random_simplex(n_states, &mut rng)).collect())
            .collect();
        let reward = (0..n_states)
            .map(|_| {
                (0..2)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let reward_var = (0..n_states)
            .map(|_| (0..2).map(|_| rng.random::<f64>()).collect())
            .collect();
        let behavior = (0..n_states).map(|_| rng.random_range(0.2..0.8)).collect();
        let target = (0..n_states).map(|_| rng.random_range(0.1..0.9)).collect();
        TabularMdp {
            horizon,
            discount,
            init,
            trans,
            reward,
            reward_var,
            behavior,
            target,
        }
    }

    pub fn n_states(&self) -> usize {
        self.init.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_states();
        let simplex = |p: &[f64]| {
            p.len() == k
                && p.iter().all(|v| *v >= 0.0)
                && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9
        };
        let ok = self.horizon >= 1
            && (0.0..=1.0).contains(&self.discount)
            && simplex(&self.init)
            && self.trans.len() == k
            && self
                .trans
                .iter()
                .all(|r| r.len() == 2 && r.iter().all(|p| simplex(p)))
            && [&self.reward, &self.reward_var]
                .iter()
                .all(|m| m.len() == k && m.iter().all(|r| r.len() == 2))
            && self.reward_var.iter().flatten().all(|v| *v >= 0.0)
            && self.behavior.len() == k
            && self.target.len() == k
            && self
                .behavior
                .iter()
                .chain(&self.target)
                .all(|p| (0.0..=1.0).contains(p));
        if ok {
            Ok(())
        } else {
            Err(TauqError::Config("malformed tabular MDP".into()))
        }
    }

    fn probs(p1: f64) -> [f64; 2] {
        [1.0 - p1, p1]
    }

    /// `Q^{π^e}_t(s, a)` as `q[t - 1][s][a]`.
    pub fn q_table(&self) -> Vec<Vec<[f64; 2]>> {
        let k = self.n_states();
        let mut q = vec![vec![[0.0; 2]; k]; self.horizon];
        for t in (1..=self.horizon).rev() {
            let v_next: Vec<f64> = if t < self.horizon {
                (0..k)
                    .map(|s| {
                        let p = Self::probs(self.target[s]);
                        p[0] * q[t][s][0] + p[1] * q[t][s][1]
                    })
                    .collect()
            } else {
                vec![0.0; k]
            };
            for s in 0..k {
                for a in 0..2 {
                    let ev: f64 = self.trans[s][a]
                        .iter()
                        .zip(&v_next)
                        .map(|(p, v)| p * v)
                        .sum();
                    q[t - 1][s][a] = self.reward[s][a] + self.discount * ev;
                }
            }
        }
        q
    }

    /// State distribution at each timestep under the behavior policy, `d[t - 1][s]`.
    pub fn state_distribution(&self) -> Vec<Vec<f64>> {
        let k = self.n_states();
        let mut d = vec![self.init.clone()];
        for _ in 1..self.horizon {
            let prev = d.last().unwrap();
            let mut next = vec![0.0; k];
            for s in 0..k {
                let p = Self::probs(self.behavior[s]);
                for a in 0..2 {
                    for (s2, pt) in self.trans[s][a].iter().enumerate() {
                        next[s2] += prev[s] * p[a] * pt;
                    }
                }
            }
            d.push(next);
        }
        d
    }

    /// `τ_t(s) = Q_t(s,1) − Q_t(s,0)`.
    pub fn tau(&self, t: usize) -> Vec<f64> {
        self.q_table()[t - 1].iter().map(|q| q[1] - q[0]).collect()
    }
}

/// Both sides of `E[L̂_t(τ, η)] − L_t(τ, η) = E[Var(γ Q_{t+1}(S_{t+1}, A_{t+1}) | S_t, A_t)]`
/// at the true `τ` and `η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessVariance {
    pub t: usize,
    /// `E[L̂_t]` by enumeration over `(S_t, A_t, R_t, S_{t+1}, A_{t+1})`.
    pub expected_loss: f64,
    /// `L_t` with the continuation replaced by its conditional mean given `(S_t, A_t)`.
    pub population_loss: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// Exact excess-variance identity at timestep `t`. With [`NextAction::Observed`]
/// the continuation action is drawn from `π^e`; otherwise it is integrated out.
pub fn excess_variance_check(
    mdp: &TabularMdp,
    t: usize,
    next: NextAction,
) -> Result<ExcessVariance> {
    mdp.validate()?;
    if t == 0 || t > mdp.horizon {
        return Err(TauqError::InvalidArgument(format!(
            "timestep {t} outside 1..={}",
            mdp.horizon
        )));
    }
    let q = mdp.q_table();
    let d = &mdp.state_distribution()[t - 1];
    let g = mdp.discount;
    let k = mdp.n_states();
    let mut expected = 0.0;
    let mut population = 0.0;
    let mut rhs = 0.0;
    for s in 0..k {
        let pb = TabularMdp::probs(mdp.behavior[s]);
        let qs = q[t - 1][s];
        let m = pb[0] * qs[0] + pb[1] * qs[1];
        let tau = qs[1] - qs[0];
        for a in 0..2 {
            let weight = d[s] * pb[a];
            if weight == 0.0 {
                continue;
            }
            let base = mdp.reward[s][a] - m - (a as f64 - mdp.behavior[s]) * tau;
            // continuation outcomes (probability, value)
            let mut outcomes: Vec<(f64, f64)> = Vec::new();
            if t < mdp.horizon {
                for (s2, pt) in mdp.trans[s][a].iter().enumerate() {
                    let pe = TabularMdp::probs(mdp.target[s2]);
                    let q2 = q[t][s2];
                    match next {
                        NextAction::Observed => {
                            outcomes.push((pt * pe[0], g * q2[0]));
                            outcomes.push((pt * pe[1], g * q2[1]));
                        }
                        NextAction::Integrated => {
                            outcomes.push((*pt, g * (pe[0] * q2[0] + pe[1] * q2[1])))
                        }
                    }
                }
            } else {
                outcomes.push((1.0, 0.0));
            }
            let mean: f64 = outcomes.iter().map(|(p, v)| p * v).sum();
            let second: f64 = outcomes.iter().map(|(p, v)| p * v * v).sum();
            let sq: f64 = outcomes.iter().map(|(p, v)| p * (base + v).powi(2)).sum();
            let var_r = mdp.reward_var[s][a];
            expected += weight * (var_r + sq);
            population += weight * (var_r + (base + mean).powi(2));
            rhs += weight * (second - mean * mean);
        }
    }
    Ok(ExcessVariance {
        t,
        expected_loss: expected,
        population_loss: population,
        lhs: expected - population,
        rhs,
    })
}

/// Direction in nuisance space: `π̂^b(1|s)`, `Q̂_t(s, a)` and an additive shift of `m̂_t(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub behavior: Vec<f64>,
    pub q: Vec<[f64; 2]>,
    pub m: Vec<f64>,
}

impl Perturbation {
    pub fn random(n_states: usize, seed: u64) -> Self {
        let mut rng = substream(seed, &[0xD1E]);
        let mut z = || rng.sample::<f64, _>(StandardNormal);
        Perturbation {
            behavior: (0..n_states).map(|_| z()).collect(),
            q: (0..n_states).map(|_| [z(), z()]).collect(),
            m: (0..n_states).map(|_| z()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    pub t: usize,
    pub eps: Vec<f64>,
    /// `|D_τ L_t(τ, η_ε)[1]|` for the residual loss.
    pub gaps: Vec<f64>,
    /// Least-squares slope of `log gap` on `log ε`.
    pub slope: f64,
    /// The same for the naive loss `E[(Q̂_t(S,1) − Q̂_t(S,0) − τ(S))²]`.
    pub naive_gaps: Vec<f64>,
    pub naive_slope: f64,
}

/// Default perturbation sizes, `10^-1 .. 10^-3`.
pub fn default_eps_grid() -> Vec<f64> {
    (0..9).map(|i| 10f64.powf(-1.0 - i as f64 * 0.25)).collect()
}

fn log_slope(eps: &[f64], gaps: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(gaps)
        .filter(|(_, g)| **g > 0.0)
        .map(|(e, g)| (e.ln(), g.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::INFINITY;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Derivative of the population residual loss in `τ` along `ν ≡ 1`, at the true
/// `τ_t` with nuisances moved by `ε·dir`. The outcome is the true `Q_t(S, A)` in
/// conditional mean; `m̂ = Σ_a π̂^b(a|s) Q̂_t(s,a) + ε·dir.m`.
pub fn orthogonality_check(
    mdp: &TabularMdp,
    t: usize,
    dir: &Perturbation,
    eps: &[f64],
) -> Result<OrthogonalityReport> {
    mdp.validate()?;
    let k = mdp.n_states();
    if t == 0 || t > mdp.horizon {
        return Err(TauqError::InvalidArgument(format!(
            "timestep {t} outside 1..={}",
            mdp.horizon
        )));
    }
    if dir.behavior.len() != k || dir.q.len() != k || dir.m.len() != k {
        return Err(TauqError::InvalidArgument(
            "perturbation does not match the state space".into(),
        ));
    }
    let q = &mdp.q_table()[t - 1];
    let d = &mdp.state_distribution()[t - 1];
    let deriv = |e: f64| -> (f64, f64) {
        let mut resid = 0.0;
        let mut naive = 0.0;
        for s in 0..k {
            let tau = q[s][1] - q[s][0];
            let eh = mdp.behavior[s] + e * dir.behavior[s];
            let qh = [q[s][0] + e * dir.q[s][0], q[s][1] + e * dir.q[s][1]];
            let mh = (1.0 - eh) * qh[0] + eh * qh[1] + e * dir.m[s];
            let pb = TabularMdp::probs(mdp.behavior[s]);
            let inner: f64 = (0..2)
                .map(|a| {
                    let w = a as f64 - eh;
                    pb[a] * (q[s][a] - mh - w * tau) * w
                })
                .sum();
            resid += -2.0 * d[s] * inner;
            naive += -2.0 * d[s] * (qh[1] - qh[0] - tau);
        }
        (resid.abs(), naive.abs())
    };
    let (gaps, naive_gaps): (Vec<f64>, Vec<f64>) = eps.iter().map(|&e| deriv(e)).unzip();
    Ok(OrthogonalityReport {
        t,
        eps: eps.to_vec(),
        slope: log_slope(eps, &gaps),
        naive_slope: log_slope(eps, &naive_gaps),
        gaps,
        naive_gaps,
    })
}
