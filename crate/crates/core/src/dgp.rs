//! Synthetic MDPs, trajectory simulation and Monte Carlo ground truth.
//!
//! Every DGP here has linear-Gaussian dynamics `s' = M_a s + b_a + σ_s ε_s` and a
//! reward of the form
//! `r = βᵀφ(s,a) + c_a + [pair]·a·(s_1+s_2)/2 + β_denseᵀs + g(s) + σ_r ε_r`
//! where `φ` is the interacted basis `[s, s·1{a=1}, .., 1]` and `g` is the optional
//! nonlinear main effect.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TauqError};
use crate::policy::PolicySpec;
use crate::rng::{derive_seed, substream, StreamRng};
use crate::types::{Dataset, FeatureBasis, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgpKind {
    OneDValidation,
    RewardFiltered,
    MisalignedEndoExo,
    NonlinearMainEffects,
    /// Action 1 adds a unit reward everywhere and does not move the state.
    DominantAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "DgpSpecFile")]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub state_dim: usize,
    pub sparse_dim: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub discount: f64,
    /// Mean of the diagonal of `M_1 − M_0`.
    pub action_effect_shift: f64,
    pub sigma_s: f64,
    pub sigma_r: f64,
    pub seed: u64,
    pub behavior: Option<PolicySpec>,
    pub evaluation: Option<PolicySpec>,
}

/// On-disk form: everything except `kind` falls back to the kind's default.
#[derive(Deserialize)]
struct DgpSpecFile {
    kind: DgpKind,
    state_dim: Option<usize>,
    sparse_dim: Option<usize>,
    n_actions: Option<usize>,
    horizon: Option<usize>,
    discount: Option<f64>,
    action_effect_shift: Option<f64>,
    sigma_s: Option<f64>,
    sigma_r: Option<f64>,
    seed: Option<u64>,
    behavior: Option<PolicySpec>,
    evaluation: Option<PolicySpec>,
}

impl From<DgpSpecFile> for DgpSpec {
    fn from(f: DgpSpecFile) -> Self {
        let mut s = DgpSpec::new(f.kind);
        macro_rules! take {
            ($($name:ident),*) => {$( if let Some(v) = f.$name { s.$name = v; } )*};
        }
        take!(
            state_dim,
            sparse_dim,
            n_actions,
            horizon,
            discount,
            action_effect_shift,
            sigma_s,
            sigma_r,
            seed
        );
        s.behavior = f.behavior;
        s.evaluation = f.evaluation;
        s
    }
}

impl DgpSpec {
    pub fn new(kind: DgpKind) -> Self {
        let base = DgpSpec {
            kind,
            state_dim: 50,
            sparse_dim: 10,
            n_actions: 2,
            horizon: 5,
            discount: 0.9,
            action_effect_shift: 0.0,
            sigma_s: 0.4,
            sigma_r: 0.6,
            seed: 0,
            behavior: None,
            evaluation: None,
        };
        match kind {
            DgpKind::OneDValidation => DgpSpec {
                state_dim: 1,
                sparse_dim: 1,
                horizon: 30,
                sigma_s: 0.2,
                sigma_r: 0.2,
                ..base
            },
            DgpKind::DominantAction => DgpSpec {
                state_dim: 5,
                sparse_dim: 1,
                behavior: Some(PolicySpec::Uniform { n_actions: 2 }),
                ..base
            },
            _ => base,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TauqError::Config(m.to_string()));
        if self.state_dim == 0 || self.horizon == 0 {
            return bad("state_dim and horizon must be positive");
        }
        if self.sparse_dim == 0 || self.sparse_dim > self.state_dim {
            return bad("sparse_dim must lie in 1..=state_dim");
        }
        if self.n_actions < 2 {
            return bad("at least two actions are required");
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1]");
        }
        if !(self.sigma_s >= 0.0) || !(self.sigma_r >= 0.0) {
            return bad("noise scales must be nonnegative");
        }
        if !self.action_effect_shift.is_finite() {
            return bad("action_effect_shift must be finite");
        }
        match self.kind {
            DgpKind::OneDValidation if self.state_dim != 1 || self.n_actions != 2 => {
                bad("the one-dimensional DGP has scalar states and two actions")
            }
            DgpKind::NonlinearMainEffects if self.state_dim < 3 => {
                bad("nonlinear main effects need at least three state coordinates")
            }
            DgpKind::RewardFiltered
            | DgpKind::MisalignedEndoExo
            | DgpKind::NonlinearMainEffects
                if self.state_dim < 2 =>
            {
                bad("the action term reads two state coordinates")
            }
            _ => Ok(()),
        }?;
        for p in [&self.behavior, &self.evaluation].into_iter().flatten() {
            p.validate(self.state_dim, self.n_actions, self.horizon)?;
        }
        Ok(())
    }
}

/// A fully drawn MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpInstance {
    pub spec: DgpSpec,
    /// `M_a`, one per action.
    pub transitions: Vec<DMatrix<f64>>,
    /// `b_a`, one per action.
    pub transition_offsets: Vec<Vec<f64>>,
    /// Coefficients over the interacted basis `[s, s·1{a=1}, .., 1]`.
    pub beta: Vec<f64>,
    pub beta_dense: Vec<f64>,
    /// `c_a`
    pub action_reward: Vec<f64>,
    /// Whether the `a·(s_1+s_2)/2` term is present.
    pub pair_term: bool,
    pub nonlinear: bool,
    pub behavior: PolicySpec,
    pub evaluation: PolicySpec,
    pub init_mean: Vec<f64>,
    pub init_sd: f64,
}

/// Largest eigenvalue modulus, by power iteration with an eigensolver fallback.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut x = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.01 * i as f64);
    x /= x.norm();
    let mut prev = f64::NAN;
    for _ in 0..2000 {
        let y = m * &x;
        let norm = y.norm();
        if norm == 0.0 {
            break;
        }
        if (norm - prev).abs() <= 1e-13 * norm {
            // a real dominant eigenvalue: sign-flipping or steady ratio
            let check = (m * &y).norm() / norm;
            if (check - norm).abs() <= 1e-10 * norm {
                return norm;
            }
        }
        prev = norm;
        x = y / norm;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn build_dgp(spec: &DgpSpec) -> Result<DgpInstance> {
    spec.validate()?;
    let d = spec.state_dim;
    let k = spec.sparse_dim;
    let na = spec.n_actions;
    let seed = spec.seed;
    let reward_basis = FeatureBasis::InteractedLinear {
        state_dim: d,
        n_actions: na,
        action_intercept: false,
    };
    let pdim = reward_basis.output_dim();

    let mut inst = DgpInstance {
        spec: spec.clone(),
        transitions: Vec::new(),
        transition_offsets: vec![vec![0.0; d]; na],
        beta: vec![0.0; pdim],
        beta_dense: vec![0.0; d],
        action_reward: vec![0.0; na],
        pair_term: false,
        nonlinear: false,
        behavior: PolicySpec::Uniform { n_actions: na },
        evaluation: PolicySpec::Uniform { n_actions: na },
        init_mean: vec![0.0; d],
        init_sd: 1.0,
    };

    match spec.kind {
        DgpKind::OneDValidation => {
            inst.transitions = vec![DMatrix::identity(1, 1); 2];
            inst.transition_offsets = vec![vec![-0.15], vec![0.15]];
            inst.beta[0] = 1.0;
            inst.action_reward = vec![0.0, 0.3];
            inst.behavior = PolicySpec::one_d_behavior();
            inst.evaluation = PolicySpec::one_d_evaluation();
            inst.init_mean = vec![0.5];
            inst.init_sd = 0.2;
        }
        DgpKind::DominantAction => {
            inst.transitions = vec![DMatrix::identity(d, d) * 0.5; na];
            inst.beta[0] = 0.5;
            for a in 1..na {
                inst.action_reward[a] = a as f64;
            }
        }
        kind => {
            let mut rng = substream(seed, &[0xD6F, 1]);
            let entry = Normal::new(0.2, 1.0).expect("valid normal");
            let mut ms: Vec<DMatrix<f64>> = (0..na)
                .map(|a| {
                    let mut m = DMatrix::from_fn(d, d, |_, _| entry.sample(&mut rng));
                    if a >= 1 {
                        for i in 0..d {
                            m[(i, i)] += spec.action_effect_shift;
                        }
                    }
                    m
                })
                .collect();
            for a in 0..na {
                if kind == DgpKind::MisalignedEndoExo {
                    // exogenous block: unaffected by action or by the sparse block
                    for i in k..d {
                        for j in 0..k {
                            ms[a][(i, j)] = 0.0;
                        }
                        for j in k..d {
                            ms[a][(i, j)] = ms[0][(i, j)];
                        }
                    }
                } else {
                    for i in 0..k {
                        for j in k..d {
                            ms[a][(i, j)] = 0.0;
                        }
                    }
                }
                let block = ms[a].view((0, 0), (k, k)).clone_owned();
                let r = spectral_radius(&block);
                if r > 0.0 {
                    let scaled = block / r;
                    ms[a].view_mut((0, 0), (k, k)).copy_from(&scaled);
                }
            }
            inst.transitions = ms;

            let mut rng = substream(seed, &[0xD6F, 2]);
            let bdist = Normal::new(1.0, 0.5).expect("valid normal");
            for blk in 0..na {
                for j in 0..k {
                    inst.beta[blk * d + j] = bdist.sample(&mut rng);
                }
            }
            inst.pair_term = true;
            let density = match kind {
                DgpKind::MisalignedEndoExo => 0.9,
                DgpKind::NonlinearMainEffects => 0.5,
                _ => 0.0,
            };
            if density > 0.0 {
                let mut rng = substream(seed, &[0xD6F, 3]);
                for b in inst.beta_dense.iter_mut() {
                    *b = f64::from(u8::from(rng.random::<f64>() < density));
                }
            }
            inst.nonlinear = kind == DgpKind::NonlinearMainEffects;

            let mut rng = substream(seed, &[0xD6F, 4]);
            let bcoef = Normal::new(0.0, 0.3).expect("valid normal");
            let mut draw_b = || {
                (0..=d)
                    .map(|_| bcoef.sample(&mut rng))
                    .collect::<Vec<f64>>()
            };
            inst.behavior = if na == 2 {
                PolicySpec::Logistic {
                    coef: draw_b(),
                    uniform_mix: 0.2,
                }
            } else {
                PolicySpec::Softmax {
                    coef: (1..na).map(|_| draw_b()).collect(),
                    uniform_mix: 0.2,
                }
            };
            let mut rng = substream(seed, &[0xD6F, 5]);
            let ecoef = Uniform::new_inclusive(-0.5, 0.5).expect("valid uniform");
            let mut draw_e = || {
                (0..=d)
                    .map(|_| ecoef.sample(&mut rng))
                    .collect::<Vec<f64>>()
            };
            inst.evaluation = if na == 2 {
                PolicySpec::Logistic {
                    coef: draw_e(),
                    uniform_mix: 0.0,
                }
            } else {
                PolicySpec::Softmax {
                    coef: (1..na).map(|_| draw_e()).collect(),
                    uniform_mix: 0.0,
                }
            };
        }
    }
    if let Some(p) = &spec.behavior {
        inst.behavior = p.clone();
    }
    if let Some(p) = &spec.evaluation {
        inst.evaluation = p.clone();
    }
    Ok(inst)
}

impl DgpInstance {
    pub fn state_dim(&self) -> usize {
        self.spec.state_dim
    }

    pub fn n_actions(&self) -> usize {
        self.spec.n_actions
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    pub fn discount(&self) -> f64 {
        self.spec.discount
    }

    /// Basis the reward coefficients `β` are expressed in.
    pub fn reward_basis(&self) -> FeatureBasis {
        FeatureBasis::InteractedLinear {
            state_dim: self.state_dim(),
            n_actions: self.n_actions(),
            action_intercept: false,
        }
    }

    /// Noise-free expected reward `E[R_t | s, a]`.
    pub fn mean_reward(&self, s: &[f64], a: usize) -> f64 {
        let d = self.state_dim();
        let mut r: f64 = s.iter().zip(&self.beta[..d]).map(|(x, b)| x * b).sum();
        if a >= 1 {
            r += s
                .iter()
                .zip(&self.beta[a * d..(a + 1) * d])
                .map(|(x, b)| x * b)
                .sum::<f64>();
        }
        r += self.beta[self.n_actions() * d];
        r += self.action_reward[a];
        if self.pair_term {
            r += a as f64 * (s[0] + s[1]) / 2.0;
        }
        r += s
            .iter()
            .zip(&self.beta_dense)
            .map(|(x, b)| x * b)
            .sum::<f64>();
        if self.nonlinear {
            let (u, v) = (s[d - 2], s[d - 3]);
            r += 3.0 * (std::f64::consts::PI * u * v).sin()
                + 0.5 * (u - 0.5).powi(2)
                + 0.5 * (v - 0.5).powi(2);
        }
        r
    }

    /// `M_a s + b_a`
    pub fn mean_next_state(&self, s: &[f64], a: usize) -> Vec<f64> {
        let m = &self.transitions[a];
        let b = &self.transition_offsets[a];
        (0..self.state_dim())
            .map(|i| b[i] + (0..self.state_dim()).map(|j| m[(i, j)] * s[j]).sum::<f64>())
            .collect()
    }

    /// Transition with explicit standard-normal noise.
    pub fn step_with_noise(
        &self,
        s: &[f64],
        a: usize,
        eps_s: &[f64],
        eps_r: f64,
    ) -> (Vec<f64>, f64) {
        let mut next = self.mean_next_state(s, a);
        for (x, e) in next.iter_mut().zip(eps_s) {
            *x += self.spec.sigma_s * e;
        }
        let r = self.mean_reward(s, a) + self.spec.sigma_r * eps_r;
        (next, r)
    }

    /// Draws `ε_s` (all coordinates) then `ε_r` from `rng`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        _t: usize,
        s: &[f64],
        a: usize,
        rng: &mut R,
    ) -> (Vec<f64>, f64) {
        let eps: Vec<f64> = (0..self.state_dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let er: f64 = rng.sample(StandardNormal);
        self.step_with_noise(s, a, &eps, er)
    }

    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.init_mean
            .iter()
            .map(|m| m + self.init_sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn trajectory(&self, policy: &PolicySpec, seed: u64, i: u64) -> Trajectory {
        let mut rng = substream(seed, &[0x5113, i]);
        let t_max = self.horizon();
        let mut states = Vec::with_capacity(t_max + 1);
        let mut actions = Vec::with_capacity(t_max);
        let mut rewards = Vec::with_capacity(t_max);
        let mut s = self.initial_state(&mut rng);
        for t in 1..=t_max {
            let a = policy.sample_action(t, &s, &mut rng);
            let (next, r) = self.step(t, &s, a, &mut rng);
            states.push(s);
            actions.push(a);
            rewards.push(r);
            s = next;
        }
        states.push(s);
        Trajectory {
            states,
            actions,
            rewards,
        }
    }

    /// `n` i.i.d. trajectories under `policy`. Trajectory `i` depends only on `(seed, i)`.
    pub fn simulate(&self, policy: &PolicySpec, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(TauqError::InvalidArgument(
                "cannot simulate zero trajectories".into(),
            ));
        }
        policy.validate(self.state_dim(), self.n_actions(), self.horizon())?;
        let trajectories: Vec<Trajectory> = (0..n as u64)
            .into_par_iter()
            .map(|i| self.trajectory(policy, seed, i))
            .collect();
        Dataset::new(
            self.horizon(),
            self.state_dim(),
            self.n_actions(),
            self.discount(),
            trajectories,
        )
    }

    /// `count` draws of `S_t` from trajectories run under `policy`.
    pub fn sample_states(
        &self,
        policy: &PolicySpec,
        t: usize,
        count: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        if t == 0 || t > self.horizon() + 1 {
            return Err(TauqError::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.horizon() + 1
            )));
        }
        policy.validate(self.state_dim(), self.n_actions(), self.horizon())?;
        Ok((0..count as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(seed, &[0x57A7, i]);
                let mut s = self.initial_state(&mut rng);
                for u in 1..t {
                    let a = policy.sample_action(u, &s, &mut rng);
                    s = self.step(u, &s, a, &mut rng).0;
                }
                s
            })
            .collect())
    }

    /// Discounted return from `(t, s)` taking `first` and then following `policy`.
    /// Noise and action draws come from two separate streams so that two calls
    /// with the same streams share every random number.
    fn rollout(
        &self,
        policy: &PolicySpec,
        t: usize,
        s: &[f64],
        first: usize,
        noise: &mut StreamRng,
        acts: &mut StreamRng,
    ) -> f64 {
        let gamma = self.discount();
        let mut s = s.to_vec();
        let mut a = first;
        let mut total = 0.0;
        let mut disc = 1.0;
        for u in t..=self.horizon() {
            if u > t {
                a = policy.sample_action(u, &s, acts);
            }
            let (next, r) = self.step(u, &s, a, noise);
            total += disc * r;
            disc *= gamma;
            s = next;
        }
        total
    }

    /// Monte Carlo `Q_t(s, a) − Q_t(s, a0)` with paired rollouts; returns (mean, stderr).
    pub fn oracle_contrast(
        &self,
        policy: &PolicySpec,
        t: usize,
        s: &[f64],
        a: usize,
        a0: usize,
        rollouts: usize,
        seed: u64,
    ) -> (f64, f64) {
        self.oracle_contrast_with(policy, t, s, a, a0, rollouts, seed, true)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn oracle_contrast_with(
        &self,
        policy: &PolicySpec,
        t: usize,
        s: &[f64],
        a: usize,
        a0: usize,
        rollouts: usize,
        seed: u64,
        common_random_numbers: bool,
    ) -> (f64, f64) {
        let m = rollouts.max(1);
        let diffs: Vec<f64> = (0..m as u64)
            .map(|r| {
                let arm = |which: u64| {
                    let tag = if common_random_numbers { 0 } else { which };
                    (substream(seed, &[r, tag, 0]), substream(seed, &[r, tag, 1]))
                };
                let (mut n1, mut a1) = arm(1);
                let (mut n0, mut a0s) = arm(2);
                self.rollout(policy, t, s, a, &mut n1, &mut a1)
                    - self.rollout(policy, t, s, a0, &mut n0, &mut a0s)
            })
            .collect();
        mean_se(&diffs)
    }

    /// Binary `τ_t(s) = Q_t(s,1) − Q_t(s,0)` under `policy` from `t + 1` on.
    pub fn oracle_tau(
        &self,
        policy: &PolicySpec,
        t: usize,
        s: &[f64],
        rollouts: usize,
        seed: u64,
    ) -> (f64, f64) {
        self.oracle_contrast(policy, t, s, 1, 0, rollouts, seed)
    }

    /// `oracle_tau` over a list of states; state `i` uses stream `(seed, i)`.
    pub fn oracle_tau_grid(
        &self,
        policy: &PolicySpec,
        t: usize,
        states: Vec<Vec<f64>>,
        rollouts: usize,
        seed: u64,
    ) -> OracleGrid {
        let res: Vec<(f64, f64)> = states
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                self.oracle_tau(
                    policy,
                    t,
                    s,
                    rollouts,
                    derive_seed(seed, &[0x0AC1, i as u64]),
                )
            })
            .collect();
        OracleGrid {
            t,
            states,
            tau_true: res.iter().map(|r| r.0).collect(),
            stderr: res.iter().map(|r| r.1).collect(),
            rollouts: rollouts.max(1),
        }
    }

    /// Monte Carlo value of `policy` from fresh initial states.
    pub fn policy_value(&self, policy: &PolicySpec, rollouts: usize, seed: u64) -> (f64, f64) {
        let v: Vec<f64> = (0..rollouts.max(1) as u64)
            .into_par_iter()
            .map(|r| self.episode_return(policy, seed, r))
            .collect();
        mean_se(&v)
    }

    /// `V(π1) − V(π2)` from paired rollouts sharing initial states and noise.
    pub fn policy_value_difference(
        &self,
        p1: &PolicySpec,
        p2: &PolicySpec,
        rollouts: usize,
        seed: u64,
    ) -> (f64, f64) {
        let v: Vec<f64> = (0..rollouts.max(1) as u64)
            .into_par_iter()
            .map(|r| self.episode_return(p1, seed, r) - self.episode_return(p2, seed, r))
            .collect();
        mean_se(&v)
    }

    fn episode_return(&self, policy: &PolicySpec, seed: u64, r: u64) -> f64 {
        let mut init = substream(seed, &[0x7A1, r, 2]);
        let s = self.initial_state(&mut init);
        let mut noise = substream(seed, &[0x7A1, r, 0]);
        let mut acts = substream(seed, &[0x7A1, r, 1]);
        let a = policy.sample_action(1, &s, &mut acts);
        self.rollout(policy, 1, &s, a, &mut noise, &mut acts)
    }

    /// Closed-form `Q_t^π` when the reward is linear and `π` ignores the state.
    pub fn linear_q(&self, policy: &PolicySpec) -> Result<LinearQ> {
        if self.nonlinear {
            return Err(TauqError::InvalidArgument(
                "nonlinear reward has no linear Q".into(),
            ));
        }
        if !policy.is_state_independent() {
            return Err(TauqError::InvalidArgument(
                "closed-form Q needs a state-independent policy".into(),
            ));
        }
        let d = self.state_dim();
        let na = self.n_actions();
        let zero = vec![0.0; d];
        let rw: Vec<Vec<f64>> = (0..na)
            .map(|a| {
                (0..d)
                    .map(|j| {
                        let mut c = self.beta[j] + self.beta_dense[j];
                        if a >= 1 {
                            c += self.beta[a * d + j];
                        }
                        if self.pair_term && j < 2 {
                            c += a as f64 * 0.5;
                        }
                        c
                    })
                    .collect()
            })
            .collect();
        let rc: Vec<f64> = (0..na)
            .map(|a| self.beta[na * d] + self.action_reward[a])
            .collect();
        let gamma = self.discount();
        let t_max = self.horizon();
        let mut w = vec![vec![vec![0.0; d]; na]; t_max];
        let mut c = vec![vec![0.0; na]; t_max];
        let mut v_next = vec![0.0; d];
        let mut k_next = 0.0;
        for t in (1..=t_max).rev() {
            for a in 0..na {
                let m = &self.transitions[a];
                let b = &self.transition_offsets[a];
                for j in 0..d {
                    w[t - 1][a][j] =
                        rw[a][j] + gamma * (0..d).map(|i| m[(i, j)] * v_next[i]).sum::<f64>();
                }
                c[t - 1][a] = rc[a]
                    + gamma * (v_next.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() + k_next);
            }
            let p = policy.action_probabilities(t, &zero);
            v_next = (0..d)
                .map(|j| (0..na).map(|a| p[a] * w[t - 1][a][j]).sum())
                .collect();
            k_next = (0..na).map(|a| p[a] * c[t - 1][a]).sum();
        }
        Ok(LinearQ { w, c })
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `Q_t(s, a) = w[t-1][a]ᵀ s + c[t-1][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQ {
    pub w: Vec<Vec<Vec<f64>>>,
    pub c: Vec<Vec<f64>>,
}

impl LinearQ {
    pub fn horizon(&self) -> usize {
        self.w.len()
    }

    /// `Q_{T+1} ≡ 0`.
    pub fn q(&self, t: usize, s: &[f64], a: usize) -> f64 {
        if t > self.horizon() {
            return 0.0;
        }
        self.c[t - 1][a]
            + self.w[t - 1][a]
                .iter()
                .zip(s)
                .map(|(x, y)| x * y)
                .sum::<f64>()
    }
}

/// Ground-truth contrast on a fixed set of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleGrid {
    pub t: usize,
    pub states: Vec<Vec<f64>>,
    pub tau_true: Vec<f64>,
    pub stderr: Vec<f64>,
    pub rollouts: usize,
}

impl OracleGrid {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Columns `t, s_0.., tau_true, stderr`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let d = self.states.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|j| format!("s_{j}")));
        header.push("tau_true".into());
        header.push("stderr".into());
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.t.to_string()];
            row.extend(self.states[i].iter().map(|v| v.to_string()));
            row.push(self.tau_true[i].to_string());
            row.push(self.stderr[i].to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}
