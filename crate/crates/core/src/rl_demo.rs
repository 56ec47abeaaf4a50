//! Double Q-learning with Pop-Art on a small chain MDP whose terminal
//! reward can span many orders of magnitude.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Activation, Mlp};
use crate::popart::{no_hook, popart_sgd_step, LinearHead, OutputLayer, Target};
use crate::stats::{NormalizerState, StepSizeSchedule};

pub const ADVANCE: usize = 0;
pub const STAY: usize = 1;
pub const N_ACTIONS: usize = 2;

/// States `0..n_states`. `advance` moves right; advancing from the last
/// state ends the episode with `terminal_reward`. `stay` stays put. All
/// other rewards are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainMdp {
    pub n_states: usize,
    pub terminal_reward: f64,
    pub gamma: f64,
    /// Episodes are truncated (without terminating) after this many steps.
    pub max_episode_steps: usize,
}

impl Default for ChainMdp {
    fn default() -> Self {
        Self {
            n_states: 5,
            terminal_reward: 1000.0,
            gamma: 0.99,
            max_episode_steps: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    /// `None` when the episode terminated.
    pub next_state: Option<usize>,
}

impl ChainMdp {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.max_episode_steps == 0 {
            return Err(Error::Config(
                "n_states and max_episode_steps must be positive".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "gamma {} outside (0, 1)",
                self.gamma
            )));
        }
        if !self.terminal_reward.is_finite() {
            return Err(Error::Config("terminal_reward must be finite".into()));
        }
        Ok(())
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn step(&self, state: usize, action: usize) -> Transition {
        let (reward, next_state) = match action {
            ADVANCE if state + 1 == self.n_states => (self.terminal_reward, None),
            ADVANCE => (0.0, Some(state + 1)),
            _ => (0.0, Some(state)),
        };
        Transition {
            state,
            action,
            reward,
            next_state,
        }
    }

    /// One-hot encoding of `state`.
    pub fn features(&self, state: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.n_states];
        x[state] = 1.0;
        x
    }

    /// Exact `Q*` by value iteration, to within `tol` in max norm.
    pub fn value_iteration(&self, tol: f64) -> Vec<[f64; N_ACTIONS]> {
        let mut q = vec![[0.0f64; N_ACTIONS]; self.n_states];
        loop {
            let mut change: f64 = 0.0;
            for s in 0..self.n_states {
                for a in 0..N_ACTIONS {
                    let t = self.step(s, a);
                    let boot = t.next_state.map_or(0.0, |n| q[n][0].max(q[n][1]));
                    let v = t.reward + self.gamma * boot;
                    change = change.max((v - q[s][a]).abs());
                    q[s][a] = v;
                }
            }
            if change <= tol {
                return q;
            }
        }
    }
}

/// Lowest index among maximal entries.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `r + γ Q(s', argmax_a Q(s', a; θ); θ⁻)`, or `r` on termination.
pub fn double_q_target(reward: f64, gamma: f64, next: Option<(&[f64], &[f64])>) -> f64 {
    match next {
        None => reward,
        Some((online, target)) => reward + gamma * target[argmax(online)],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Hidden tanh layer widths between the one-hot input and the head.
    pub hidden_sizes: Vec<usize>,
    pub alpha: f64,
    /// Constant step size of the scalar target normalizer.
    pub beta: f64,
    pub epsilon: f64,
    /// Target-network copy period in updates.
    pub target_period: u64,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![16],
            alpha: 0.03,
            beta: 1e-3,
            epsilon: 0.1,
            target_period: 500,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha {} must be positive",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon {} outside [0, 1]",
                self.epsilon
            )));
        }
        if self.target_period == 0 || self.hidden_sizes.contains(&0) {
            return Err(Error::Config(
                "target_period and hidden sizes must be positive".into(),
            ));
        }
        StepSizeSchedule::constant(self.beta).map(|_| ())
    }
}

#[derive(Debug, Clone)]
struct QFunction {
    net: Mlp<f64>,
    layer: OutputLayer<f64>,
}

impl QFunction {
    fn q(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.layer.unnormalized(&self.net.forward(x)?)
    }
}

/// Online double Q-learner whose value head is trained with Pop-Art.
#[derive(Debug, Clone)]
pub struct DoubleQAgent {
    config: AgentConfig,
    online: QFunction,
    target: QFunction,
    normalizer: NormalizerState<f64>,
    updates: u64,
    rng: Xoshiro256PlusPlus,
}

impl DoubleQAgent {
    pub fn new(mdp: &ChainMdp, config: AgentConfig) -> Result<Self> {
        mdp.validate()?;
        config.validate()?;
        let mut sizes = vec![mdp.n_states];
        sizes.extend_from_slice(&config.hidden_sizes);
        let net = Mlp::init(&sizes, Activation::Tanh, config.seed)?;
        let head = LinearHead::zeros(N_ACTIONS, net.output_dim());
        let online = QFunction {
            net,
            layer: OutputLayer::new(head),
        };
        let normalizer = NormalizerState::new(1, StepSizeSchedule::constant(config.beta)?);
        let rng = Xoshiro256PlusPlus::seed_from_u64(config.seed ^ 0x5bd1_e995);
        Ok(Self {
            target: online.clone(),
            online,
            normalizer,
            updates: 0,
            rng,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn normalizer(&self) -> &NormalizerState<f64> {
        &self.normalizer
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Unnormalized `Q(x, ·; θ)`.
    pub fn q_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.online.q(x)
    }

    /// Unnormalized `Q(x, ·; θ⁻)`.
    pub fn target_q_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.target.q(x)
    }

    /// Copies `θ` into `θ⁻`.
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    pub fn greedy_action(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(x)?))
    }

    pub fn act(&mut self, x: &[f64]) -> Result<usize> {
        if self.rng.random::<f64>() < self.config.epsilon {
            Ok(self.rng.random_range(0..N_ACTIONS))
        } else {
            self.greedy_action(x)
        }
    }

    /// Double Q-learning target for `t`, using the online network for action
    /// selection and `θ⁻` for evaluation.
    pub fn target_for(&self, mdp: &ChainMdp, t: &Transition) -> Result<f64> {
        Ok(match t.next_state {
            None => double_q_target(t.reward, mdp.gamma, None),
            Some(n) => {
                let x = mdp.features(n);
                let online = self.online.q(&x)?;
                let target = self.target.q(&x)?;
                double_q_target(t.reward, mdp.gamma, Some((&online, &target)))
            }
        })
    }

    /// One Pop-Art SGD update on transition `t`; refreshes `θ⁻` every
    /// `target_period` updates.
    pub fn learn(&mut self, mdp: &ChainMdp, t: &Transition) -> Result<StepMetrics> {
        let y = self.target_for(mdp, t)?;
        let x = mdp.features(t.state);
        let report = popart_sgd_step(
            &mut self.online.net,
            &mut self.online.layer,
            &mut self.normalizer,
            &x,
            Target::Single {
                index: t.action,
                value: y,
            },
            self.config.alpha,
            &mut no_hook,
        )?;
        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_period) {
            self.sync_target();
        }
        Ok(StepMetrics {
            transition: *t,
            target: y,
            normalized_target: report.normalized_target[t.action],
            normalized_error: report.normalized_error[t.action].abs(),
            gradient_norm: report.gradient_norm,
            sigma: self.normalizer.sigma()[0],
            mu: self.normalizer.mean()[0],
        })
    }

    /// `max |Q − Q*| / |Q*|` over all state-action pairs.
    pub fn max_relative_error(&self, mdp: &ChainMdp, q_star: &[[f64; N_ACTIONS]]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (s, qs) in q_star.iter().enumerate() {
            let q = self.q_values(&mdp.features(s))?;
            for a in 0..N_ACTIONS {
                worst = worst.max((q[a] - qs[a]).abs() / qs[a].abs());
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub transition: Transition,
    pub target: f64,
    pub normalized_target: f64,
    /// `|δ|` for the action taken.
    pub normalized_error: f64,
    pub gradient_norm: f64,
    pub sigma: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeMetrics {
    pub steps: Vec<StepMetrics>,
    pub undiscounted_return: f64,
    pub terminated: bool,
}

impl EpisodeMetrics {
    pub fn gradient_norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.gradient_norm)
    }

    pub fn normalized_errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.normalized_error)
    }
}

/// Runs one ε-greedy episode with an update per transition, stopping at
/// termination, truncation, or after `budget` steps.
pub fn train_episode(
    agent: &mut DoubleQAgent,
    mdp: &ChainMdp,
    budget: usize,
) -> Result<EpisodeMetrics> {
    let mut metrics = EpisodeMetrics::default();
    let mut state = mdp.start();
    for _ in 0..budget.min(mdp.max_episode_steps) {
        let action = agent.act(&mdp.features(state))?;
        let t = mdp.step(state, action);
        metrics.undiscounted_return += t.reward;
        metrics.steps.push(agent.learn(mdp, &t)?);
        match t.next_state {
            Some(n) => state = n,
            None => {
                metrics.terminated = true;
                break;
            }
        }
    }
    Ok(metrics)
}

/// Trains for exactly `total_steps` transitions, passing each episode's
/// metrics to `on_episode`.
pub fn train(
    agent: &mut DoubleQAgent,
    mdp: &ChainMdp,
    total_steps: usize,
    mut on_episode: impl FnMut(&EpisodeMetrics),
) -> Result<()> {
    let mut done = 0;
    while done < total_steps {
        let ep = train_episode(agent, mdp, total_steps - done)?;
        done += ep.steps.len();
        on_episode(&ep);
    }
    Ok(())
}
