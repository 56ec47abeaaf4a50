//! `rl-demo`: trains the double Q-learner and records per-step metrics.

use serde::{Deserialize, Serialize};

use crate::files::{read_config, write_atomic, AtomicFile};
use crate::{io_err, CliError, CliResult, Common};
use popart::rl_demo::{train, AgentConfig, ChainMdp, DoubleQAgent, N_ACTIONS};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlDemoConfig {
    pub mdp: ChainMdp,
    pub agent: AgentConfig,
    pub steps: usize,
    /// Largest acceptable `|Q − Q*| / |Q*|` at the end of training.
    pub tolerance: f64,
}

impl Default for RlDemoConfig {
    fn default() -> Self {
        Self {
            mdp: ChainMdp::default(),
            agent: AgentConfig::default(),
            steps: 50_000,
            tolerance: 0.05,
        }
    }
}

#[derive(Debug, Serialize)]
struct MetricsRow {
    step: usize,
    episode: usize,
    state: usize,
    action: usize,
    reward: f64,
    target: f64,
    normalized_target: f64,
    normalized_error: f64,
    grad_norm: f64,
    sigma: f64,
    mu: f64,
}

const METRICS_HEADER: [&str; 11] = [
    "step",
    "episode",
    "state",
    "action",
    "reward",
    "target",
    "normalized_target",
    "normalized_error",
    "grad_norm",
    "sigma",
    "mu",
];

#[derive(Debug, Serialize)]
struct RlSummary {
    steps: usize,
    episodes: usize,
    terminal_reward: f64,
    q: Vec<[f64; N_ACTIONS]>,
    q_star: Vec<[f64; N_ACTIONS]>,
    /// `null` when `Q*` has zero entries.
    max_relative_error: Option<f64>,
    tolerance: f64,
    within_tolerance: Option<bool>,
    greedy_policy: Vec<usize>,
}

pub fn run(common: &Common, steps: Option<usize>, reward_scale: Option<f64>) -> CliResult {
    let mut cfg = match &common.config {
        Some(path) => read_config::<RlDemoConfig>(path)?,
        None => RlDemoConfig::default(),
    };
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(r) = reward_scale {
        cfg.mdp.terminal_reward = r;
    }
    if let Some(seed) = common.seed {
        cfg.agent.seed = seed;
    }
    if cfg.tolerance.is_nan() || cfg.tolerance < 0.0 {
        return Err(CliError::Config(format!(
            "tolerance {} must be non-negative",
            cfg.tolerance
        )));
    }
    let mdp = cfg.mdp.clone();
    let mut agent = DoubleQAgent::new(&mdp, cfg.agent.clone())?;
    std::fs::create_dir_all(&common.out).map_err(io_err(&common.out))?;

    let csv_path = common.out.join("rl_metrics.csv");
    let file = AtomicFile::create(&csv_path)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file.writer());
    let csv_err = |e: csv::Error| io_err(&csv_path)(e.into());
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    let (mut step, mut episodes) = (0, 0);
    let mut failure = None;
    train(&mut agent, &mdp, cfg.steps, |ep| {
        episodes += 1;
        for m in &ep.steps {
            step += 1;
            let row = MetricsRow {
                step,
                episode: episodes,
                state: m.transition.state,
                action: m.transition.action,
                reward: m.transition.reward,
                target: m.target,
                normalized_target: m.normalized_target,
                normalized_error: m.normalized_error,
                grad_norm: m.gradient_norm,
                sigma: m.sigma,
                mu: m.mu,
            };
            if failure.is_none() {
                failure = w.serialize(row).err();
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(csv_err(e));
    }
    w.into_inner()
        .map_err(|e| io_err(&csv_path)(e.into_error()))?;
    file.commit()?;

    let q_star = mdp.value_iteration(1e-12);
    let q = (0..mdp.n_states)
        .map(|s| {
            let v = agent.q_values(&mdp.features(s))?;
            Ok([v[0], v[1]])
        })
        .collect::<popart::Result<Vec<_>>>()?;
    let max_relative_error = q_star
        .iter()
        .all(|r| r.iter().all(|&v| v != 0.0))
        .then(|| agent.max_relative_error(&mdp, &q_star))
        .transpose()?;
    let summary = RlSummary {
        steps: step,
        episodes,
        terminal_reward: mdp.terminal_reward,
        greedy_policy: (0..mdp.n_states)
            .map(|s| agent.greedy_action(&mdp.features(s)))
            .collect::<popart::Result<_>>()?,
        q,
        q_star,
        max_relative_error,
        tolerance: cfg.tolerance,
        within_tolerance: max_relative_error.map(|e| e <= cfg.tolerance),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&common.out.join("rl_summary.json"), json.as_bytes())?;
    match max_relative_error {
        Some(e) => println!(
            "{step} steps, {episodes} episodes, max |Q - Q*| / |Q*| = {e:.4} (tolerance {})",
            cfg.tolerance
        ),
        None => println!("{step} steps, {episodes} episodes"),
    }
    Ok(())
}
