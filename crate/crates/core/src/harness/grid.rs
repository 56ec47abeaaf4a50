//! Grid search over optimizer step size `α` and statistics step size `β`.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, percentile_sorted, BandedTrace};
use super::stream::{BinRegStream, N_BITS};
use crate::error::{Error, Result};
use crate::network::{Activation, Mlp};
use crate::popart::{Learner, LinearHead, Method, Target};
use crate::stats::{NormalizerState, StepSizeSchedule};

/// Half-decade exponents `−5, −4.5, …, −0.5, 0`.
pub fn full_grid_exponents() -> Vec<f64> {
    (0..=10).map(|i| -5.0 + 0.5 * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Ci,
    Full,
}

/// Which per-step rows end up in the results CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsvRows {
    #[default]
    All,
    /// Only the runs of each method's best cell.
    Best,
}

/// Declarative description of a binary regression study. Omitted fields
/// take their [`ExperimentConfig::ci`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    /// Base-10 exponents of the `α` values to try.
    pub alpha_exponents: Vec<f64>,
    /// Base-10 exponents of the `β` values to try (ignored by plain SGD).
    pub beta_exponents: Vec<f64>,
    pub n_samples: usize,
    pub n_repetitions: usize,
    pub smoothing_window: usize,
    pub hidden_sizes: Vec<usize>,
    pub percentiles: Vec<f64>,
    pub seed: u64,
    pub csv_rows: CsvRows,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::ci()
    }
}

impl ExperimentConfig {
    /// Desk-scale profile: 10 repetitions, 5 × 5 sub-grid.
    pub fn ci() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            alpha_exponents: vec![-4.5, -3.5, -2.5, -1.5, -0.5],
            beta_exponents: vec![-4.0, -3.0, -2.0, -1.0, -0.5],
            n_samples: 5000,
            n_repetitions: 10,
            smoothing_window: 10,
            hidden_sizes: vec![10, 10, 10],
            percentiles: vec![10.0, 50.0, 90.0],
            seed: 0,
            csv_rows: CsvRows::All,
        }
    }

    /// Full 11 × 11 grid with 50 repetitions.
    pub fn full() -> Self {
        Self {
            alpha_exponents: full_grid_exponents(),
            beta_exponents: full_grid_exponents(),
            n_repetitions: 50,
            ..Self::ci()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Ci => Self::ci(),
            Profile::Full => Self::full(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods".into()));
        }
        for (name, grid) in [
            ("alpha_exponents", &self.alpha_exponents),
            ("beta_exponents", &self.beta_exponents),
        ] {
            if grid.is_empty() {
                return Err(Error::Config(format!("{name} is empty")));
            }
            for &e in grid {
                let twice = 2.0 * e;
                if !(-10.0..=0.0).contains(&e) || twice != twice.round() {
                    return Err(Error::Config(format!(
                        "{name} entry {e} is not a half-decade exponent in [-5, 0]"
                    )));
                }
            }
            let mut sorted = grid.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            if sorted.len() != grid.len() {
                return Err(Error::Config(format!("{name} has duplicates")));
            }
        }
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        if m.len() != self.methods.len() {
            return Err(Error::Config("methods has duplicates".into()));
        }
        if self.n_samples == 0 || self.n_repetitions == 0 || self.smoothing_window == 0 {
            return Err(Error::Config(
                "n_samples, n_repetitions and smoothing_window must be positive".into(),
            ));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Config(
                "hidden_sizes must be non-empty and positive".into(),
            ));
        }
        if self.percentiles.iter().any(|p| !(0.0..=100.0).contains(p)) {
            return Err(Error::Config("percentiles must lie in [0, 100]".into()));
        }
        Ok(())
    }

    /// Every `(method, α, β)` cell, in output order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &method in &self.methods {
            for &a in &self.alpha_exponents {
                if method.uses_statistics() {
                    for &b in &self.beta_exponents {
                        cells.push(Cell::new(method, a, Some(b)));
                    }
                } else {
                    cells.push(Cell::new(method, a, None));
                }
            }
        }
        cells
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![N_BITS];
        sizes.extend_from_slice(&self.hidden_sizes);
        sizes
    }
}

/// One hyperparameter setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub alpha_exponent: f64,
    pub beta_exponent: Option<f64>,
}

impl Cell {
    pub fn new(method: Method, alpha_exponent: f64, beta_exponent: Option<f64>) -> Self {
        Self {
            method,
            alpha_exponent,
            beta_exponent,
        }
    }

    pub fn alpha(&self) -> f64 {
        10f64.powf(self.alpha_exponent)
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta_exponent.map(|e| 10f64.powf(e))
    }
}

/// Per-step test error of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: Cell,
    pub seed: u64,
    /// `|f(x_t) − y_t|` evaluated before learning from sample `t`.
    pub rmse: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// The run stopped early on a non-finite prediction or parameter.
    pub diverged: bool,
    /// Mean per-step error; `+∞` for diverged runs.
    pub auc: f64,
}

/// The learner a run of `cell` with `seed` starts from: a `16 → hidden`
/// tanh network (its last hidden layer is `h_θ`) and a 1-output head.
pub fn initial_learner(cfg: &ExperimentConfig, cell: Cell, seed: u64) -> Result<Learner<f64>> {
    let (method, beta) = (cell.method, cell.beta());
    let net = Mlp::init(&cfg.layer_sizes(), Activation::Tanh, seed)?;
    let m = net.output_dim();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let r = 1.0 / (m as f64).sqrt();
    let weights = (0..m)
        .map(|_| rand::Rng::random_range(&mut rng, -r..=r))
        .collect();
    let head = LinearHead::from_parts(1, m, weights, vec![0.0])?;
    let schedule = StepSizeSchedule::constant(beta.unwrap_or(1.0))?;
    Learner::new(method, net, head, NormalizerState::new(1, schedule))
}

/// Runs one repetition of one cell. Data stream and initial parameters
/// depend only on `seed`, so cells sharing a seed see identical streams.
pub fn run_single(cfg: &ExperimentConfig, cell: Cell, seed: u64) -> Result<RunRecord> {
    let mut learner = initial_learner(cfg, cell, seed)?;
    let alpha = cell.alpha();
    let mut stream = BinRegStream::new(seed);
    let mut rmse = Vec::with_capacity(cfg.n_samples);
    let mut grad_norm = Vec::with_capacity(cfg.n_samples);
    let mut diverged = false;
    for _ in 0..cfg.n_samples {
        let sample = stream.generate_sample();
        let pred = learner.predict(&sample.input)?[0];
        let err = (pred - sample.target).abs();
        if !err.is_finite() {
            diverged = true;
            break;
        }
        rmse.push(err);
        match learner.step(&sample.input, Target::Full(&[sample.target]), alpha) {
            Ok(report) => grad_norm.push(report.gradient_norm),
            Err(Error::NonFinite(_)) => {
                grad_norm.push(f64::INFINITY);
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if !learner.is_finite() {
            diverged = true;
            break;
        }
    }
    let auc = if diverged {
        f64::INFINITY
    } else {
        rmse.iter().sum::<f64>() / rmse.len() as f64
    };
    Ok(RunRecord {
        cell,
        seed,
        rmse,
        grad_norm,
        diverged,
        auc,
    })
}

/// Aggregate over the repetitions of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub alpha: f64,
    pub beta: Option<f64>,
    pub alpha_exponent: f64,
    pub beta_exponent: Option<f64>,
    pub median_auc: f64,
    pub p10_auc: f64,
    pub p90_auc: f64,
    pub n_runs: usize,
    pub diverged_runs: usize,
    #[serde(skip)]
    pub band: Option<BandedTrace>,
}

impl CellSummary {
    pub fn cell(&self) -> Cell {
        Cell::new(self.method, self.alpha_exponent, self.beta_exponent)
    }
}

pub fn summarize_cell(
    cfg: &ExperimentConfig,
    cell: Cell,
    records: &[RunRecord],
) -> Result<CellSummary> {
    let mut aucs: Vec<f64> = records.iter().map(|r| r.auc).collect();
    aucs.sort_by(f64::total_cmp);
    let traces: Vec<&[f64]> = records.iter().map(|r| r.rmse.as_slice()).collect();
    let band = aggregate(&traces, &cfg.percentiles, cfg.smoothing_window)?;
    Ok(CellSummary {
        method: cell.method,
        alpha: cell.alpha(),
        beta: cell.beta(),
        alpha_exponent: cell.alpha_exponent,
        beta_exponent: cell.beta_exponent,
        median_auc: percentile_sorted(&aucs, 50.0),
        p10_auc: percentile_sorted(&aucs, 10.0),
        p90_auc: percentile_sorted(&aucs, 90.0),
        n_runs: records.len(),
        diverged_runs: records.iter().filter(|r| r.diverged).count(),
        band: Some(band),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    /// One summary per cell, in [`ExperimentConfig::cells`] order.
    pub cells: Vec<CellSummary>,
}

impl GridOutcome {
    /// Cell with the lowest median AUC for `method` (first on ties).
    pub fn best(&self, method: Method) -> Option<&CellSummary> {
        self.cells.iter().filter(|c| c.method == method).fold(
            None,
            |best: Option<&CellSummary>, c| match best {
                Some(b) if b.median_auc <= c.median_auc => Some(b),
                _ => Some(c),
            },
        )
    }
}

/// Runs every repetition of every cell on `workers` threads, handing each
/// finished record to `on_record` in canonical order (cell order, then
/// seed), independent of scheduling.
pub fn run_grid_with(
    cfg: &ExperimentConfig,
    workers: usize,
    mut on_record: impl FnMut(&RunRecord),
) -> Result<GridOutcome> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let cells = cfg.cells();
    let reps = cfg.n_repetitions;
    let batch = (4 * workers.max(1)).div_ceil(reps).max(1);
    let mut summaries = Vec::with_capacity(cells.len());
    for chunk in cells.chunks(batch) {
        let jobs: Vec<(Cell, u64)> = chunk
            .iter()
            .flat_map(|&c| (0..reps as u64).map(move |i| (c, cfg.seed + i)))
            .collect();
        let records: Vec<RunRecord> = pool.install(|| {
            jobs.par_iter()
                .map(|&(cell, seed)| run_single(cfg, cell, seed))
                .collect::<Result<_>>()
        })?;
        for (cell, recs) in chunk.iter().zip(records.chunks(reps)) {
            recs.iter().for_each(&mut on_record);
            summaries.push(summarize_cell(cfg, *cell, recs)?);
        }
    }
    Ok(GridOutcome { cells: summaries })
}

/// [`run_grid_with`], keeping every record.
pub fn run_grid(cfg: &ExperimentConfig, workers: usize) -> Result<(Vec<RunRecord>, GridOutcome)> {
    let mut records = Vec::new();
    let outcome = run_grid_with(cfg, workers, |r| records.push(r.clone()))?;
    Ok((records, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            methods: vec![Method::PopArt],
            alpha_exponents: vec![-2.5],
            beta_exponents: vec![-0.5],
            n_samples: 200,
            n_repetitions: 1,
            ..ExperimentConfig::ci()
        }
    }

    #[test]
    fn grid_points() {
        let g = full_grid_exponents();
        assert_eq!(g.len(), 11);
        assert_eq!((g[0], g[10]), (-5.0, 0.0));
    }

    #[test]
    fn ci_cells_cover_grid_once() {
        let cfg = ExperimentConfig::ci();
        cfg.validate().unwrap();
        let cells = cfg.cells();
        assert_eq!(cells.len(), 5 + 3 * 25);
        for (i, a) in cells.iter().enumerate() {
            for b in &cells[i + 1..] {
                assert_ne!(a, b);
            }
        }
        ExperimentConfig::full().validate().unwrap();
        assert_eq!(ExperimentConfig::full().cells().len(), 11 + 3 * 121);
    }

    #[test]
    fn rejects_off_grid_values() {
        let mut cfg = tiny();
        cfg.alpha_exponents = vec![-2.3];
        assert!(cfg.validate().is_err());
        cfg.alpha_exponents = vec![0.5];
        assert!(cfg.validate().is_err());
        cfg.alpha_exponents = vec![-1.0, -1.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let mut v = serde_json::to_value(tiny()).unwrap();
        v["learning_rate"] = serde_json::json!(0.1);
        let err = serde_json::from_value::<ExperimentConfig>(v).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn single_cell_single_record() {
        let (records, outcome) = run_grid(&tiny(), 1).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].rmse.len(), 200);
        assert_eq!(outcome.cells.len(), 1);
        assert!(outcome.cells[0].median_auc.is_finite());
    }

    #[test]
    fn same_seed_same_record() {
        let cell = Cell::new(Method::Art, -2.5, Some(-2.0));
        let a = run_single(&tiny(), cell, 42).unwrap();
        let b = run_single(&tiny(), cell, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plain_sgd_at_alpha_one_diverges() {
        let cfg = ExperimentConfig {
            n_samples: 5000,
            ..tiny()
        };
        let r = run_single(&cfg, Cell::new(Method::Sgd, 0.0, None), 0).unwrap();
        assert!(r.diverged);
        assert!(r.auc.is_infinite());
        assert!(r.rmse.len() < 5000);
    }
}
