//! Binary regression experiment: data stream, grid search over step sizes,
//! repetition aggregation and result files.

mod aggregate;
mod grid;
mod output;
mod stream;

pub use aggregate::{aggregate, percentile_sorted, BandedTrace};
pub use grid::{
    full_grid_exponents, initial_learner, run_grid, run_grid_with, run_single, summarize_cell,
    Cell, CellSummary, CsvRows, ExperimentConfig, GridOutcome, Profile, RunRecord,
};
pub use output::{
    best_cells_from_csv, read_csv, render_svg, BestCell, CsvCell, CsvRow, CsvSink, Summary,
    CSV_HEADER,
};
pub use stream::{
    encode_bits, BinRegStream, Sample, NORMAL_MAX, N_BITS, SPIKE_PERIOD, SPIKE_VALUE,
};
