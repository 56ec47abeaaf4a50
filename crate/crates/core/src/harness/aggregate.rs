//! Percentile bands across repetitions, then block smoothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandedTrace {
    pub percentiles: Vec<f64>,
    pub window: usize,
    /// 1-based step at which each smoothed point starts.
    pub steps: Vec<usize>,
    /// `bands[j][i]`: percentile `j` at smoothed point `i`.
    pub bands: Vec<Vec<f64>>,
}

impl BandedTrace {
    pub fn band(&self, percentile: f64) -> Option<&[f64]> {
        self.percentiles
            .iter()
            .position(|&p| p == percentile)
            .map(|j| self.bands[j].as_slice())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Linear-interpolated percentile (`0..=100`) of sorted data. Infinite
/// entries are allowed and propagate.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    let (a, b) = (sorted[lo], sorted[hi]);
    if frac == 0.0 || a == b {
        a
    } else if b.is_infinite() {
        b
    } else {
        a + frac * (b - a)
    }
}

/// Per-step percentiles across `traces`, then means over consecutive
/// non-overlapping blocks of `window` steps (the last block may be shorter).
///
/// Traces shorter than the longest one are treated as `+∞` past their end
/// (a run that stopped early diverged).
pub fn aggregate<S: AsRef<[f64]>>(
    traces: &[S],
    percentiles: &[f64],
    window: usize,
) -> Result<BandedTrace> {
    if traces.is_empty() {
        return Err(Error::Empty("no traces to aggregate"));
    }
    if window == 0 {
        return Err(Error::Config("smoothing window must be at least 1".into()));
    }
    if let Some(&p) = percentiles.iter().find(|p| !(0.0..=100.0).contains(*p)) {
        return Err(Error::Config(format!("percentile {p} not in [0, 100]")));
    }
    let len = traces.iter().map(|t| t.as_ref().len()).max().unwrap_or(0);
    let mut raw = vec![Vec::with_capacity(len); percentiles.len()];
    let mut column = Vec::with_capacity(traces.len());
    for step in 0..len {
        column.clear();
        column.extend(traces.iter().map(|t| {
            t.as_ref()
                .get(step)
                .copied()
                .map_or(f64::INFINITY, nan_to_inf)
        }));
        column.sort_by(f64::total_cmp);
        for (band, &p) in raw.iter_mut().zip(percentiles) {
            band.push(percentile_sorted(&column, p));
        }
    }
    let steps = (0..len).step_by(window).map(|s| s + 1).collect();
    let bands = raw
        .iter()
        .map(|band| {
            band.chunks(window)
                .map(|c| c.iter().sum::<f64>() / c.len() as f64)
                .collect()
        })
        .collect();
    Ok(BandedTrace {
        percentiles: percentiles.to_vec(),
        window,
        steps,
        bands,
    })
}

fn nan_to_inf(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_records_collapse() {
        let t = vec![1.0, 4.0, 2.0, 8.0];
        let agg = aggregate(&[t.clone(), t.clone(), t.clone()], &[10.0, 50.0, 90.0], 1).unwrap();
        for band in &agg.bands {
            assert_eq!(band, &t);
        }
        assert_eq!(agg.steps, vec![1, 2, 3, 4]);
    }

    #[test]
    fn constant_trace() {
        let traces: Vec<Vec<f64>> = (0..5).map(|_| vec![3.5; 25]).collect();
        let agg = aggregate(&traces, &[10.0, 50.0, 90.0], 10).unwrap();
        assert_eq!(agg.len(), 3);
        for band in &agg.bands {
            assert!(band.iter().all(|&v| v == 3.5));
        }
    }

    #[test]
    fn window_averages_blocks() {
        let agg = aggregate(&[vec![1.0, 3.0, 5.0, 7.0, 9.0]], &[50.0], 2).unwrap();
        assert_eq!(agg.bands[0], vec![2.0, 6.0, 9.0]);
        assert_eq!(agg.steps, vec![1, 3, 5]);
    }

    #[test]
    fn percentiles_interpolate() {
        let traces: Vec<Vec<f64>> = (0..11).map(|i| vec![i as f64]).collect();
        let agg = aggregate(&traces, &[10.0, 50.0, 90.0, 25.0], 1).unwrap();
        assert_eq!(agg.band(10.0).unwrap(), &[1.0]);
        assert_eq!(agg.band(50.0).unwrap(), &[5.0]);
        assert_eq!(agg.band(90.0).unwrap(), &[9.0]);
        assert_eq!(agg.band(25.0).unwrap(), &[2.5]);
    }

    #[test]
    fn short_traces_count_as_diverged() {
        let agg = aggregate(&[vec![1.0, 1.0], vec![1.0]], &[0.0, 100.0], 1).unwrap();
        assert_eq!(agg.bands[0], vec![1.0, 1.0]);
        assert_eq!(agg.bands[1], vec![1.0, f64::INFINITY]);
    }

    #[test]
    fn errors() {
        assert!(aggregate::<Vec<f64>>(&[], &[50.0], 1).is_err());
        assert!(aggregate(&[vec![1.0]], &[50.0], 0).is_err());
        assert!(aggregate(&[vec![1.0]], &[150.0], 1).is_err());
    }
}
