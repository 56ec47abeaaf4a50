//! Results CSV, summary JSON and SVG band plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, percentile_sorted, BandedTrace};
use super::grid::{CellSummary, GridOutcome, RunRecord};
use crate::error::{Error, Result};
use crate::popart::Method;

pub const CSV_HEADER: &str = "method,alpha,beta,seed,step,rmse,grad_norm";

/// A results-CSV row; `beta` is empty for plain SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub method: Method,
    pub alpha: f64,
    pub beta: Option<f64>,
    pub seed: u64,
    pub step: usize,
    pub rmse: f64,
    pub grad_norm: f64,
}

/// Streams rows to `out`, writing the header first even if no rows follow.
pub struct CsvSink<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W) -> io::Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        inner
            .write_record(CSV_HEADER.split(','))
            .map_err(io::Error::from)?;
        Ok(Self { inner })
    }

    pub fn write_row(&mut self, row: &CsvRow) -> io::Result<()> {
        self.inner.serialize(row).map_err(io::Error::from)
    }

    /// One row per step of `record`.
    pub fn write_record(&mut self, record: &RunRecord) -> io::Result<()> {
        for (i, (&rmse, &grad_norm)) in record.rmse.iter().zip(&record.grad_norm).enumerate() {
            self.write_row(&CsvRow {
                method: record.cell.method,
                alpha: record.cell.alpha(),
                beta: record.cell.beta(),
                seed: record.seed,
                step: i + 1,
                rmse,
                grad_norm,
            })?;
        }
        Ok(())
    }

    pub fn finish(self) -> io::Result<W> {
        self.inner.into_inner().map_err(|e| e.into_error())
    }
}

pub fn read_csv(input: impl Read) -> Result<Vec<CsvRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Domain(e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header.is_empty() {
        return Err(Error::Empty("results CSV has no header"));
    }
    if header != CSV_HEADER {
        return Err(Error::Domain(format!("unexpected header {header:?}")));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Domain(e.to_string())))
        .collect()
}

/// A cell reconstructed from CSV rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvCell {
    pub method: Method,
    pub alpha: f64,
    pub beta: Option<f64>,
    pub median_auc: f64,
    pub band: BandedTrace,
}

/// Groups rows by cell and seed, and picks each method's lowest-median-AUC
/// cell. Runs shorter than the longest in their cell count as diverged.
pub fn best_cells_from_csv(
    rows: &[CsvRow],
    percentiles: &[f64],
    window: usize,
) -> Result<Vec<CsvCell>> {
    type Key = (Method, u64, Option<u64>);
    let mut cells: BTreeMap<Key, BTreeMap<u64, Vec<(usize, f64)>>> = BTreeMap::new();
    for r in rows {
        let key = (r.method, r.alpha.to_bits(), r.beta.map(f64::to_bits));
        cells
            .entry(key)
            .or_default()
            .entry(r.seed)
            .or_default()
            .push((r.step, r.rmse));
    }
    let mut best: BTreeMap<Method, CsvCell> = BTreeMap::new();
    for ((method, alpha, beta), runs) in cells {
        let traces: Vec<Vec<f64>> = runs
            .into_values()
            .map(|mut steps| {
                steps.sort_by_key(|s| s.0);
                steps.into_iter().map(|s| s.1).collect()
            })
            .collect();
        let full = traces.iter().map(Vec::len).max().unwrap_or(0);
        let mut aucs: Vec<f64> = traces
            .iter()
            .map(|t| {
                if t.len() < full || t.is_empty() {
                    f64::INFINITY
                } else {
                    t.iter().sum::<f64>() / t.len() as f64
                }
            })
            .collect();
        aucs.sort_by(f64::total_cmp);
        let median_auc = percentile_sorted(&aucs, 50.0);
        if best
            .get(&method)
            .is_some_and(|b| b.median_auc <= median_auc)
        {
            continue;
        }
        best.insert(
            method,
            CsvCell {
                method,
                alpha: f64::from_bits(alpha),
                beta: beta.map(f64::from_bits),
                median_auc,
                band: aggregate(&traces, percentiles, window)?,
            },
        );
    }
    Ok(best.into_values().collect())
}

/// Best cell of one method, as written to the summary JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCell {
    pub method: Method,
    pub alpha: f64,
    pub beta: Option<f64>,
    /// `null` when every run in the cell diverged.
    pub median_auc: Option<f64>,
    pub p10_auc: Option<f64>,
    pub p90_auc: Option<f64>,
    pub n_runs: usize,
    pub diverged_runs: usize,
}

impl From<&CellSummary> for BestCell {
    fn from(c: &CellSummary) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            method: c.method,
            alpha: c.alpha,
            beta: c.beta,
            median_auc: finite(c.median_auc),
            p10_auc: finite(c.p10_auc),
            p90_auc: finite(c.p90_auc),
            n_runs: c.n_runs,
            diverged_runs: c.diverged_runs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub best: Vec<BestCell>,
    pub cells: Vec<BestCell>,
}

impl Summary {
    pub fn new(outcome: &GridOutcome, methods: &[Method]) -> Self {
        Self {
            best: methods
                .iter()
                .filter_map(|&m| outcome.best(m))
                .map(BestCell::from)
                .collect(),
            cells: outcome.cells.iter().map(BestCell::from).collect(),
        }
    }
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD_L: f64 = 64.0;
const PAD_R: f64 = 16.0;
const PAD_T: f64 = 32.0;
const PAD_B: f64 = 40.0;

/// Self-contained SVG: median line and shaded 10–90 band on a log-y axis.
/// Points above the plotted range (including `+∞`) are clipped to the top.
pub fn render_svg(title: &str, trace: &BandedTrace) -> Result<String> {
    let get = |p| {
        trace
            .band(p)
            .ok_or_else(|| Error::Domain(format!("trace has no {p}th percentile")))
    };
    let (lo, mid, hi) = (get(10.0)?, get(50.0)?, get(90.0)?);
    if trace.is_empty() {
        return Err(Error::Empty("trace has no points"));
    }
    let finite = || {
        lo.iter()
            .chain(mid)
            .chain(hi)
            .copied()
            .filter(|v| v.is_finite() && *v > 0.0)
    };
    let ymin = finite().fold(f64::INFINITY, f64::min);
    let ymax = finite().fold(0.0, f64::max);
    let (ly0, ly1) = if ymin.is_finite() {
        let (a, b) = (ymin.log10().floor(), ymax.log10().ceil());
        (a, if b > a { b } else { a + 1.0 })
    } else {
        (0.0, 1.0)
    };
    let x0 = trace.steps[0] as f64;
    let x1 = (*trace.steps.last().unwrap() as f64).max(x0 + 1.0);
    let px = |s: usize| PAD_L + (s as f64 - x0) / (x1 - x0) * (W - PAD_L - PAD_R);
    let py = |v: f64| {
        let l = if v > 0.0 {
            v.log10().clamp(ly0, ly1)
        } else {
            ly0
        };
        H - PAD_B - (l - ly0) / (ly1 - ly0) * (H - PAD_T - PAD_B)
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    for d in (ly0 as i32)..=(ly1 as i32) {
        let y = py(10f64.powi(d));
        let _ = writeln!(
            s,
            r##"<line x1="{PAD_L}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"##,
            W - PAD_R,
            PAD_L - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">step</text>"#,
        (W + PAD_L) / 2.0,
        H - 8.0
    );

    let mut band = String::new();
    for (&st, &v) in trace.steps.iter().zip(hi) {
        let _ = write!(band, "{:.2},{:.2} ", px(st), py(v));
    }
    for (&st, &v) in trace.steps.iter().zip(lo).rev() {
        let _ = write!(band, "{:.2},{:.2} ", px(st), py(v));
    }
    let _ = writeln!(
        s,
        r##"<polygon points="{}" fill="#4a7ebb" fill-opacity="0.25" stroke="none"/>"##,
        band.trim_end()
    );
    let line: Vec<String> = trace
        .steps
        .iter()
        .zip(mid)
        .map(|(&st, &v)| format!("{:.2},{:.2}", px(st), py(v)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f3f73" stroke-width="1.5"/>"##,
        line.join(" ")
    );
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::grid::Cell;

    fn record(method: Method, beta: Option<f64>, seed: u64, rmse: Vec<f64>) -> RunRecord {
        let n = rmse.len();
        RunRecord {
            cell: Cell::new(method, -2.0, beta),
            seed,
            auc: rmse.iter().sum::<f64>() / n as f64,
            rmse,
            grad_norm: vec![1.0; n],
            diverged: false,
        }
    }

    fn write(records: &[RunRecord]) -> Vec<u8> {
        let mut sink = CsvSink::new(Vec::new()).unwrap();
        for r in records {
            sink.write_record(r).unwrap();
        }
        sink.finish().unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let buf = write(&[
            record(Method::Sgd, None, 3, vec![1.5, 2.0]),
            record(Method::PopArt, Some(-1.0), 3, vec![0.25]),
        ]);
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("method,alpha,beta,seed,step,rmse,grad_norm\n"));
        assert!(text.lines().nth(2).unwrap().starts_with("sgd,0.01,,3,2,"));
        assert!(!text.contains('\r'));
        let rows = read_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].method, Method::PopArt);
        assert_eq!(rows[2].beta, Some(0.1));
        assert_eq!((rows[1].step, rows[1].rmse), (2, 2.0));
    }

    #[test]
    fn header_only_when_empty() {
        assert_eq!(write(&[]), format!("{CSV_HEADER}\n").into_bytes());
        assert!(read_csv(write(&[]).as_slice()).unwrap().is_empty());
    }

    #[test]
    fn reader_rejects_wrong_header() {
        assert!(read_csv("a,b\n".as_bytes()).is_err());
        assert!(read_csv("".as_bytes()).is_err());
        let bad = format!("{CSV_HEADER}\nsgd,x,,1,1,1,1\n");
        assert!(read_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn best_cell_prefers_lower_median() {
        let records: Vec<RunRecord> = (0..3)
            .flat_map(|seed| {
                [
                    record(Method::Art, Some(-1.0), seed, vec![5.0; 4]),
                    record(Method::Art, Some(-2.0), seed, vec![2.0; 4]),
                ]
            })
            .collect();
        let buf = write(&records);
        let rows = read_csv(buf.as_slice()).unwrap();
        let best = best_cells_from_csv(&rows, &[10.0, 50.0, 90.0], 2).unwrap();
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].beta, Some(0.01));
        assert_eq!(best[0].median_auc, 2.0);
        assert_eq!(best[0].band.band(50.0).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn svg_is_self_contained() {
        let traces = [vec![1.0, 10.0, f64::INFINITY], vec![2.0, 20.0, 200.0]];
        let band = aggregate(&traces, &[10.0, 50.0, 90.0], 1).unwrap();
        let svg = render_svg("popart <best>", &band).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("&lt;best&gt;"));
        assert!(!svg.contains("href"));
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
