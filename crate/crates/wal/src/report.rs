//! CSV emission.
//!
//! `metrics.csv` has one row per (method, axis value, seed) cell with the
//! columns `method, seed, [axis_value,] accuracy, per_class_0 .. per_class_{M-1},
//! wall_time`. Accuracies are fractions in `[0, 1]`; a class absent from the
//! validation set has per-class accuracy `NaN`. `wall_time` is seconds, or 0
//! unless wall-time recording is switched on, which keeps the file
//! reproducible byte for byte. Rows are sorted by method, axis value, seed.
//!
//! `sweep.csv` aggregates over seeds with the columns `method, axis,
//! axis_value, n_seeds, mean_accuracy, std_accuracy,
//! mean_annotator_accuracy`, where the standard deviation is the sample one
//! (0 for a single seed).

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};
use wal_core::baselines::Method;

use crate::config::Axis;

/// The measured outcome of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub method: Method,
    pub seed: u64,
    pub axis_value: Option<f64>,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub class_counts: Vec<usize>,
    /// Accuracy of the weak annotator on the same validation set.
    pub annotator_accuracy: f64,
    pub wall_time: f64,
}

pub fn cell_order(a: &CellMetrics, b: &CellMetrics) -> Ordering {
    a.method
        .cmp(&b.method)
        .then_with(|| match (a.axis_value, b.axis_value) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (x, y) => x.is_some().cmp(&y.is_some()),
        })
        .then(a.seed.cmp(&b.seed))
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

/// Write `metrics.csv` content. `rows` need not be sorted.
pub fn write_metrics<W: Write>(out: W, rows: &[CellMetrics], with_axis: bool) -> csv::Result<()> {
    let mut rows: Vec<&CellMetrics> = rows.iter().collect();
    rows.sort_by(|a, b| cell_order(a, b));
    let width = rows.iter().map(|r| r.per_class_accuracy.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["method".to_string(), "seed".to_string()];
    if with_axis {
        header.push("axis_value".into());
    }
    header.push("accuracy".into());
    header.extend((0..width).map(|c| format!("per_class_{c}")));
    header.push("wall_time".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.method.name().to_string(), r.seed.to_string()];
        if with_axis {
            rec.push(r.axis_value.map(num).unwrap_or_default());
        }
        rec.push(num(r.accuracy));
        rec.extend((0..width).map(|c| r.per_class_accuracy.get(c).copied().map(num).unwrap_or_default()));
        rec.push(num(r.wall_time));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Seed-aggregated accuracy of one method at one axis value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub method: Method,
    pub axis_value: f64,
    pub n_seeds: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_annotator_accuracy: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Group rows by (method, axis value) and average over seeds.
pub fn aggregate(rows: &[CellMetrics]) -> Vec<SweepPoint> {
    let mut rows: Vec<&CellMetrics> = rows.iter().filter(|r| r.axis_value.is_some()).collect();
    rows.sort_by(|a, b| cell_order(a, b));
    let mut out = Vec::new();
    for group in rows.chunk_by(|a, b| a.method == b.method && a.axis_value == b.axis_value) {
        let acc: Vec<f64> = group.iter().map(|r| r.accuracy).collect();
        let ann: Vec<f64> = group.iter().map(|r| r.annotator_accuracy).collect();
        let (mean, std) = mean_std(&acc);
        out.push(SweepPoint {
            method: group[0].method,
            axis_value: group[0].axis_value.expect("filtered"),
            n_seeds: group.len(),
            mean_accuracy: mean,
            std_accuracy: std,
            mean_annotator_accuracy: mean_std(&ann).0,
        });
    }
    out
}

pub fn write_sweep<W: Write>(out: W, axis: Axis, points: &[SweepPoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "axis",
        "axis_value",
        "n_seeds",
        "mean_accuracy",
        "std_accuracy",
        "mean_annotator_accuracy",
    ])?;
    for p in points {
        w.write_record([
            p.method.name().to_string(),
            axis.name().to_string(),
            num(p.axis_value),
            p.n_seeds.to_string(),
            num(p.mean_accuracy),
            num(p.std_accuracy),
            num(p.mean_annotator_accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed `metrics.csv` row, for tools reading results back.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub seed: u64,
    pub axis_value: Option<f64>,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub wall_time: f64,
}

pub fn read_metrics<R: std::io::Read>(input: R) -> Result<Vec<MetricsRow>, String> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(m), Some(s), Some(a), Some(wt)) = (col("method"), col("seed"), col("accuracy"), col("wall_time")) else {
        return Err("metrics.csv is missing a required column".into());
    };
    let axis = col("axis_value");
    let per_class: Vec<usize> = (0..)
        .map_while(|c| col(&format!("per_class_{c}")))
        .collect();
    let f = |s: &str| s.parse::<f64>().map_err(|e| format!("bad number `{s}`: {e}"));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        rows.push(MetricsRow {
            method: rec[m].to_string(),
            seed: rec[s].parse().map_err(|e| format!("bad seed: {e}"))?,
            axis_value: axis.map(|i| f(&rec[i])).transpose()?,
            accuracy: f(&rec[a])?,
            per_class_accuracy: per_class.iter().map(|&i| f(&rec[i])).collect::<Result<_, _>>()?,
            wall_time: f(&rec[wt])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, seed: u64, axis: Option<f64>, acc: f64) -> CellMetrics {
        CellMetrics {
            method,
            seed,
            axis_value: axis,
            accuracy: acc,
            per_class_accuracy: vec![acc, f64::NAN],
            class_counts: vec![3, 0],
            annotator_accuracy: 0.5,
            wall_time: 0.0,
        }
    }

    #[test]
    fn metrics_rows_are_sorted_and_round_trip() {
        let rows = vec![
            row(Method::Bt, 1, None, 0.5),
            row(Method::Wal, 0, None, 0.75),
            row(Method::Bt, 0, None, 0.25),
        ];
        let mut buf = Vec::new();
        write_metrics(&mut buf, &rows, false).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("method,seed,accuracy,per_class_0,per_class_1,wall_time\nwal,0,0.75,0.75,NaN,0\nbt,0,"));
        let back = read_metrics(&buf[..]).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2].accuracy, 0.5);
        assert!(back[0].per_class_accuracy[1].is_nan());
    }

    #[test]
    fn aggregate_uses_sample_std() {
        let rows = vec![
            row(Method::Wal, 0, Some(2.0), 0.5),
            row(Method::Wal, 1, Some(2.0), 0.7),
            row(Method::Wal, 0, Some(1.0), 0.4),
        ];
        let pts = aggregate(&rows);
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].axis_value, 1.0);
        assert_eq!(pts[0].std_accuracy, 0.0);
        assert!((pts[1].mean_accuracy - 0.6).abs() < 1e-12);
        assert!((pts[1].std_accuracy - 0.02f64.sqrt()).abs() < 1e-12);
    }
}
