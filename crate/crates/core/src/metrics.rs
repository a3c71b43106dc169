//! Confusion matrices, per-class FDR / precision / F1 and report files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Ablation;
use crate::data::WindowedSample;
use crate::error::{Error, Result};
use crate::model::{predict, ModelParameters, Prediction};

/// Rows are true classes, columns predicted classes (both 1-based in meaning).
pub type Confusion = Vec<Vec<u64>>;

pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<Confusion> {
    if preds.len() != labels.len() {
        return Err(Error::dim("confusion", &[preds.len()], &[labels.len()]));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &y) in preds.iter().zip(labels) {
        for c in [p, y] {
            if c == 0 || c > classes {
                return Err(Error::Contract(format!("class {c} outside 1..={classes}")));
            }
        }
        m[y - 1][p - 1] += 1;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    /// Percentages in `[0, 100]`, unrounded.
    pub fdr: f64,
    pub precision: f64,
    pub f1: f64,
    /// Names of metrics whose denominator was zero and were reported as 0.
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub fdr: f64,
    pub precision: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub confusion: Confusion,
    pub per_class: Vec<ClassMetrics>,
    pub averages: Averages,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn class_metrics(confusion: &Confusion) -> DiagnosisReport {
    let k = confusion.len();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c];
        let row: u64 = confusion[c].iter().sum();
        let col: u64 = confusion.iter().map(|r| r[c]).sum();
        let mut flags = Vec::new();
        let fdr = ratio(tp, row).unwrap_or_else(|| {
            flags.push("fdr_undefined".to_string());
            0.0
        });
        let precision = ratio(tp, col).unwrap_or_else(|| {
            flags.push("precision_undefined".to_string());
            0.0
        });
        let f1 = if fdr + precision > 0.0 {
            2.0 * fdr * precision / (fdr + precision)
        } else {
            flags.push("f1_undefined".to_string());
            0.0
        };
        per_class.push(ClassMetrics {
            class: c + 1,
            fdr,
            precision,
            f1,
            flags,
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k.max(1) as f64;
    let averages = Averages {
        fdr: mean(|m| m.fdr),
        precision: mean(|m| m.precision),
        f1: mean(|m| m.f1),
    };
    DiagnosisReport {
        confusion: confusion.clone(),
        per_class,
        averages,
    }
}

/// Half-up rounding to one decimal.
pub fn format_percent(value: f64) -> String {
    let scaled = (value * 10.0 + 0.5).floor() / 10.0;
    format!("{scaled:.1}")
}

/// Predictions for every window, in order.
pub fn predict_all(params: &ModelParameters, windows: &[WindowedSample]) -> Result<Vec<Prediction>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| windows.par_iter().map(|w| predict(params, w)).collect())
}

pub fn evaluate(params: &ModelParameters, windows: &[WindowedSample]) -> Result<DiagnosisReport> {
    let preds: Vec<usize> = predict_all(params, windows)?.iter().map(|p| p.class).collect();
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    Ok(class_metrics(&confusion(&preds, &labels, params.classes)?))
}

pub fn write_report_json(report: &DiagnosisReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// `Fault,FDR,P,F1` rows plus an `Average` row.
pub fn write_table1_csv(report: &DiagnosisReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = crate::error::csv_writer(path.as_ref())?;
    w.write_record(["Fault", "FDR", "P", "F1"])?;
    for m in &report.per_class {
        w.write_record([
            m.class.to_string(),
            format_percent(m.fdr),
            format_percent(m.precision),
            format_percent(m.f1),
        ])?;
    }
    let a = &report.averages;
    w.write_record([
        "Average".to_string(),
        format_percent(a.fdr),
        format_percent(a.precision),
        format_percent(a.f1),
    ])?;
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// One column group of FDR/P/F1 per variant, per-class rows plus `Average`.
pub fn write_ablation_csv(
    results: &[(Ablation, DiagnosisReport)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let classes = results.first().map_or(0, |(_, r)| r.per_class.len());
    if results.iter().any(|(_, r)| r.per_class.len() != classes) {
        return Err(Error::Contract("ablation reports disagree on class count".into()));
    }
    let mut w = crate::error::csv_writer(path.as_ref())?;
    let mut header = vec!["Fault".to_string()];
    for (a, _) in results {
        for metric in ["FDR", "P", "F1"] {
            header.push(format!("{} {metric}", a.title()));
        }
    }
    w.write_record(&header)?;
    for c in 0..classes {
        let mut row = vec![(c + 1).to_string()];
        for (_, r) in results {
            let m = &r.per_class[c];
            row.extend([m.fdr, m.precision, m.f1].map(format_percent));
        }
        w.write_record(&row)?;
    }
    let mut row = vec!["Average".to_string()];
    for (_, r) in results {
        let a = &r.averages;
        row.extend([a.fdr, a.precision, a.f1].map(format_percent));
    }
    w.write_record(&row)?;
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// `label,e1,..,eD` with the head's input vector for each window.
pub fn export_embeddings(
    params: &ModelParameters,
    windows: &[WindowedSample],
    path: impl AsRef<Path>,
) -> Result<()> {
    let preds = predict_all(params, windows)?;
    let mut w = crate::error::csv_writer(path.as_ref())?;
    let mut header = vec!["label".to_string()];
    header.extend((1..=params.fused_width()).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for (win, p) in windows.iter().zip(&preds) {
        let mut row = vec![win.label.to_string()];
        row.extend(p.fused.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// `window,level,node,s1..sK`: one row per node per pooling level. Levels with
/// fewer super-nodes than the widest leave trailing cells empty.
pub fn export_assignments(
    params: &ModelParameters,
    windows: &[WindowedSample],
    path: impl AsRef<Path>,
) -> Result<()> {
    let preds = predict_all(params, windows)?;
    let width = params.pool.iter().map(|p| p.supernodes).max().unwrap_or(0);
    let mut w = crate::error::csv_writer(path.as_ref())?;
    let mut header = vec!["window".to_string(), "level".to_string(), "node".to_string()];
    header.extend((1..=width).map(|k| format!("s{k}")));
    w.write_record(&header)?;
    for (i, p) in preds.iter().enumerate() {
        for (level, s) in p.assignments.iter().enumerate() {
            for node in 0..s.rows() {
                let mut row = vec![i.to_string(), level.to_string(), node.to_string()];
                row.extend(s.row(node).iter().map(f64::to_string));
                row.resize(3 + width, String::new());
                w.write_record(&row)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up_formatting() {
        assert_eq!(format_percent(71.94), "71.9");
        assert_eq!(format_percent(78.99), "79.0");
        assert_eq!(format_percent(100.0), "100.0");
        assert_eq!(format_percent(0.25), "0.3");
    }

    #[test]
    fn degenerate_denominators_are_flagged() {
        let m = vec![vec![2, 0], vec![3, 0]];
        let r = class_metrics(&m);
        let c2 = &r.per_class[1];
        assert_eq!((c2.fdr, c2.precision, c2.f1), (0.0, 0.0, 0.0));
        assert_eq!(c2.flags, vec!["precision_undefined", "f1_undefined"]);
        assert!(r.per_class[0].flags.is_empty());
    }

    #[test]
    fn out_of_range_class() {
        assert!(matches!(confusion(&[3], &[1], 2), Err(Error::Contract(_))));
        assert!(matches!(confusion(&[1], &[0], 2), Err(Error::Contract(_))));
    }
}
