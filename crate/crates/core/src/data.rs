//! Loading, synthesizing, normalizing and windowing multivariate runs.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// One contiguous simulation run inside a [`TimeSeriesDataset`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Run {
    pub id: String,
    pub label: usize,
    pub start: usize,
    pub end: usize,
}

impl Run {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// `Z × N` samples grouped into labeled runs. Rows of one run are contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    values: Vec<f64>,
    variable_names: Vec<String>,
    runs: Vec<Run>,
}

impl TimeSeriesDataset {
    pub fn new(values: Vec<f64>, variable_names: Vec<String>, runs: Vec<Run>) -> Result<Self> {
        let n = variable_names.len();
        if n == 0 || !values.len().is_multiple_of(n) {
            return Err(Error::dim("dataset", &[values.len()], &[n]));
        }
        let rows = values.len() / n;
        let mut expect = 0;
        for r in &runs {
            if r.start != expect || r.end < r.start || r.label == 0 {
                return Err(Error::Contract(format!("run `{}` is malformed", r.id)));
            }
            expect = r.end;
        }
        if expect != rows {
            return Err(Error::Contract("runs do not cover every row".into()));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("dataset contains NaN".into()));
        }
        Ok(Self {
            values,
            variable_names,
            runs,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.values.len() / self.num_vars()
    }

    pub fn num_vars(&self) -> usize {
        self.variable_names.len()
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn run_labels(&self) -> Vec<usize> {
        self.runs.iter().map(|r| r.label).collect()
    }

    /// Start row of each run.
    pub fn run_boundaries(&self) -> Vec<usize> {
        self.runs.iter().map(|r| r.start).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.runs.iter().map(|r| r.label).max().unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.num_vars();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.num_rows()).map(|i| self.row(i)[j]).collect()
    }

    /// Keeps only the runs for which `keep` returns true.
    pub fn filter_runs(&self, mut keep: impl FnMut(usize, &Run) -> bool) -> Result<Self> {
        let n = self.num_vars();
        let mut values = Vec::new();
        let mut runs = Vec::new();
        for (i, r) in self.runs.iter().enumerate() {
            if !keep(i, r) {
                continue;
            }
            let start = values.len() / n;
            values.extend_from_slice(&self.values[r.start * n..r.end * n]);
            runs.push(Run {
                id: r.id.clone(),
                label: r.label,
                start,
                end: start + r.len(),
            });
        }
        if runs.is_empty() {
            return Err(Error::EmptyInput("no runs selected".into()));
        }
        Self::new(values, self.variable_names.clone(), runs)
    }
}

/// Column mapping for CSV input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub label_column: String,
    pub run_column: String,
    /// Explicit variable columns; empty means every column not named elsewhere.
    pub variable_columns: Vec<String>,
    /// Columns skipped when variable columns are inferred.
    pub ignore_columns: Vec<String>,
}

impl Default for Schema {
    /// Public TEP simulation export layout: `faultNumber, simulationRun, sample`,
    /// then the 52 measured and manipulated variables.
    fn default() -> Self {
        Self {
            label_column: "faultNumber".into(),
            run_column: "simulationRun".into(),
            variable_columns: Vec::new(),
            ignore_columns: vec!["sample".into()],
        }
    }
}

/// Reads a CSV into runs. Rows are grouped by `(run id, label)` in order of
/// first appearance; the TEP exports reuse run numbers across fault classes.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv(reader: impl std::io::Read, schema: &Schema) -> Result<TimeSeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::EmptyInput("CSV has no header".into()));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(name.to_string()))
    };
    let label_idx = find(&schema.label_column)?;
    let run_idx = find(&schema.run_column)?;
    let var_idx: Vec<usize> = if schema.variable_columns.is_empty() {
        (0..headers.len())
            .filter(|&i| {
                i != label_idx
                    && i != run_idx
                    && !schema.ignore_columns.iter().any(|c| c == &headers[i])
            })
            .collect()
    } else {
        schema
            .variable_columns
            .iter()
            .map(|c| find(c))
            .collect::<Result<_>>()?
    };
    if var_idx.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 variable columns, found {}",
            var_idx.len()
        )));
    }

    let mut groups: Vec<(String, usize, Vec<f64>)> = Vec::new();
    let mut lookup: HashMap<(String, usize), usize> = HashMap::new();
    let mut rows = 0usize;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let row = line + 2;
        let cell = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: headers[idx].clone(),
                message: format!("`{raw}` is not a number"),
            })?;
            if v.is_nan() {
                return Err(Error::Parse {
                    row,
                    column: headers[idx].clone(),
                    message: "NaN".into(),
                });
            }
            Ok(v)
        };
        let label_value = cell(label_idx)?;
        if label_value < 1.0 || label_value.fract() != 0.0 {
            return Err(Error::Parse {
                row,
                column: headers[label_idx].clone(),
                message: format!("label {label_value} is not a class in 1..K"),
            });
        }
        let label = label_value as usize;
        let run_id = record.get(run_idx).unwrap_or("").to_string();
        let slot = *lookup.entry((run_id.clone(), label)).or_insert_with(|| {
            groups.push((run_id, label, Vec::new()));
            groups.len() - 1
        });
        for &j in &var_idx {
            let v = cell(j)?;
            groups[slot].2.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyInput("CSV has no data rows".into()));
    }

    let n = var_idx.len();
    let mut values = Vec::with_capacity(rows * n);
    let mut runs = Vec::with_capacity(groups.len());
    for (id, label, data) in groups {
        let start = values.len() / n;
        values.extend(data);
        let end = values.len() / n;
        runs.push(Run {
            id,
            label,
            start,
            end,
        });
    }
    let names = var_idx.iter().map(|&i| headers[i].clone()).collect();
    TimeSeriesDataset::new(values, names, runs)
}

/// Writes `dataset` using `schema`'s label/run columns plus a `sample` index column.
pub fn write_csv(dataset: &TimeSeriesDataset, schema: &Schema, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = crate::error::csv_writer(path)?;
    let mut header = vec![
        schema.label_column.clone(),
        schema.run_column.clone(),
        "sample".to_string(),
    ];
    header.extend(dataset.variable_names.iter().cloned());
    w.write_record(&header)?;
    for run in &dataset.runs {
        for (k, i) in (run.start..run.end).enumerate() {
            let mut rec = vec![run.label.to_string(), run.id.clone(), (k + 1).to_string()];
            rec.extend(dataset.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-variable z-score statistics, fit on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Z-scores every column. Without `stats` the statistics are fit on all rows
/// (every class together) with the sample standard deviation; with `stats`
/// they are applied unchanged.
pub fn normalize(
    dataset: &TimeSeriesDataset,
    stats: Option<&NormStats>,
) -> Result<(TimeSeriesDataset, NormStats)> {
    let n = dataset.num_vars();
    let stats = match stats {
        Some(s) => {
            if s.mean.len() != n || s.std.len() != n {
                return Err(Error::dim("normalize", &[s.mean.len()], &[n]));
            }
            s.clone()
        }
        None => fit_stats(dataset),
    };
    let mut values = dataset.values.clone();
    for row in values.chunks_mut(n) {
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / s;
        }
    }
    let out = TimeSeriesDataset {
        values,
        variable_names: dataset.variable_names.clone(),
        runs: dataset.runs.clone(),
    };
    Ok((out, stats))
}

fn fit_stats(dataset: &TimeSeriesDataset) -> NormStats {
    let n = dataset.num_vars();
    let z = dataset.num_rows();
    let mut mean = vec![0.0; n];
    for i in 0..z {
        for (m, v) in mean.iter_mut().zip(dataset.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= z as f64);
    // a constant column's mean may round off its value; pin it so the column maps to exact zeros
    let mut constant = vec![true; n];
    for i in 1..z {
        for (j, v) in dataset.row(i).iter().enumerate() {
            constant[j] &= *v == dataset.row(0)[j];
        }
    }
    for j in (0..n).filter(|&j| constant[j] && z > 0) {
        mean[j] = dataset.row(0)[j];
    }
    let mut var = vec![0.0; n];
    for i in 0..z {
        for ((s, v), m) in var.iter_mut().zip(dataset.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let denom = (z.max(2) - 1) as f64;
    let std = var
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let sd = (s / denom).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                log::warn!(
                    "variable `{}` has zero variance; using std = 1",
                    dataset.variable_names[j]
                );
                1.0
            }
        })
        .collect();
    NormStats { mean, std }
}

/// Where a window came from: run index and the run-relative index of its last row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowOrigin {
    pub run: usize,
    pub end: usize,
}

/// `w × N` segment `X_t` with its run's fault label.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedSample {
    pub segment: Tensor,
    pub label: usize,
    pub origin: WindowOrigin,
}

impl WindowedSample {
    pub fn window_length(&self) -> usize {
        self.segment.rows()
    }

    pub fn num_vars(&self) -> usize {
        self.segment.cols()
    }

    /// Column `j` of the segment (one variable's time series).
    pub fn variable(&self, j: usize) -> Vec<f64> {
        (0..self.segment.rows()).map(|s| self.segment.at(s, j)).collect()
    }
}

/// Cuts each run into windows of `w` rows every `stride` rows; windows never
/// cross a run boundary.
pub fn make_windows(
    dataset: &TimeSeriesDataset,
    w: usize,
    stride: usize,
) -> Result<Vec<WindowedSample>> {
    if w < 2 {
        return Err(Error::Config(format!("window length must be >= 2, got {w}")));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let n = dataset.num_vars();
    let mut out = Vec::new();
    for (ri, run) in dataset.runs.iter().enumerate() {
        if run.len() < w {
            return Err(Error::Config(format!(
                "run `{}` has {} rows, shorter than window length {w}",
                run.id,
                run.len()
            )));
        }
        let count = (run.len() - w) / stride + 1;
        for k in 0..count {
            let first = run.start + k * stride;
            let data = dataset.values[first * n..(first + w) * n].to_vec();
            out.push(WindowedSample {
                segment: Tensor::matrix(w, n, data)?,
                label: run.label,
                origin: WindowOrigin {
                    run: ri,
                    end: k * stride + w - 1,
                },
            });
        }
    }
    Ok(out)
}

/// Synthetic stand-in for plant runs with class-specific correlation and dynamics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub variables: usize,
    pub runs_per_class: usize,
    pub run_length: usize,
    /// Window length the data is meant for; runs must be at least twice as long.
    pub window_length: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            variables: 10,
            runs_per_class: 6,
            run_length: 200,
            window_length: 20,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Generative structure of one synthetic class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProfile {
    /// Group index of each variable; variables in a group share one latent driver.
    pub groups: Vec<usize>,
    pub loadings: Vec<f64>,
    /// AR(1) coefficient of the latent drivers.
    pub ar: f64,
}

pub const SYNTH_AR_RANGE: (f64, f64) = (0.1, 0.9);

/// Draws the per-class structure for `config`.
pub fn synth_profiles(config: &SynthConfig) -> Vec<ClassProfile> {
    let k = config.classes;
    (0..k)
        .map(|c| {
            let mut rng = rng::stream(config.seed, "synth-class", c as u64);
            let n = config.variables;
            let n_groups = if n >= 6 { rng.gen_range(2..=3) } else { 2 };
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut groups = vec![0; n];
            for (pos, &var) in order.iter().enumerate() {
                groups[var] = pos * n_groups / n;
            }
            let loadings = (0..n).map(|_| rng.gen_range(0.6..1.4)).collect();
            let (lo, hi) = SYNTH_AR_RANGE;
            let ar = lo + (hi - lo) * c as f64 / (k - 1) as f64;
            ClassProfile {
                groups,
                loadings,
                ar,
            }
        })
        .collect()
}

/// Generates `classes × runs_per_class` runs. Each variable is its group's
/// unit-variance AR(1) driver scaled by a loading plus white noise of std `noise`.
pub fn synth_generate(config: &SynthConfig) -> Result<TimeSeriesDataset> {
    if config.classes < 2 {
        return Err(Error::Config(format!("classes must be >= 2, got {}", config.classes)));
    }
    if config.variables < 4 {
        return Err(Error::Config(format!(
            "variables must be >= 4, got {}",
            config.variables
        )));
    }
    if config.runs_per_class == 0 {
        return Err(Error::Config("runs_per_class must be positive".into()));
    }
    if config.window_length < 2 || config.run_length < 2 * config.window_length {
        return Err(Error::Config(format!(
            "run_length {} must be at least twice window_length {}",
            config.run_length, config.window_length
        )));
    }
    if config.noise.is_nan() || config.noise < 0.0 {
        return Err(Error::Config("noise must be non-negative".into()));
    }
    let profiles = synth_profiles(config);
    let n = config.variables;
    let z = config.run_length;
    let mut values = Vec::with_capacity(config.classes * config.runs_per_class * z * n);
    let mut runs = Vec::new();
    for (c, profile) in profiles.iter().enumerate() {
        let n_groups = profile.groups.iter().max().unwrap() + 1;
        let phi = profile.ar;
        let innov = (1.0 - phi * phi).sqrt();
        for r in 0..config.runs_per_class {
            let index = (c * config.runs_per_class + r) as u64;
            let mut rng = rng::stream(config.seed, "synth-run", index);
            let mut latent: Vec<f64> = (0..n_groups).map(|_| rng.sample(StandardNormal)).collect();
            let start = values.len() / n;
            for _ in 0..z {
                for l in latent.iter_mut() {
                    let e: f64 = rng.sample(StandardNormal);
                    *l = phi * *l + innov * e;
                }
                for j in 0..n {
                    let e: f64 = rng.sample(StandardNormal);
                    values.push(profile.loadings[j] * latent[profile.groups[j]] + config.noise * e);
                }
            }
            runs.push(Run {
                id: format!("{}", r + 1),
                label: c + 1,
                start,
                end: start + z,
            });
        }
    }
    let names = (1..=n).map(|j| format!("x{j}")).collect();
    TimeSeriesDataset::new(values, names, runs)
}
