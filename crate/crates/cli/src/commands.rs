use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use lgf_core::autodiff::{finite_diff_check, GradCheckReport};
use lgf_core::checkpoint::{load_checkpoint, save_checkpoint};
use lgf_core::data::{
    load_csv, make_windows, normalize, synth_generate, write_csv, NormStats, SynthConfig,
    TimeSeriesDataset, WindowedSample,
};
use lgf_core::graph::{build_snapshot, edge_count, write_adjacency_csv, write_edge_list};
use lgf_core::metrics::{
    evaluate, export_assignments, export_embeddings, format_percent, write_ablation_csv,
    write_report_json, write_table1_csv, DiagnosisReport,
};
use lgf_core::model::window_adjacency;
use lgf_core::train::{sample_loss, train};
use lgf_core::{Ablation, ModelParameters, TrainConfig};

use crate::config::{CliConfig, ConfigError};

fn out_path(config: &CliConfig, name: &str) -> PathBuf {
    config.out_dir.join(name)
}

fn checkpoint_path(config: &CliConfig) -> PathBuf {
    config
        .checkpoint
        .clone()
        .unwrap_or_else(|| out_path(config, "model.lgfm"))
}

/// Keeps the first `max` runs of every class; 0 keeps everything.
fn limit_runs(data: TimeSeriesDataset, max: usize) -> Result<TimeSeriesDataset> {
    if max == 0 {
        return Ok(data);
    }
    let mut seen = vec![0usize; data.num_classes() + 1];
    Ok(data.filter_runs(|_, run| {
        seen[run.label] += 1;
        seen[run.label] <= max
    })?)
}

fn load(config: &CliConfig, path: &Path) -> Result<TimeSeriesDataset> {
    let data = load_csv(path, &config.schema)
        .with_context(|| format!("loading {}", path.display()))?;
    limit_runs(data, config.max_runs_per_class)
}

fn windows_of(data: &TimeSeriesDataset, w: usize, stride: usize) -> Result<Vec<WindowedSample>> {
    Ok(make_windows(data, w, stride)?)
}

fn summary(report: &DiagnosisReport) -> String {
    let a = &report.averages;
    format!(
        "average FDR {}%, P {}%, F1 {}%",
        format_percent(a.fdr),
        format_percent(a.precision),
        format_percent(a.f1)
    )
}

pub fn synth(config: &CliConfig) -> Result<()> {
    let runs = config.synth_runs_per_class;
    if config.synth_test_runs >= runs {
        return Err(ConfigError::Rejected(format!(
            "`synth_test_runs` ({}) must be below `synth_runs_per_class` ({runs})",
            config.synth_test_runs
        ))
        .into());
    }
    let synth = SynthConfig {
        classes: config.synth_classes,
        variables: config.synth_variables,
        runs_per_class: runs,
        run_length: config.synth_run_length,
        window_length: config.train.window_length,
        noise: config.synth_noise,
        seed: config.train.seed,
    };
    let data = synth_generate(&synth).context("synthesizing data (keys `synth_*`)")?;
    // runs are stored class by class
    let split = runs - config.synth_test_runs;
    let train = data.filter_runs(|i, _| i % runs < split)?;
    let train_path = out_path(config, "synth_train.csv");
    write_csv(&train, &config.schema, &train_path)?;
    println!("wrote {} ({} runs)", train_path.display(), train.runs().len());
    if config.synth_test_runs > 0 {
        let test = data.filter_runs(|i, _| i % runs >= split)?;
        let test_path = out_path(config, "synth_test.csv");
        write_csv(&test, &config.schema, &test_path)?;
        println!("wrote {} ({} runs)", test_path.display(), test.runs().len());
    }
    Ok(())
}

fn train_windows(config: &CliConfig) -> Result<(Vec<WindowedSample>, NormStats)> {
    let raw = load(config, config.require_train_data()?)?;
    let (data, stats) = normalize(&raw, None)?;
    let windows = windows_of(&data, config.train.window_length, config.train.stride)?;
    Ok((windows, stats))
}

fn test_windows(
    config: &CliConfig,
    stats: Option<&NormStats>,
    window_length: usize,
) -> Result<Vec<WindowedSample>> {
    let raw = load(config, config.require_test_data()?)?;
    let (data, _) = normalize(&raw, stats)?;
    windows_of(&data, window_length, config.train.stride)
}

pub fn train_command(config: &CliConfig) -> Result<()> {
    let (windows, stats) = train_windows(config)?;
    log::info!(
        "training {} on {} windows of {} variables",
        config.train.ablation,
        windows.len(),
        windows[0].num_vars()
    );
    let start = Instant::now();
    let (mut params, history) = train(&config.train, &windows)?;
    params.norm = Some(stats);
    let ckpt = checkpoint_path(config);
    save_checkpoint(&params, &ckpt)?;
    history.write_csv(out_path(config, "history.csv"))?;
    let last = history.epochs.last();
    println!(
        "trained {} epochs in {:.1}s, final loss {}, train accuracy {}; checkpoint {}",
        history.epochs.len(),
        start.elapsed().as_secs_f64(),
        last.map_or("n/a".into(), |r| format!("{:.5}", r.total_loss)),
        last.map_or("n/a".into(), |r| format!("{:.3}", r.train_accuracy)),
        ckpt.display()
    );
    Ok(())
}

pub fn eval(config: &CliConfig) -> Result<()> {
    let ckpt = config.require_checkpoint()?;
    config.require_test_data()?;
    let mut params = load_checkpoint(ckpt)?;
    params.config.threads = config.train.threads;
    if params.norm.is_none() {
        log::warn!("checkpoint has no normalization statistics; fitting them on the test data");
    }
    let windows = test_windows(config, params.norm.as_ref(), params.config.window_length)?;
    if let Some(w) = windows.iter().find(|w| w.label > params.classes) {
        bail!("test data has class {} but the model knows {} classes", w.label, params.classes);
    }
    let report = evaluate(&params, &windows)?;
    write_report_json(&report, out_path(config, "report.json"))?;
    write_table1_csv(&report, out_path(config, "table1.csv"))?;
    if config.export_embeddings {
        export_embeddings(&params, &windows, out_path(config, "embeddings.csv"))?;
    }
    if config.export_assignments {
        export_assignments(&params, &windows, out_path(config, "assignments.csv"))?;
    }
    println!("{} test windows: {}", windows.len(), summary(&report));
    Ok(())
}

pub fn ablate(config: &CliConfig) -> Result<()> {
    config.require_test_data()?;
    let (train_set, stats) = train_windows(config)?;
    let test_set = test_windows(config, Some(&stats), config.train.window_length)?;
    let mut results: Vec<(Ablation, DiagnosisReport)> = Vec::new();
    for ablation in Ablation::TABLE_ORDER {
        let variant = TrainConfig {
            ablation,
            ..config.train.clone()
        };
        let start = Instant::now();
        let (params, history) =
            train(&variant, &train_set).with_context(|| format!("training {ablation}"))?;
        let report = evaluate(&params, &test_set)?;
        history.write_csv(out_path(config, &format!("history_{ablation}.csv")))?;
        write_report_json(&report, out_path(config, &format!("report_{ablation}.json")))?;
        println!(
            "{:<20} {} ({:.1}s)",
            ablation.title(),
            summary(&report),
            start.elapsed().as_secs_f64()
        );
        results.push((ablation, report));
    }
    let path = out_path(config, "ablation.csv");
    write_ablation_csv(&results, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// The small configuration gradients are checked on.
pub fn gradcheck_config(config: &CliConfig) -> TrainConfig {
    TrainConfig {
        window_length: 8,
        lstm_hidden: 4,
        sage_dim: 4,
        gf_dim: 4,
        head_hidden: 8,
        supernodes: 2,
        ablation: config.train.ablation,
        seed: config.train.seed,
        corr_threshold: config.train.corr_threshold,
        alpha_pool: config.train.alpha_pool,
        ..TrainConfig::desk(1)
    }
}

/// Finite-difference check of the full training loss on the small configuration.
pub fn gradcheck_report(config: &CliConfig) -> Result<GradCheckReport> {
    let tiny = gradcheck_config(config);
    let data = synth_generate(&SynthConfig {
        classes: 2,
        variables: 6,
        runs_per_class: 1,
        run_length: 16,
        window_length: 8,
        noise: 0.1,
        seed: config.train.seed,
    })?;
    let window = make_windows(&data, 8, 8)?.remove(0);
    let mut params = ModelParameters::init(&tiny, 6, 2)?;
    params.randomize_biases(0.5, config.train.seed);
    let adjacency = window_adjacency(&params, &window)?;
    Ok(finite_diff_check(
        |tape, bound| Ok(sample_loss(tape, bound, &params, &window, &adjacency)?.total),
        &params.store,
        config.step,
    )?)
}

/// Returns false when some parameter exceeds the tolerance.
pub fn gradcheck(config: &CliConfig) -> Result<bool> {
    let report = gradcheck_report(config)?;
    println!("{:<24} {:>12} {:>12}", "parameter", "max rel", "max abs");
    for p in &report.params {
        println!("{:<24} {:>12.3e} {:>12.3e}", p.name, p.max_rel_error, p.max_abs_error);
    }
    let ok = report.max_rel_error <= config.tolerance;
    println!(
        "max relative error {:.3e} (tolerance {:.1e}): {}",
        report.max_rel_error,
        config.tolerance,
        if ok { "ok" } else { "FAILED" }
    );
    Ok(ok)
}

pub fn inspect_graph(config: &CliConfig) -> Result<()> {
    let (windows, _) = train_windows(config)?;
    let Some(window) = windows.get(config.window_index) else {
        return Err(ConfigError::Rejected(format!(
            "`window_index` {} is out of range; the data has {} windows",
            config.window_index,
            windows.len()
        ))
        .into());
    };
    let snapshot = build_snapshot(window, config.train.corr_threshold)?;
    let adjacency = out_path(config, "adjacency.csv");
    let edges = out_path(config, "edges.csv");
    write_adjacency_csv(&snapshot, &adjacency)?;
    write_edge_list(&snapshot, &edges)?;
    println!(
        "window {} (class {}): {} nodes, {} edges; wrote {} and {}",
        config.window_index,
        window.label,
        snapshot.node_count,
        edge_count(&snapshot),
        adjacency.display(),
        edges.display()
    );
    Ok(())
}

pub fn write_resolved(config: &CliConfig) -> Result<()> {
    fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("creating {}", config.out_dir.display()))?;
    let path = out_path(config, "resolved_config.txt");
    fs::write(&path, config.render()).with_context(|| format!("writing {}", path.display()))
}
