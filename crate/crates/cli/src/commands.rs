use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use dimignn::checkpoint::{write_history, Checkpoint};
use dimignn::data::{load_csv, make_windows, split_chronological, NormStats, SeriesTensor};
use dimignn::experiment::{ablate as run_ablation, ablation_order_holds, prepare, run_scored, synthetic_series, Variant};
use dimignn::tip::{dnsm_select, DnsmConfig, VariableProfile};
use dimignn::train::{evaluate_persistence_scaled, evaluate_scaled, ForecastReport};
use serde_json::json;

use crate::config::RunConfig;
use crate::CliError;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

/// The configured series; synthetic data is drawn from `seed`.
fn load_series(cfg: &RunConfig, seed: u64, horizon: usize) -> Result<SeriesTensor, CliError> {
    match (&cfg.data, cfg.synthetic) {
        (Some(_), true) => Err(usage("invalid config: data: give either a CSV path or --synthetic, not both")),
        (None, false) => Err(usage("invalid config: data: no data path given and --synthetic not set")),
        (None, true) => Ok(synthetic_series(cfg.synth_vars, cfg.synth_attrs, cfg.synth_len, horizon, seed)?),
        (Some(path), false) => {
            load_csv(path, None).map_err(|e| runtime(format!("cannot load {}: {e}", path.display())))
        }
    }
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| runtime(format!("cannot create output directory {}: {e}", cfg.out.display())))?;
    fs::write(cfg.out.join("config.txt"), cfg.echo())?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| runtime(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn units(denorm: bool) -> &'static str {
    if denorm {
        "original"
    } else {
        "normalized"
    }
}

fn metrics_json(report: &ForecastReport, persistence: &ForecastReport, denorm: bool) -> serde_json::Value {
    json!({
        "split": "test",
        "units": units(denorm),
        "windows": report.windows,
        "model": report,
        "persistence": persistence,
    })
}

/// One row per window: `window,alpha_1..alpha_B`.
fn write_alpha(path: &Path, alpha: &[Vec<f64>]) -> Result<(), CliError> {
    let blocks = alpha.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path).map_err(|e| runtime(e.to_string()))?;
    let mut header = vec!["window".to_string()];
    header.extend((1..=blocks).map(|b| format!("alpha_{b}")));
    w.write_record(&header).map_err(|e| runtime(e.to_string()))?;
    for (i, row) in alpha.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let series = load_series(cfg, cfg.model.seed, cfg.model.horizon)?;
    let data = prepare(&series, &cfg.model, &cfg.windows)?;
    prepare_out_dir(cfg)?;
    let start = Instant::now();
    let result = run_scored(&cfg.model, &data, cfg.denorm, |r| {
        eprintln!("epoch {:>4}  train {:.6}  val {:.6}", r.epoch, r.train_mse, r.val_mse)
    })?;

    let ckpt = Checkpoint::from_model(
        &result.model,
        Some(data.stats.clone()),
        data.variable_names.clone(),
        data.attribute_names.clone(),
    );
    ckpt.save(cfg.out.join("checkpoint.json"))?;
    write_history(cfg.out.join("history.csv"), &result.history)?;
    let mut metrics = metrics_json(&result.test, &result.persistence, cfg.denorm);
    metrics["best_epoch"] = json!(result.best_epoch);
    metrics["epochs_run"] = json!(result.history.len());
    write_json(&cfg.out.join("metrics.json"), &metrics)?;
    if !result.test_alpha.is_empty() {
        write_alpha(&cfg.out.join("alpha.csv"), &result.test_alpha)?;
    }
    println!(
        "test MSE {:.6}  MAE {:.6}  ({} units; persistence MSE {:.6})  best epoch {}  {:.1}s",
        result.test.mse,
        result.test.mae,
        units(cfg.denorm),
        result.persistence.mse,
        result.best_epoch,
        start.elapsed().as_secs_f64()
    );
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| usage(format!("cannot load checkpoint {}: {e}", path.display())))
}

fn check_channels(ckpt: &Checkpoint, series: &SeriesTensor) -> Result<(), CliError> {
    let (n, c) = (ckpt.config.n_vars, ckpt.config.n_attrs);
    if series.n_vars() != n || series.n_attrs() != c {
        return Err(usage(format!(
            "checkpoint expects {n} variables x {c} attributes, data has {} x {}",
            series.n_vars(),
            series.n_attrs()
        )));
    }
    Ok(())
}

/// Scores a checkpoint on the test split. Synthetic data is regenerated from
/// the checkpoint's seed.
pub fn evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<(), CliError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let model = ckpt.model().map_err(|e| usage(format!("checkpoint does not match its config: {e}")))?;
    let mc = &ckpt.config;
    let series = load_series(cfg, ckpt.seed, mc.horizon)?;
    check_channels(&ckpt, &series)?;
    let splits = split_chronological(&series, cfg.windows.ratios, mc.input_len + mc.horizon)?;
    let stats = ckpt.norm_stats.clone().unwrap_or_else(|| NormStats::fit(&splits.train));
    let test = make_windows(&stats.normalize(&splits.test)?, mc.input_len, mc.horizon, 1)?;
    let scale = cfg.denorm.then(|| stats.target_std());
    let (report, alpha) = evaluate_scaled(&model, &test, scale.as_deref())?;
    let persistence = evaluate_persistence_scaled(&test, scale.as_deref())?;

    prepare_out_dir(cfg)?;
    write_json(&cfg.out.join("metrics.json"), &metrics_json(&report, &persistence, cfg.denorm))?;
    if !alpha.is_empty() {
        write_alpha(&cfg.out.join("alpha.csv"), &alpha)?;
    }
    println!(
        "test MSE {:.6}  MAE {:.6}  ({} units; persistence MSE {:.6}) over {} windows",
        report.mse,
        report.mae,
        units(cfg.denorm),
        persistence.mse,
        report.windows
    );
    Ok(())
}

/// Forecasts the `horizon` steps after the last row of `input`, in original units.
pub fn predict(checkpoint: &Path, input: &Path, out: &Path) -> Result<(), CliError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let model = ckpt.model().map_err(|e| usage(format!("checkpoint does not match its config: {e}")))?;
    let series = load_csv(input, None).map_err(|e| runtime(format!("cannot load {}: {e}", input.display())))?;
    check_channels(&ckpt, &series)?;
    let (t_in, horizon, n) = (ckpt.config.input_len, ckpt.config.horizon, series.n_vars());
    if series.len() < t_in {
        return Err(usage(format!(
            "input has {} steps, the model needs at least {t_in}",
            series.len()
        )));
    }
    let tail = series.slice_time(series.len() - t_in, t_in)?;
    let tail = match &ckpt.norm_stats {
        Some(stats) => stats.normalize(&tail)?,
        None => tail,
    };
    let x = tail.values().clone().reshape(&[1, t_in, n, series.n_attrs()])?;
    let (pred, alpha) = model.predict(&x)?;

    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("forecast.csv")).map_err(|e| runtime(e.to_string()))?;
    let mut header = vec!["step".to_string()];
    header.extend(series.variable_names.iter().cloned());
    w.write_record(&header).map_err(|e| runtime(e.to_string()))?;
    for (h, row) in pred.data().chunks(n).enumerate() {
        let mut rec = vec![(h + 1).to_string()];
        rec.extend(row.iter().enumerate().map(|(v, &x)| {
            let x = match &ckpt.norm_stats {
                Some(stats) => stats.denormalize_target(v, x),
                None => x,
            };
            x.to_string()
        }));
        w.write_record(&rec).map_err(|e| runtime(e.to_string()))?;
    }
    w.flush()?;
    match alpha {
        Some(a) => {
            let mut w = csv::Writer::from_path(out.join("alpha.csv")).map_err(|e| runtime(e.to_string()))?;
            let header: Vec<String> = (1..=a.numel()).map(|b| format!("alpha_{b}")).collect();
            w.write_record(&header).map_err(|e| runtime(e.to_string()))?;
            w.write_record(a.data().iter().map(f64::to_string)).map_err(|e| runtime(e.to_string()))?;
            w.flush()?;
        }
        None => eprintln!("model uses fixed fusion; no fusion weights written"),
    }
    println!("wrote {horizon} forecast steps for {n} variables to {}", out.display());
    Ok(())
}

pub fn ablate(cfg: &RunConfig, assert_order: bool) -> Result<(), CliError> {
    if cfg.seeds.is_empty() {
        return Err(usage("invalid config: seeds: need at least one seed"));
    }
    // a CSV is loaded once and shared by every seed
    let first = load_series(cfg, cfg.seeds[0], cfg.model.horizon)?;
    let fixed = (!cfg.synthetic).then_some(first);
    prepare_out_dir(cfg)?;
    let rows = run_ablation(
        &cfg.model,
        &Variant::ALL,
        &cfg.seeds,
        cfg.denorm,
        |seed| {
            let series = match &fixed {
                Some(s) => s.clone(),
                None => synthetic_series(cfg.synth_vars, cfg.synth_attrs, cfg.synth_len, cfg.model.horizon, seed)?,
            };
            prepare(&series, &cfg.model, &cfg.windows)
        },
        |variant, seed, r| eprintln!("{:<9} seed {seed}: test MSE {:.6}  MAE {:.6}", variant.name(), r.test.mse, r.test.mae),
    )?;

    let mut w = csv::Writer::from_path(cfg.out.join("ablation.csv")).map_err(|e| runtime(e.to_string()))?;
    w.write_record(["config", "seeds", "mean_mse", "mean_mae", "mse_per_seed", "mae_per_seed"])
        .map_err(|e| runtime(e.to_string()))?;
    let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
    println!("{:<10} {:>12} {:>12}   seeds", "config", "mean MSE", "mean MAE");
    for row in &rows {
        let seeds = row.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
        w.write_record([
            row.variant.name().to_string(),
            seeds.clone(),
            row.mean_mse().to_string(),
            row.mean_mae().to_string(),
            list(&row.mse),
            list(&row.mae),
        ])
        .map_err(|e| runtime(e.to_string()))?;
        println!("{:<10} {:>12.6} {:>12.6}   {seeds}", row.variant.name(), row.mean_mse(), row.mean_mae());
    }
    w.flush()?;
    println!("({} units) wrote {}", units(cfg.denorm), cfg.out.join("ablation.csv").display());

    if assert_order && ablation_order_holds(&rows) != Some(true) {
        return Err(runtime(
            "full model's mean MSE is not at most both the w/o DNSM and w/o DMFM variants",
        ));
    }
    Ok(())
}

/// Reads N rows of C numbers, skipping a non-numeric first row.
fn read_profiles(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) if row.iter().all(|v| v.is_finite()) => rows.push(row),
            Err(_) if i == 0 => continue,
            _ => {
                return Err(usage(format!(
                    "{}: row {} is not a list of finite numbers",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(rows)
}

pub fn select_neighbors(profiles: &Path, k: usize, lambda: f64, out: Option<&Path>) -> Result<(), CliError> {
    let rows = read_profiles(profiles)?;
    let cfg = DnsmConfig { lambda, k };
    cfg.validate(rows.len())?;
    let profile = VariableProfile::from_rows(&rows).map_err(|e| usage(e.to_string()))?;
    let neighbors = dnsm_select(&profile, &cfg)?;
    let mut text = String::new();
    for row in neighbors.rows() {
        let ids: Vec<String> = row.iter().map(|j| (j + 1).to_string()).collect();
        text.push_str(&ids.join(","));
        text.push('\n');
    }
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}
