//! End-to-end runs: split, normalize, window, train, score against
//! persistence, and the four-way ablation.

use serde::{Deserialize, Serialize};

use crate::data::{
    make_windows, split_chronological, synth_coupled, CouplingGraph, NormStats, SeriesTensor,
    WindowedDataset,
};
use crate::decoder::FusionKind;
use crate::error::{Error, Result};
use crate::layers::NormKind;
use crate::model::{Model, ModelConfig};
use crate::train::{evaluate_persistence_scaled, evaluate_scaled, fit, EpochRecord, ForecastReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Chronological train/val/test fractions.
    pub ratios: (f64, f64, f64),
    /// Step between consecutive training windows.
    pub train_stride: usize,
    /// Step between consecutive validation windows.
    pub val_stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            ratios: (0.7, 0.1, 0.2),
            train_stride: 1,
            val_stride: 1,
        }
    }
}

/// The built-in benchmark series: `n` variables in coupled pairs, each also
/// driven by another pair `horizon` steps back.
pub fn synthetic_series(n: usize, c: usize, t: usize, horizon: usize, seed: u64) -> Result<SeriesTensor> {
    synth_coupled(n, c, t, seed, &CouplingGraph::paired_relay(n, horizon))
}

/// Normalized, windowed splits of one series. Test windows always use stride 1.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub stats: NormStats,
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
    pub variable_names: Vec<String>,
    pub attribute_names: Vec<String>,
}

pub fn prepare(series: &SeriesTensor, cfg: &ModelConfig, windows: &WindowConfig) -> Result<Prepared> {
    let span = cfg.input_len + cfg.horizon;
    let splits = split_chronological(series, windows.ratios, span)?;
    let stats = NormStats::fit(&splits.train);
    let train = make_windows(&stats.normalize(&splits.train)?, cfg.input_len, cfg.horizon, windows.train_stride)?;
    let val = make_windows(&stats.normalize(&splits.val)?, cfg.input_len, cfg.horizon, windows.val_stride)?;
    let test = make_windows(&stats.normalize(&splits.test)?, cfg.input_len, cfg.horizon, 1)?;
    Ok(Prepared {
        stats,
        train,
        val,
        test,
        variable_names: series.variable_names.clone(),
        attribute_names: series.attribute_names.clone(),
    })
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test: ForecastReport,
    /// Fusion weights of every test window, in window order.
    pub test_alpha: Vec<Vec<f64>>,
    pub persistence: ForecastReport,
}

impl RunResult {
    /// Relative test-MSE improvement over persistence; positive is better.
    pub fn gain_over_persistence(&self) -> f64 {
        1.0 - self.test.mse / self.persistence.mse
    }
}

/// Trains a fresh model on `data` and scores it on the test windows in
/// normalized units.
pub fn run(cfg: &ModelConfig, data: &Prepared, on_epoch: impl FnMut(&EpochRecord)) -> Result<RunResult> {
    run_scored(cfg, data, false, on_epoch)
}

/// [`run`] with test metrics in original units when `denorm` is set.
pub fn run_scored(
    cfg: &ModelConfig,
    data: &Prepared,
    denorm: bool,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunResult> {
    let mut cfg = cfg.clone();
    cfg.n_vars = data.variable_names.len();
    cfg.n_attrs = data.attribute_names.len();
    let outcome = fit(Model::new(cfg)?, &data.train, &data.val, on_epoch)?;
    let scale = denorm.then(|| data.stats.target_std());
    let (test, test_alpha) = evaluate_scaled(&outcome.model, &data.test, scale.as_deref())?;
    Ok(RunResult {
        model: outcome.model,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        test,
        test_alpha,
        persistence: evaluate_persistence_scaled(&data.test, scale.as_deref())?,
    })
}

/// The four configurations compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    /// LayerNorm at every normalization site.
    NoDyt,
    /// Neighbors ranked by similarity only.
    NoDnsm,
    /// Per-scale forecasts summed instead of weighted.
    NoDmfm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoDyt, Variant::NoDnsm, Variant::NoDmfm];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDyt => "w/o DyT",
            Variant::NoDnsm => "w/o DNSM",
            Variant::NoDmfm => "w/o DMFM",
        }
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoDyt => cfg.norm_kind = NormKind::LayerNorm,
            Variant::NoDnsm => cfg.dnsm_enabled = false,
            Variant::NoDmfm => cfg.fusion_kind = FusionKind::Sum,
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub mse: Vec<f64>,
    pub mae: Vec<f64>,
}

impl AblationRow {
    pub fn mean_mse(&self) -> f64 {
        mean(&self.mse)
    }

    pub fn mean_mae(&self) -> f64 {
        mean(&self.mae)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Runs every variant over `seeds`. `data_for_seed` supplies the prepared
/// data for a seed; `base.seed` is overwritten per run.
pub fn ablate(
    base: &ModelConfig,
    variants: &[Variant],
    seeds: &[u64],
    denorm: bool,
    mut data_for_seed: impl FnMut(u64) -> Result<Prepared>,
    mut on_run: impl FnMut(Variant, u64, &RunResult),
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    let mut rows: Vec<AblationRow> = variants
        .iter()
        .map(|&variant| AblationRow {
            variant,
            seeds: seeds.to_vec(),
            mse: Vec::new(),
            mae: Vec::new(),
        })
        .collect();
    for &seed in seeds {
        let data = data_for_seed(seed)?;
        for row in rows.iter_mut() {
            let mut cfg = row.variant.apply(base);
            cfg.seed = seed;
            let result = run_scored(&cfg, &data, denorm, |_| {})?;
            on_run(row.variant, seed, &result);
            row.mse.push(result.test.mse);
            row.mae.push(result.test.mae);
        }
    }
    Ok(rows)
}

/// Whether the full model's mean MSE is at most that of both the
/// similarity-only and the summed-fusion variants.
pub fn ablation_order_holds(rows: &[AblationRow]) -> Option<bool> {
    let get = |v: Variant| rows.iter().find(|r| r.variant == v).map(AblationRow::mean_mse);
    let full = get(Variant::Full)?;
    Some(full <= get(Variant::NoDnsm)? && full <= get(Variant::NoDmfm)?)
}
