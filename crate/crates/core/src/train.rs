//! Mini-batch training with Adam, and the MSE/MAE evaluation path.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{Sample, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Mean squared and mean absolute error over all elements.
pub fn mse_mae(pred: &Tensor, target: &Tensor) -> Result<(f64, f64)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "mse_mae",
            format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    if pred.numel() == 0 {
        return Err(Error::shape("mse_mae", "empty tensors"));
    }
    let (mut sq, mut abs) = (0.0, 0.0);
    for (p, t) in pred.data().iter().zip(target.data()) {
        let e = p - t;
        sq += e * e;
        abs += e.abs();
    }
    let n = pred.numel() as f64;
    Ok((sq / n, abs / n))
}

/// Stacks the inputs of `idx` into `[batch, T_in, N, C]`.
pub fn stack_inputs(samples: &[Sample], idx: &[usize]) -> Result<Tensor> {
    stack(samples, idx, |s| &s.input)
}

/// Stacks the targets of `idx` into `[batch, horizon, N, 1]`.
pub fn stack_targets(samples: &[Sample], idx: &[usize]) -> Result<Tensor> {
    stack(samples, idx, |s| &s.target)
}

fn stack(samples: &[Sample], idx: &[usize], pick: impl Fn(&Sample) -> &Tensor) -> Result<Tensor> {
    let first = idx
        .first()
        .map(|&i| pick(&samples[i]))
        .ok_or_else(|| Error::Data("empty batch".into()))?;
    let mut shape = vec![idx.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(idx.len() * first.numel());
    for &i in idx {
        data.extend_from_slice(pick(&samples[i]).data());
    }
    Tensor::new(shape, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The model holding the best-validation parameters.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Builds a model from `cfg` and trains it.
pub fn train(cfg: &ModelConfig, train: &WindowedDataset, val: &WindowedDataset) -> Result<TrainOutcome> {
    fit(Model::new(cfg.clone())?, train, val, |_| {})
}

/// Trains `model` in place of its current parameters.
///
/// Each epoch shuffles the training windows, takes one Adam step per
/// mini-batch and scores the validation windows. The parameters with the
/// lowest validation MSE are kept. Training stops after `patience` epochs
/// without improvement (`patience = 0` disables early stopping).
pub fn fit(
    mut model: Model,
    train: &WindowedDataset,
    val: &WindowedDataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let cfg = model.config.clone();
    check_windows(&cfg, train, "train")?;
    check_windows(&cfg, val, "val")?;
    let adam = Adam::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sq_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let loss = train_step(&mut model, &adam, &train.samples, batch)
                .map_err(|e| diverged(epoch, e))?;
            sq_sum += loss * batch.len() as f64;
        }
        let train_mse = sq_sum / train.len() as f64;
        let val_mse = evaluate(&model, val).map_err(|e| diverged(epoch, e))?.mse;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("train mse {train_mse}, val mse {val_mse}"),
            });
        }
        let record = EpochRecord {
            epoch,
            train_mse,
            val_mse,
        };
        on_epoch(&record);
        history.push(record);
        let improved = best.as_ref().is_none_or(|(b, _, _)| val_mse < *b);
        if improved {
            best = Some((val_mse, epoch, model.params.clone()));
        } else if cfg.patience > 0 && epoch - best.as_ref().map_or(0, |b| b.1) >= cfg.patience {
            break;
        }
    }

    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params.load_values(&params)?;
            epoch
        }
        None => 0,
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op, index } => Error::Diverged {
            epoch,
            detail: format!("non-finite value in {op} at flat index {index}"),
        },
        Error::Diverged { detail, .. } => Error::Diverged { epoch, detail },
        other => other,
    }
}

fn check_windows(cfg: &ModelConfig, data: &WindowedDataset, split: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data(format!("{split} split produced no windows")));
    }
    if data.input_len != cfg.input_len || data.horizon != cfg.horizon {
        return Err(Error::Data(format!(
            "{split} windows are {}→{} steps, model expects {}→{}",
            data.input_len, data.horizon, cfg.input_len, cfg.horizon
        )));
    }
    Ok(())
}

/// MSE loss of one batch recorded on `tape`; returns the loss handle.
pub fn batch_loss(
    model: &Model,
    params: &ParamStore,
    tape: &mut Tape,
    inputs: &Tensor,
    targets: &Tensor,
) -> Result<Var> {
    let x = tape.constant(inputs);
    let y = tape.constant(targets);
    let out = model.forward_with(tape, params, x, None)?;
    let diff = tape.sub(out.prediction, y)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}

fn train_step(model: &mut Model, adam: &Adam, samples: &[Sample], batch: &[usize]) -> Result<f64> {
    let inputs = stack_inputs(samples, batch)?;
    let targets = stack_targets(samples, batch)?;
    let mut tape = Tape::new();
    let loss = batch_loss(model, &model.params, &mut tape, &inputs, &targets)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    grads.accumulate_into(&mut model.params)?;
    adam.step(&mut model.params)?;
    if let Some((name, _)) = model.params.iter().find(|(_, t)| !t.all_finite()) {
        return Err(Error::Diverged {
            epoch: 0,
            detail: format!("parameter {name} became non-finite"),
        });
    }
    Ok(value)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonError {
    pub mse: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub mse: f64,
    pub mae: f64,
    /// One entry per forecast step.
    pub per_horizon: Vec<HorizonError>,
    /// Mean fusion weight per block; absent without learned fusion.
    pub alpha_mean: Option<Vec<f64>>,
    pub windows: usize,
}

/// Running sums behind a [`ForecastReport`].
#[derive(Clone, Debug)]
struct Metrics {
    horizon: usize,
    /// Per-variable factor applied to every error before accumulation.
    scale: Option<Vec<f64>>,
    sq: Vec<f64>,
    abs: Vec<f64>,
    count: Vec<usize>,
    windows: usize,
}

impl Metrics {
    fn new(horizon: usize, scale: Option<&[f64]>) -> Self {
        Metrics {
            horizon,
            scale: scale.map(<[f64]>::to_vec),
            sq: vec![0.0; horizon],
            abs: vec![0.0; horizon],
            count: vec![0; horizon],
            windows: 0,
        }
    }

    /// `pred` and `target` are `[batch, horizon, N, 1]`.
    fn add(&mut self, pred: &Tensor, target: &Tensor) -> Result<()> {
        if pred.shape() != target.shape() || pred.shape().get(1) != Some(&self.horizon) {
            return Err(Error::shape(
                "evaluate",
                format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
            ));
        }
        let per_step = pred.numel() / (pred.shape()[0] * self.horizon);
        if let Some(s) = &self.scale {
            if s.len() != per_step {
                return Err(Error::shape(
                    "evaluate",
                    format!("{} scale factors for {per_step} variables", s.len()),
                ));
            }
        }
        for (i, (p, t)) in pred.data().iter().zip(target.data()).enumerate() {
            let h = (i / per_step) % self.horizon;
            let e = match &self.scale {
                Some(s) => (p - t) * s[i % per_step],
                None => p - t,
            };
            self.sq[h] += e * e;
            self.abs[h] += e.abs();
            self.count[h] += 1;
        }
        self.windows += pred.shape()[0];
        Ok(())
    }

    fn report(&self, alpha_mean: Option<Vec<f64>>) -> ForecastReport {
        let total: usize = self.count.iter().sum();
        let per_horizon = (0..self.horizon)
            .map(|h| HorizonError {
                mse: self.sq[h] / self.count[h].max(1) as f64,
                mae: self.abs[h] / self.count[h].max(1) as f64,
            })
            .collect();
        ForecastReport {
            mse: self.sq.iter().sum::<f64>() / total.max(1) as f64,
            mae: self.abs.iter().sum::<f64>() / total.max(1) as f64,
            per_horizon,
            alpha_mean,
            windows: self.windows,
        }
    }
}

/// Scores `model` on every window of `data` in inference mode.
pub fn evaluate(model: &Model, data: &WindowedDataset) -> Result<ForecastReport> {
    Ok(evaluate_detailed(model, data)?.0)
}

/// Like [`evaluate`], also returning each window's fusion weights.
pub fn evaluate_detailed(model: &Model, data: &WindowedDataset) -> Result<(ForecastReport, Vec<Vec<f64>>)> {
    evaluate_scaled(model, data, None)
}

/// [`evaluate_detailed`] with each variable's errors multiplied by
/// `scale[var]`; pass the target standard deviations to score in original units.
pub fn evaluate_scaled(
    model: &Model,
    data: &WindowedDataset,
    scale: Option<&[f64]>,
) -> Result<(ForecastReport, Vec<Vec<f64>>)> {
    let mut metrics = Metrics::new(model.config.horizon, scale);
    let blocks = model.config.blocks;
    let mut alphas: Vec<Vec<f64>> = Vec::new();
    let idx: Vec<usize> = (0..data.len()).collect();
    for batch in idx.chunks(model.config.batch_size.max(1)) {
        let inputs = stack_inputs(&data.samples, batch)?;
        let targets = stack_targets(&data.samples, batch)?;
        let (pred, alpha) = model.predict(&inputs)?;
        metrics.add(&pred, &targets)?;
        if let Some(a) = alpha {
            alphas.extend(a.data().chunks(blocks).map(<[f64]>::to_vec));
        }
    }
    let alpha_mean = (!alphas.is_empty()).then(|| {
        (0..blocks)
            .map(|b| alphas.iter().map(|row| row[b]).sum::<f64>() / alphas.len() as f64)
            .collect()
    });
    Ok((metrics.report(alpha_mean), alphas))
}

/// Forecast that repeats each variable's last observed main attribute,
/// `[horizon, N, 1]`.
pub fn persistence_forecast(sample: &Sample, horizon: usize) -> Result<Tensor> {
    let s = sample.input.shape();
    let (t_in, n, c) = (s[0], s[1], s[2]);
    let last: Vec<f64> = (0..n).map(|v| sample.input.data()[((t_in - 1) * n + v) * c]).collect();
    let data = (0..horizon).flat_map(|_| last.iter().copied()).collect();
    Tensor::new(vec![horizon, n, 1], data)
}

/// Scores the persistence baseline through the same metric path as [`evaluate`].
pub fn evaluate_persistence(data: &WindowedDataset) -> Result<ForecastReport> {
    evaluate_persistence_scaled(data, None)
}

pub fn evaluate_persistence_scaled(data: &WindowedDataset, scale: Option<&[f64]>) -> Result<ForecastReport> {
    let mut metrics = Metrics::new(data.horizon, scale);
    for s in &data.samples {
        let pred = persistence_forecast(s, data.horizon)?;
        let mut shape = vec![1];
        shape.extend_from_slice(pred.shape());
        let target = s.target.clone().reshape(&shape)?;
        metrics.add(&pred.reshape(&shape)?, &target)?;
    }
    Ok(metrics.report(None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, synth_coupled, CouplingGraph};

    #[test]
    fn mse_mae_cases() {
        let t = Tensor::from_slice(&[2, 1, 1], &[0.5, -1.0]).unwrap();
        assert_eq!(mse_mae(&t, &t).unwrap(), (0.0, 0.0));
        let plus2 = Tensor::from_slice(&[2, 1, 1], &[2.5, 1.0]).unwrap();
        assert_eq!(mse_mae(&plus2, &t).unwrap(), (4.0, 2.0));
        let mixed = Tensor::from_slice(&[2, 1, 1], &[1.5, -4.0]).unwrap();
        assert_eq!(mse_mae(&mixed, &t).unwrap(), (5.0, 2.0));
        let bad = Tensor::zeros(&[1, 2, 1]);
        assert!(matches!(mse_mae(&bad, &t), Err(Error::Shape { .. })));
    }

    fn tiny() -> (ModelConfig, WindowedDataset, WindowedDataset) {
        let series = synth_coupled(3, 2, 80, 4, &CouplingGraph::ring(3, 2, 0.5)).unwrap();
        let cfg = ModelConfig {
            input_len: 8,
            horizon: 2,
            segment_len: 2,
            blocks: 2,
            d_hidden: 4,
            heads: 1,
            k: 1,
            d_fuse: 3,
            batch_size: 8,
            epochs: 3,
            n_vars: 3,
            n_attrs: 2,
            lr: 1e-2,
            ..Default::default()
        };
        let tr = make_windows(&series.slice_time(0, 60).unwrap(), 8, 2, 2).unwrap();
        let va = make_windows(&series.slice_time(60, 20).unwrap(), 8, 2, 1).unwrap();
        (cfg, tr, va)
    }

    #[test]
    fn internal_loss_matches_metric() {
        let (cfg, tr, _) = tiny();
        let model = Model::new(cfg).unwrap();
        let idx = [0, 3, 5];
        let inputs = stack_inputs(&tr.samples, &idx).unwrap();
        let targets = stack_targets(&tr.samples, &idx).unwrap();
        let mut tape = Tape::new();
        let loss = batch_loss(&model, &model.params, &mut tape, &inputs, &targets).unwrap();
        let (pred, _) = model.predict(&inputs).unwrap();
        let (mse, _) = mse_mae(&pred, &targets).unwrap();
        assert!((tape.scalar(loss) - mse).abs() < 1e-14);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let (cfg, tr, va) = tiny();
        let cfg = ModelConfig { lr: 0.0, ..cfg };
        let before = Model::new(cfg.clone()).unwrap().params.to_snapshot();
        let out = train(&cfg, &tr, &va).unwrap();
        assert_eq!(out.model.params.to_snapshot(), before);
        let first = out.history[0];
        assert!(out.history.iter().all(|r| r.val_mse == first.val_mse));
    }

    #[test]
    fn reruns_are_bit_identical() {
        let (cfg, tr, va) = tiny();
        let a = train(&cfg, &tr, &va).unwrap();
        let b = train(&cfg, &tr, &va).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.params.to_snapshot(), b.model.params.to_snapshot());
    }

    #[test]
    fn best_validation_parameters_are_kept() {
        let (cfg, tr, va) = tiny();
        let out = train(&cfg, &tr, &va).unwrap();
        let best = out.history.iter().map(|r| r.val_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(out.history[out.best_epoch - 1].val_mse, best);
        assert!((evaluate(&out.model, &va).unwrap().mse - best).abs() < 1e-12);
    }

    #[test]
    fn evaluation_is_repeatable_and_alpha_is_a_simplex() {
        let (cfg, _, va) = tiny();
        let model = Model::new(cfg).unwrap();
        let a = evaluate(&model, &va).unwrap();
        assert_eq!(a, evaluate(&model, &va).unwrap());
        let alpha = a.alpha_mean.unwrap();
        assert_eq!(alpha.len(), 2);
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(a.windows, va.len());
    }

    #[test]
    fn persistence_repeats_last_main_value() {
        let (_, _, va) = tiny();
        let s = &va.samples[0];
        let p = persistence_forecast(s, 2).unwrap();
        for v in 0..3 {
            let last = s.input.at(&[7, v, 0]);
            assert_eq!(p.at(&[0, v, 0]), last);
            assert_eq!(p.at(&[1, v, 0]), last);
        }
        let rep = evaluate_persistence(&va).unwrap();
        assert!(rep.mse > 0.0 && rep.mae > 0.0);
        assert_eq!(rep.per_horizon.len(), 2);
    }

    #[test]
    fn scaling_multiplies_each_variables_errors() {
        let (_, _, va) = tiny();
        let base = evaluate_persistence(&va).unwrap();
        let ones = evaluate_persistence_scaled(&va, Some(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(ones, base);
        let doubled = evaluate_persistence_scaled(&va, Some(&[2.0, 2.0, 2.0])).unwrap();
        assert!((doubled.mse - 4.0 * base.mse).abs() < 1e-12);
        assert!((doubled.mae - 2.0 * base.mae).abs() < 1e-12);
        assert!(evaluate_persistence_scaled(&va, Some(&[1.0])).is_err());
    }
}
