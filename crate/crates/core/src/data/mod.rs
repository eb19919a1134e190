//! Series containers, chronological splitting, normalization and windowing.

mod csv_io;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use csv_io::{load_csv, CsvSchema};
pub use synth::{synth_coupled, CouplingEdge, CouplingGraph};

/// Observations laid out as `[time T, variable N, attribute C]`; attribute 0
/// is the forecast target.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTensor {
    values: Tensor,
    pub variable_names: Vec<String>,
    pub attribute_names: Vec<String>,
    /// Informational sampling-step tag, e.g. "1h".
    pub step: String,
    /// Absolute index of row 0 in the series this one was cut from.
    pub origin: usize,
}

impl SeriesTensor {
    pub fn new(
        values: Tensor,
        variable_names: Vec<String>,
        attribute_names: Vec<String>,
    ) -> Result<Self> {
        let shape = values.shape();
        if shape.len() != 3 {
            return Err(Error::Data(format!("series must be [T, N, C], got {shape:?}")));
        }
        let (n, c) = (shape[1], shape[2]);
        if n < 2 {
            return Err(Error::Data(format!("need at least 2 variables, got {n}")));
        }
        if variable_names.len() != n || attribute_names.len() != c {
            return Err(Error::Data(format!(
                "{} variable / {} attribute names for shape {shape:?}",
                variable_names.len(),
                attribute_names.len()
            )));
        }
        if !values.all_finite() {
            return Err(Error::Data("series contains non-finite values".into()));
        }
        Ok(SeriesTensor {
            values,
            variable_names,
            attribute_names,
            step: String::new(),
            origin: 0,
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_vars(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn n_attrs(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn get(&self, t: usize, var: usize, attr: usize) -> f64 {
        self.values.data()[(t * self.n_vars() + var) * self.n_attrs() + attr]
    }

    /// Rows `[start, start + len)`, keeping absolute positions in `origin`.
    pub fn slice_time(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::Data(format!(
                "time slice [{start}, {}) outside series of length {}",
                start + len,
                self.len()
            )));
        }
        let row = self.n_vars() * self.n_attrs();
        let data = self.values.data()[start * row..(start + len) * row].to_vec();
        Ok(SeriesTensor {
            values: Tensor::new(vec![len, self.n_vars(), self.n_attrs()], data)?,
            variable_names: self.variable_names.clone(),
            attribute_names: self.attribute_names.clone(),
            step: self.step.clone(),
            origin: self.origin + start,
        })
    }

    fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let channels = self.n_vars() * self.n_attrs();
        let mut out = self.clone();
        for (i, v) in out.values.data_mut().iter_mut().enumerate() {
            *v = f(i % channels, *v);
        }
        out
    }
}

/// Chronological train / validation / test partition.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: SeriesTensor,
    pub val: SeriesTensor,
    pub test: SeriesTensor,
}

/// Cuts `series` into contiguous train, validation and test parts.
///
/// `window_len` is the `T_in + horizon` span; every part must fit at least one.
pub fn split_chronological(
    series: &SeriesTensor,
    ratios: (f64, f64, f64),
    window_len: usize,
) -> Result<Splits> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(*r > 0.0 && *r < 1.0)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "split",
            format!("ratios {ratios:?} must be positive and sum to 1"),
        ));
    }
    let t = series.len();
    let n_train = (t as f64 * a).round() as usize;
    let n_val = (t as f64 * b).round() as usize;
    let n_test = t.saturating_sub(n_train + n_val);
    for (name, len) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if len < window_len {
            return Err(Error::Data(format!(
                "{name} split has {len} steps, shorter than one window ({window_len})"
            )));
        }
    }
    Ok(Splits {
        train: series.slice_time(0, n_train)?,
        val: series.slice_time(n_train, n_val)?,
        test: series.slice_time(n_train + n_val, n_test)?,
    })
}

/// Per-(variable, attribute) z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub n_vars: usize,
    pub n_attrs: usize,
    /// Row-major over (variable, attribute).
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose training std was zero and were given std = 1.
    #[serde(default)]
    pub constant_channels: Vec<(usize, usize)>,
}

impl NormStats {
    /// Fits on `train`; call with the training split only.
    pub fn fit(train: &SeriesTensor) -> Self {
        let (n, c) = (train.n_vars(), train.n_attrs());
        let t = train.len() as f64;
        let mut mean = vec![0.0; n * c];
        let mut sq = vec![0.0; n * c];
        for row in train.values.data().chunks(n * c) {
            for (i, v) in row.iter().enumerate() {
                mean[i] += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= t);
        for row in train.values.data().chunks(n * c) {
            for (i, v) in row.iter().enumerate() {
                sq[i] += (v - mean[i]).powi(2);
            }
        }
        let mut constant_channels = vec![];
        let std = sq
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let sd = (s / t).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    constant_channels.push((i / c, i % c));
                    1.0
                }
            })
            .collect();
        NormStats {
            n_vars: n,
            n_attrs: c,
            mean,
            std,
            constant_channels,
        }
    }

    fn check(&self, series: &SeriesTensor) -> Result<()> {
        if series.n_vars() != self.n_vars || series.n_attrs() != self.n_attrs {
            return Err(Error::Data(format!(
                "normalization stats are for {}x{} channels, series has {}x{}",
                self.n_vars,
                self.n_attrs,
                series.n_vars(),
                series.n_attrs()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, series: &SeriesTensor) -> Result<SeriesTensor> {
        self.check(series)?;
        Ok(series.map_values(|ch, v| (v - self.mean[ch]) / self.std[ch]))
    }

    pub fn denormalize(&self, series: &SeriesTensor) -> Result<SeriesTensor> {
        self.check(series)?;
        Ok(series.map_values(|ch, v| v * self.std[ch] + self.mean[ch]))
    }

    /// Standard deviation of each variable's main attribute.
    pub fn target_std(&self) -> Vec<f64> {
        (0..self.n_vars).map(|v| self.std[v * self.n_attrs]).collect()
    }

    /// Maps a normalized target value of `var` back to original units.
    pub fn denormalize_target(&self, var: usize, v: f64) -> f64 {
        let ch = var * self.n_attrs;
        v * self.std[ch] + self.mean[ch]
    }
}

/// One `(input, target)` pair.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `[T_in, N, C]`
    pub input: Tensor,
    /// `[horizon, N, 1]`, main attribute only.
    pub target: Tensor,
    /// Absolute time index of the first input step.
    pub start: usize,
}

#[derive(Clone, Debug)]
pub struct WindowedDataset {
    pub samples: Vec<Sample>,
    pub input_len: usize,
    pub horizon: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Absolute `[start, end)` range of a sample's target.
    pub fn target_range(&self, i: usize) -> (usize, usize) {
        let s = self.samples[i].start + self.input_len;
        (s, s + self.horizon)
    }
}

/// Slides a `T_in + horizon` window over `series` with the given stride.
pub fn make_windows(
    series: &SeriesTensor,
    input_len: usize,
    horizon: usize,
    stride: usize,
) -> Result<WindowedDataset> {
    if input_len == 0 || horizon == 0 || stride == 0 {
        return Err(Error::config("windows", "input length, horizon and stride must be >= 1"));
    }
    let t = series.len();
    if t < input_len + horizon {
        return Err(Error::Data(format!(
            "series of length {t} is shorter than one window ({input_len} + {horizon})"
        )));
    }
    let (n, c) = (series.n_vars(), series.n_attrs());
    let row = n * c;
    let data = series.values.data();
    let count = (t - input_len - horizon) / stride + 1;
    let mut samples = Vec::with_capacity(count);
    for w in 0..count {
        let s = w * stride;
        let input = Tensor::new(
            vec![input_len, n, c],
            data[s * row..(s + input_len) * row].to_vec(),
        )?;
        let mut target = Vec::with_capacity(horizon * n);
        for h in 0..horizon {
            for v in 0..n {
                target.push(series.get(s + input_len + h, v, 0));
            }
        }
        samples.push(Sample {
            input,
            target: Tensor::new(vec![horizon, n, 1], target)?,
            start: series.origin + s,
        });
    }
    Ok(WindowedDataset {
        samples,
        input_len,
        horizon,
    })
}
