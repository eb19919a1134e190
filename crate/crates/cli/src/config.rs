//! Flat `key = value` run configuration: defaults, then file, then flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dimignn::decoder::FusionKind;
use dimignn::experiment::WindowConfig;
use dimignn::layers::NormKind;
use dimignn::ModelConfig;

use crate::CliError;

/// Every key, in echo order.
pub const KEYS: &[&str] = &[
    "data",
    "synthetic",
    "synth_vars",
    "synth_attrs",
    "synth_len",
    "split",
    "train_stride",
    "val_stride",
    "input_len",
    "horizon",
    "segment_len",
    "blocks",
    "d_hidden",
    "heads",
    "k",
    "lambda",
    "norm",
    "fusion",
    "dnsm",
    "d_fuse",
    "lr",
    "epochs",
    "batch_size",
    "patience",
    "seed",
    "seeds",
    "denorm",
    "out",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: Option<PathBuf>,
    pub synthetic: bool,
    pub synth_vars: usize,
    pub synth_attrs: usize,
    pub synth_len: usize,
    pub windows: WindowConfig,
    /// Seeds of an ablation run.
    pub seeds: Vec<u64>,
    pub denorm: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            data: None,
            synthetic: false,
            synth_vars: 8,
            synth_attrs: 3,
            synth_len: 4000,
            windows: WindowConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            denorm: false,
            out: PathBuf::from("run"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid config: {key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Usage(format!("invalid config: {key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let m = &mut self.model;
        match key {
            "data" => self.data = (!value.is_empty()).then(|| PathBuf::from(value)),
            "synthetic" => self.synthetic = parse_bool(key, value)?,
            "synth_vars" => self.synth_vars = parse(key, value)?,
            "synth_attrs" => self.synth_attrs = parse(key, value)?,
            "synth_len" => self.synth_len = parse(key, value)?,
            "split" => {
                let r: Vec<f64> = parse_list(key, value)?;
                if r.len() != 3 {
                    return Err(CliError::Usage(format!(
                        "invalid config: split: expected three fractions, got {value:?}"
                    )));
                }
                self.windows.ratios = (r[0], r[1], r[2]);
            }
            "train_stride" => self.windows.train_stride = parse(key, value)?,
            "val_stride" => self.windows.val_stride = parse(key, value)?,
            "input_len" => m.input_len = parse(key, value)?,
            "horizon" | "tau" => m.horizon = parse(key, value)?,
            "segment_len" => m.segment_len = parse(key, value)?,
            "blocks" => m.blocks = parse(key, value)?,
            "d_hidden" => m.d_hidden = parse(key, value)?,
            "heads" => m.heads = parse(key, value)?,
            "k" => m.k = parse(key, value)?,
            "lambda" => m.lambda = parse(key, value)?,
            "norm" => {
                m.norm_kind = match value {
                    "dyt" => NormKind::Dyt,
                    "layernorm" => NormKind::LayerNorm,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "invalid config: norm: expected dyt or layernorm, got {value:?}"
                        )))
                    }
                }
            }
            "fusion" => {
                m.fusion_kind = match value {
                    "dmfm" => FusionKind::Dmfm,
                    "sum" => FusionKind::Sum,
                    "mean" => FusionKind::Mean,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "invalid config: fusion: expected dmfm, sum or mean, got {value:?}"
                        )))
                    }
                }
            }
            "dnsm" => m.dnsm_enabled = parse_bool(key, value)?,
            "d_fuse" => m.d_fuse = parse(key, value)?,
            "lr" => m.lr = parse(key, value)?,
            "epochs" => m.epochs = parse(key, value)?,
            "batch_size" => m.batch_size = parse(key, value)?,
            "patience" => m.patience = parse(key, value)?,
            "seed" => m.seed = parse(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "denorm" => self.denorm = parse_bool(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(CliError::Usage(format!("invalid config: unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Text form of one key, as accepted by [`RunConfig::set`].
    pub fn get(&self, key: &str) -> String {
        let m = &self.model;
        match key {
            "data" => self.data.as_ref().map_or(String::new(), |p| p.display().to_string()),
            "synthetic" => self.synthetic.to_string(),
            "synth_vars" => self.synth_vars.to_string(),
            "synth_attrs" => self.synth_attrs.to_string(),
            "synth_len" => self.synth_len.to_string(),
            "split" => {
                let (a, b, c) = self.windows.ratios;
                join(&[a, b, c])
            }
            "train_stride" => self.windows.train_stride.to_string(),
            "val_stride" => self.windows.val_stride.to_string(),
            "input_len" => m.input_len.to_string(),
            "horizon" => m.horizon.to_string(),
            "segment_len" => m.segment_len.to_string(),
            "blocks" => m.blocks.to_string(),
            "d_hidden" => m.d_hidden.to_string(),
            "heads" => m.heads.to_string(),
            "k" => m.k.to_string(),
            "lambda" => m.lambda.to_string(),
            "norm" => match m.norm_kind {
                NormKind::Dyt => "dyt".into(),
                NormKind::LayerNorm => "layernorm".into(),
            },
            "fusion" => match m.fusion_kind {
                FusionKind::Dmfm => "dmfm".into(),
                FusionKind::Sum => "sum".into(),
                FusionKind::Mean => "mean".into(),
            },
            "dnsm" => m.dnsm_enabled.to_string(),
            "d_fuse" => m.d_fuse.to_string(),
            "lr" => m.lr.to_string(),
            "epochs" => m.epochs.to_string(),
            "batch_size" => m.batch_size.to_string(),
            "patience" => m.patience.to_string(),
            "seed" => m.seed.to_string(),
            "seeds" => join(&self.seeds),
            "denorm" => self.denorm.to_string(),
            "out" => self.out.display().to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Applies a `key = value` document. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{origin}:{}: expected `key = value`, got {line:?}", i + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// The full configuration as a `key = value` document.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.get(key)).expect("write to string");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "data = x.csv\nlambda = 0.25\nnorm = layernorm\nfusion = sum\ndnsm = false\nseeds = 3,9\nsplit = 0.6,0.2,0.2\nlr = 0.003",
            "t",
        )
        .unwrap();
        let mut again = RunConfig::default();
        again.apply_text(&cfg.echo(), "echo").unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.model.lambda, 0.25);
        assert_eq!(again.seeds, vec![3, 9]);
    }

    #[test]
    fn every_key_is_settable() {
        let cfg = RunConfig::default();
        let mut other = RunConfig::default();
        for key in KEYS {
            other.set(key, &cfg.get(key)).unwrap();
        }
        assert_eq!(other, cfg);
    }

    #[test]
    fn comments_and_aliases() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# header\n\ntau = 24  # horizon\n", "t").unwrap();
        assert_eq!(cfg.model.horizon, 24);
    }

    #[test]
    fn errors_name_the_field() {
        let mut cfg = RunConfig::default();
        let msg = |e: CliError| e.to_string();
        assert!(msg(cfg.set("epochs", "many").unwrap_err()).contains("epochs"));
        assert!(msg(cfg.set("bogus", "1").unwrap_err()).contains("bogus"));
        assert!(msg(cfg.apply_text("lambda 0.5", "f").unwrap_err()).contains("f:1"));
        assert!(msg(cfg.set("split", "0.5,0.5").unwrap_err()).contains("split"));
    }
}
