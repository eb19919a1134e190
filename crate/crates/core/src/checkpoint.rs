//! Self-describing JSON checkpoints and the training-history CSV.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamSnapshot;
use crate::train::EpochRecord;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub params: ParamSnapshot,
    pub norm_stats: Option<NormStats>,
    pub variable_names: Vec<String>,
    pub attribute_names: Vec<String>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        norm_stats: Option<NormStats>,
        variable_names: Vec<String>,
        attribute_names: Vec<String>,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            config: model.config.clone(),
            seed: model.config.seed,
            params: model.params.to_snapshot(),
            norm_stats,
            variable_names,
            attribute_names,
        }
    }

    /// Rebuilds the model, checking every saved name and shape.
    pub fn model(&self) -> Result<Model> {
        Model::from_snapshot(self.config.clone(), &self.params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::config(
                "checkpoint",
                format!("format version {} is not supported", ck.format_version),
            ));
        }
        Ok(ck)
    }
}

/// Writes `epoch,train_mse,val_mse` rows.
pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            input_len: 8,
            segment_len: 2,
            blocks: 2,
            d_hidden: 4,
            heads: 2,
            horizon: 2,
            k: 1,
            n_vars: 3,
            n_attrs: 2,
            ..Default::default()
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = Model::new(small()).unwrap();
        let ck = Checkpoint::from_model(&model, None, vec!["a".into(), "b".into(), "c".into()], vec![]);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.model().unwrap().params.to_snapshot(), model.params.to_snapshot());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let model = Model::new(small()).unwrap();
        let mut ck = Checkpoint::from_model(&model, None, vec![], vec![]);
        ck.config.d_hidden = 6;
        assert!(ck.model().is_err());
    }

    #[test]
    fn history_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let h = vec![
            EpochRecord { epoch: 1, train_mse: 0.5, val_mse: 0.25 },
            EpochRecord { epoch: 2, train_mse: 0.125, val_mse: 0.0625 },
        ];
        write_history(&path, &h).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,train_mse,val_mse\n"));
        assert_eq!(read_history(&path).unwrap(), h);
    }
}
