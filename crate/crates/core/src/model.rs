//! The full forecaster: segment embedding, `B` stacked encoder blocks, one
//! decoder head per block, and fusion of the per-scale forecasts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::decoder::{fuse_mean, fuse_sum, DecoderHead, Dmfm, FusionKind};
use crate::embed::{segment_count, SegmentEmbedding};
use crate::error::{Error, Result};
use crate::layers::NormKind;
use crate::params::{ParamSnapshot, ParamStore};
use crate::tensor::Tensor;
use crate::tip::{DnsmConfig, NeighborMatrix, TipLayer};
use crate::trip::{TripConfig, TripLayer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_len: usize,
    pub horizon: usize,
    pub segment_len: usize,
    pub blocks: usize,
    pub d_hidden: usize,
    pub heads: usize,
    pub k: usize,
    pub lambda: f64,
    pub norm_kind: NormKind,
    pub fusion_kind: FusionKind,
    /// When off, neighbors are ranked by similarity alone (λ = 1).
    pub dnsm_enabled: bool,
    pub d_fuse: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Data-dependent; filled in from the series before building a model.
    pub n_vars: usize,
    pub n_attrs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_len: 48,
            horizon: 12,
            segment_len: 6,
            blocks: 3,
            d_hidden: 32,
            heads: 2,
            k: 3,
            lambda: 0.7,
            norm_kind: NormKind::Dyt,
            fusion_kind: FusionKind::Dmfm,
            dnsm_enabled: true,
            d_fuse: 16,
            lr: 1e-3,
            epochs: 50,
            batch_size: 32,
            patience: 20,
            seed: 0,
            n_vars: 0,
            n_attrs: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_len", self.input_len),
            ("horizon", self.horizon),
            ("segment_len", self.segment_len),
            ("blocks", self.blocks),
            ("d_hidden", self.d_hidden),
            ("heads", self.heads),
            ("d_fuse", self.d_fuse),
            ("batch_size", self.batch_size),
            ("n_attrs", self.n_attrs),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        if self.n_vars < 2 {
            return Err(Error::config("n_vars", format!("need at least 2 variables, got {}", self.n_vars)));
        }
        if !self.d_hidden.is_multiple_of(self.heads) {
            return Err(Error::config(
                "heads",
                format!("d_hidden {} is not divisible by {} heads", self.d_hidden, self.heads),
            ));
        }
        let segments = segment_count(self.input_len, self.segment_len);
        if self.blocks > usize::BITS as usize || segments < 1 << (self.blocks - 1) {
            return Err(Error::config(
                "blocks",
                format!(
                    "{} blocks need at least {} segments, input_len {} / segment_len {} gives {segments}",
                    self.blocks,
                    1u64 << (self.blocks - 1).min(63),
                    self.input_len,
                    self.segment_len
                ),
            ));
        }
        self.dnsm().validate(self.n_vars)?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("{} is not a finite non-negative rate", self.lr)));
        }
        Ok(())
    }

    /// Neighbor selection settings with the ablation switch applied.
    pub fn dnsm(&self) -> DnsmConfig {
        DnsmConfig {
            lambda: if self.dnsm_enabled { self.lambda } else { 1.0 },
            k: self.k,
        }
    }

    /// Segment count seen by each block, bottom to top.
    pub fn block_segments(&self) -> Vec<usize> {
        let mut l = segment_count(self.input_len, self.segment_len);
        let mut out = vec![l];
        for _ in 1..self.blocks {
            l = l.div_ceil(2);
            out.push(l);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub trip: TripLayer,
    pub tip: TipLayer,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub embed: SegmentEmbedding,
    pub blocks: Vec<EncoderBlock>,
    pub heads: Vec<DecoderHead>,
    pub fusion: Option<Dmfm>,
}

/// Everything one forward pass produces.
pub struct ForwardOutput {
    /// `[batch, horizon, N, 1]`
    pub prediction: Var,
    /// Per-block forecasts, each `[batch, horizon, N, 1]`.
    pub block_predictions: Vec<Var>,
    /// Per-block encoder outputs `[batch, L_b, N, C, d]`.
    pub block_outputs: Vec<Var>,
    /// `[batch, B]` when fusing with learned weights.
    pub alpha: Option<Var>,
    /// `neighbors[block][sample]`.
    pub neighbors: Vec<Vec<NeighborMatrix>>,
}

impl Model {
    /// Builds and initializes a model; parameters are drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let d = config.d_hidden;
        let embed = SegmentEmbedding::init(
            &mut params,
            &mut rng,
            "embed",
            config.input_len,
            config.segment_len,
            d,
        )?;
        let segments = config.block_segments();
        let mut blocks = Vec::with_capacity(config.blocks);
        let mut heads = Vec::with_capacity(config.blocks);
        for (b, &l) in segments.iter().enumerate() {
            let prefix = format!("block{b}");
            let trip_cfg = TripConfig {
                d_hidden: d,
                heads: config.heads,
                mlp_hidden: 2 * d,
                norm: config.norm_kind,
                merge: b > 0,
            };
            let trip = TripLayer::init(&mut params, &mut rng, &format!("{prefix}.trip"), &trip_cfg)?;
            let tip = TipLayer::init(&mut params, &mut rng, &format!("{prefix}.tip"), d, config.dnsm());
            blocks.push(EncoderBlock { trip, tip });
            heads.push(DecoderHead::init(
                &mut params,
                &mut rng,
                &format!("decoder{b}"),
                l,
                d,
                config.horizon,
            ));
        }
        let fusion = (config.fusion_kind == FusionKind::Dmfm).then(|| {
            Dmfm::init(
                &mut params,
                &mut rng,
                "dmfm",
                config.horizon,
                config.n_vars,
                config.blocks,
                config.d_fuse,
            )
        });
        Ok(Model {
            config,
            params,
            embed,
            blocks,
            heads,
            fusion,
        })
    }

    /// Rebuilds a model and loads saved parameters, auditing names and shapes.
    pub fn from_snapshot(config: ModelConfig, snapshot: &ParamSnapshot) -> Result<Self> {
        let mut model = Model::new(config)?;
        let saved = ParamStore::from_snapshot(snapshot);
        if saved.len() != model.params.len() {
            return Err(Error::config(
                "checkpoint",
                format!("{} saved parameters, model expects {}", saved.len(), model.params.len()),
            ));
        }
        model.params.load_values(&saved)?;
        Ok(model)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<ForwardOutput> {
        self.forward_with(tape, &self.params, x, None)
    }

    /// Forward pass against an explicit parameter store. `frozen[b]` fixes the
    /// neighbor matrices of block `b` instead of selecting them.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        x: Var,
        frozen: Option<&[Vec<NeighborMatrix>]>,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let s = tape.shape(x).to_vec();
        if s.len() != 4 || s[1] != cfg.input_len || s[2] != cfg.n_vars || s[3] != cfg.n_attrs {
            return Err(Error::shape(
                "model_forward",
                format!(
                    "expected [batch, {}, {}, {}], got {s:?}",
                    cfg.input_len, cfg.n_vars, cfg.n_attrs
                ),
            ));
        }
        let mut z = self.embed.forward(tape, params, x)?;
        let mut block_outputs = Vec::with_capacity(cfg.blocks);
        let mut block_predictions = Vec::with_capacity(cfg.blocks);
        let mut neighbors = Vec::with_capacity(cfg.blocks);
        for (b, (block, head)) in self.blocks.iter().zip(&self.heads).enumerate() {
            let z_attr = block.trip.forward(tape, params, z)?;
            let fixed = frozen.map(|f| f[b].as_slice());
            let (y, nb) = block.tip.forward(tape, params, z_attr, fixed)?;
            block_predictions.push(head.forward(tape, params, y)?);
            block_outputs.push(y);
            neighbors.push(nb);
            z = y;
        }
        let (prediction, alpha) = match (&self.fusion, cfg.fusion_kind) {
            (Some(dmfm), _) => {
                let (p, a) = dmfm.forward(tape, params, &block_predictions)?;
                (p, Some(a))
            }
            (None, FusionKind::Sum) => (fuse_sum(tape, &block_predictions)?, None),
            (None, _) => (fuse_mean(tape, &block_predictions)?, None),
        };
        Ok(ForwardOutput {
            prediction,
            block_predictions,
            block_outputs,
            alpha,
            neighbors,
        })
    }

    /// Inference on a batch `[batch, T_in, N, C]`; returns the forecast
    /// `[batch, horizon, N, 1]` and the fusion weights when learned.
    pub fn predict(&self, inputs: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let mut tape = Tape::inference();
        let x = tape.constant(inputs);
        let out = self.forward(&mut tape, x)?;
        Ok((tape.value(out.prediction), out.alpha.map(|a| tape.value(a))))
    }

    /// Forecast `[horizon, N, 1]` for one window `[T_in, N, C]`.
    pub fn forecast(&self, window: &Tensor) -> Result<Tensor> {
        let mut shape = vec![1];
        shape.extend_from_slice(window.shape());
        let (pred, _) = self.predict(&window.clone().reshape(&shape)?)?;
        pred.reshape(&[self.config.horizon, self.config.n_vars, 1])
    }
}
