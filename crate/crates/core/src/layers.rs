//! Small building blocks shared by the encoder, decoder and fusion layers.
//!
//! Layers do not own their weights: they hold parameter names and read the
//! values from a [`ParamStore`] when binding them onto a [`Tape`].

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{glorot, ParamStore};
use crate::tensor::Tensor;

const LAYERNORM_EPS: f64 = 1e-9;

/// Initial DyT steepness.
pub const DYT_ALPHA_INIT: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct Linear {
    w: String,
    b: Option<String>,
}

impl Linear {
    /// Registers `{prefix}.w` of shape `[d_in, d_out]` and, if `bias`, a zero `{prefix}.b`.
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Self {
        let w = format!("{prefix}.w");
        store.insert(w.clone(), glorot(rng, d_in, d_out));
        let b = bias.then(|| {
            let b = format!("{prefix}.b");
            store.insert(b.clone(), Tensor::zeros(&[d_out]));
            b
        });
        Linear { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, &self.w)?;
        let b = match &self.b {
            Some(name) => Some(tape.param(store, name)?),
            None => None,
        };
        tape.linear(x, w, b)
    }

    pub fn weight_name(&self) -> &str {
        &self.w
    }

    pub fn bias_name(&self) -> Option<&str> {
        self.b.as_deref()
    }
}

/// Two-layer ReLU perceptron `d -> hidden -> d`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d: usize, hidden: usize) -> Self {
        Mlp {
            fc1: Linear::init(store, rng, &format!("{prefix}.fc1"), d, hidden, true),
            fc2: Linear::init(store, rng, &format!("{prefix}.fc2"), hidden, d, true),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        self.fc2.forward(tape, store, h)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Dyt,
    LayerNorm,
}

/// Normalization over the last (hidden) axis.
#[derive(Clone, Debug)]
pub enum Norm {
    /// `gamma * tanh(alpha * x) + beta`, scalar `alpha`.
    Dyt {
        alpha: String,
        gamma: String,
        beta: String,
    },
    LayerNorm { gain: String, bias: String },
}

impl Norm {
    pub fn init(store: &mut ParamStore, prefix: &str, kind: NormKind, d: usize) -> Self {
        match kind {
            NormKind::Dyt => {
                let n = Norm::Dyt {
                    alpha: format!("{prefix}.alpha"),
                    gamma: format!("{prefix}.gamma"),
                    beta: format!("{prefix}.beta"),
                };
                if let Norm::Dyt { alpha, gamma, beta } = &n {
                    store.insert(alpha.clone(), Tensor::scalar(DYT_ALPHA_INIT));
                    store.insert(gamma.clone(), Tensor::full(&[d], 1.0));
                    store.insert(beta.clone(), Tensor::zeros(&[d]));
                }
                n
            }
            NormKind::LayerNorm => {
                let gain = format!("{prefix}.gain");
                let bias = format!("{prefix}.bias");
                store.insert(gain.clone(), Tensor::full(&[d], 1.0));
                store.insert(bias.clone(), Tensor::zeros(&[d]));
                Norm::LayerNorm { gain, bias }
            }
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        match self {
            Norm::Dyt { alpha, gamma, beta } => {
                let (a, g, b) = (
                    tape.param(store, alpha)?,
                    tape.param(store, gamma)?,
                    tape.param(store, beta)?,
                );
                dyt(tape, x, a, g, b)
            }
            Norm::LayerNorm { gain, bias } => {
                let (g, b) = (tape.param(store, gain)?, tape.param(store, bias)?);
                layernorm(tape, x, g, b)
            }
        }
    }

    pub fn param_names(&self) -> Vec<&str> {
        match self {
            Norm::Dyt { alpha, gamma, beta } => vec![alpha, gamma, beta],
            Norm::LayerNorm { gain, bias } => vec![gain, bias],
        }
    }
}

/// Dynamic tanh: `gamma ⊙ tanh(alpha · x) + beta`, broadcast over leading axes.
pub fn dyt(tape: &mut Tape, x: Var, alpha: Var, gamma: Var, beta: Var) -> Result<Var> {
    let ax = tape.mul(x, alpha)?;
    let t = tape.tanh(ax)?;
    let g = tape.mul(t, gamma)?;
    tape.add(g, beta)
}

/// Per-position normalization over the last axis followed by `gain`, `bias`.
pub fn layernorm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let last = tape.shape(x).len() - 1;
    let mean = tape.mean_axis(x, last, true)?;
    let centered = tape.sub(x, mean)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean_axis(sq, last, true)?;
    let var = tape.add_scalar(var, LAYERNORM_EPS)?;
    let std = tape.sqrt(var)?;
    let normed = tape.div(centered, std)?;
    let scaled = tape.mul(normed, gain)?;
    tape.add(scaled, bias)
}
