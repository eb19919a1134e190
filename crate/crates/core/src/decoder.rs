//! Per-scale forecasting heads and the fusion of their outputs.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::params::ParamStore;

/// Linear head from one block's main-attribute representation to the horizon.
///
/// Takes `[batch, L_b, N, C, d]` and returns `[batch, horizon, N, 1]`.
#[derive(Clone, Debug)]
pub struct DecoderHead {
    pub proj: Linear,
    pub segments: usize,
    pub d_hidden: usize,
    pub horizon: usize,
}

impl DecoderHead {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        segments: usize,
        d_hidden: usize,
        horizon: usize,
    ) -> Self {
        DecoderHead {
            proj: Linear::init(store, rng, prefix, segments * d_hidden, horizon, true),
            segments,
            d_hidden,
            horizon,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, y: Var) -> Result<Var> {
        let s = tape.shape(y).to_vec();
        if s.len() != 5 || s[1] != self.segments || s[4] != self.d_hidden {
            return Err(Error::shape(
                "decode_block",
                format!("expected [b, {}, N, C, {}], got {s:?}", self.segments, self.d_hidden),
            ));
        }
        let (b, n) = (s[0], s[2]);
        let main = tape.slice(y, 3, 0, 1)?; // [b, L, N, 1, d]
        let main = tape.permute(main, &[0, 2, 1, 3, 4])?;
        let main = tape.reshape(main, &[b, n, self.segments * self.d_hidden])?;
        let out = self.proj.forward(tape, store, main)?; // [b, N, horizon]
        let out = tape.permute(out, &[0, 2, 1])?;
        tape.reshape(out, &[b, self.horizon, n, 1])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    /// Learned softmax weights over the per-scale forecasts.
    #[default]
    Dmfm,
    /// Plain elementwise sum.
    Sum,
    /// Plain elementwise mean.
    Mean,
}

/// Learned per-sample convex weighting of the `B` scale forecasts.
///
/// `w1` is stored as `[horizon·N, d_fuse]` and `w2` as `[d_fuse, B]`, so they
/// right-multiply row vectors.
#[derive(Clone, Debug)]
pub struct Dmfm {
    pub fc1: Linear,
    pub fc2: Linear,
    pub blocks: usize,
}

impl Dmfm {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        horizon: usize,
        n_vars: usize,
        blocks: usize,
        d_fuse: usize,
    ) -> Self {
        Dmfm {
            fc1: Linear::init(store, rng, &format!("{prefix}.w1"), horizon * n_vars, d_fuse, true),
            fc2: Linear::init(store, rng, &format!("{prefix}.w2"), d_fuse, blocks, true),
            blocks,
        }
    }

    /// Fuses `preds` (each `[batch, horizon, N, 1]`); returns the forecast and
    /// the weights `[batch, B]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, preds: &[Var]) -> Result<(Var, Var)> {
        if preds.len() != self.blocks {
            return Err(Error::shape(
                "dmfm_fuse",
                format!("{} forecasts for {} blocks", preds.len(), self.blocks),
            ));
        }
        let (stacked, shape) = stack(tape, preds)?;
        let b = shape[0];
        let avg = tape.mean_axis(stacked, 1, false)?; // [b, flat]
        let hidden = self.fc1.forward(tape, store, avg)?;
        let hidden = tape.relu(hidden)?;
        let logits = self.fc2.forward(tape, store, hidden)?;
        let alpha = tape.softmax_lastdim(logits)?; // [b, B]
        let weights = tape.reshape(alpha, &[b, 1, self.blocks])?;
        let fused = tape.matmul(weights, stacked)?; // [b, 1, flat]
        Ok((tape.reshape(fused, &shape)?, alpha))
    }
}

/// Stacks equally shaped forecasts into `[batch, B, rest]`.
fn stack(tape: &mut Tape, preds: &[Var]) -> Result<(Var, Vec<usize>)> {
    let first = *preds
        .first()
        .ok_or_else(|| Error::shape("fuse", "no forecasts to fuse"))?;
    let shape = tape.shape(first).to_vec();
    if preds.iter().any(|&p| tape.shape(p) != shape.as_slice()) {
        return Err(Error::shape("fuse", "per-scale forecasts differ in shape"));
    }
    let b = shape[0];
    let flat: usize = shape[1..].iter().product();
    let rows = preds
        .iter()
        .map(|&p| tape.reshape(p, &[b, 1, flat]))
        .collect::<Result<Vec<_>>>()?;
    Ok((tape.concat(&rows, 1)?, shape))
}

/// Elementwise sum of the per-scale forecasts.
pub fn fuse_sum(tape: &mut Tape, preds: &[Var]) -> Result<Var> {
    let (stacked, shape) = stack(tape, preds)?;
    let s = tape.sum_axis(stacked, 1, false)?;
    tape.reshape(s, &shape)
}

/// Elementwise mean of the per-scale forecasts.
pub fn fuse_mean(tape: &mut Tape, preds: &[Var]) -> Result<Var> {
    let (stacked, shape) = stack(tape, preds)?;
    let s = tape.mean_axis(stacked, 1, false)?;
    tape.reshape(s, &shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn bias_only_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let head = DecoderHead::init(&mut store, &mut rng, "dec", 2, 3, 4);
        store.get_mut("dec.w").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        store.get_mut("dec.b").unwrap().data_mut().iter_mut().for_each(|v| *v = 1.5);
        let mut tape = Tape::new();
        let y = tape.constant(&random(&mut rng, &[2, 2, 5, 3, 3]));
        let out = head.forward(&mut tape, &store, y).unwrap();
        assert_eq!(tape.shape(out), &[2, 4, 5, 1]);
        assert!(tape.data(out).iter().all(|&v| v == 1.5));
    }

    #[test]
    fn head_reads_only_the_main_attribute() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let head = DecoderHead::init(&mut store, &mut rng, "dec", 1, 2, 1);
        let mut x = random(&mut rng, &[1, 1, 2, 3, 2]);
        let mut tape = Tape::new();
        let a = tape.constant(&x);
        let before = head.forward(&mut tape, &store, a).unwrap();
        let before = tape.data(before).to_vec();
        // perturb attribute 2 only
        for n in 0..2 {
            for k in 0..2 {
                x.data_mut()[(n * 3 + 2) * 2 + k] += 10.0;
            }
        }
        let b = tape.constant(&x);
        let after = head.forward(&mut tape, &store, b).unwrap();
        assert_eq!(tape.data(after), before.as_slice());
    }

    fn fusion(blocks: usize) -> (ParamStore, Dmfm, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let d = Dmfm::init(&mut store, &mut rng, "dmfm", 3, 2, blocks, 4);
        (store, d, rng)
    }

    #[test]
    fn single_block_returns_it_exactly() {
        let (store, dmfm, mut rng) = fusion(1);
        let mut tape = Tape::new();
        let p = tape.constant(&random(&mut rng, &[2, 3, 2, 1]));
        let (out, alpha) = dmfm.forward(&mut tape, &store, &[p]).unwrap();
        assert!(tape.data(alpha).iter().all(|&a| a == 1.0));
        assert_eq!(tape.data(out), tape.data(p));
    }

    #[test]
    fn zero_weights_average_uniformly() {
        let (mut store, dmfm, mut rng) = fusion(3);
        for name in ["dmfm.w1.w", "dmfm.w2.w", "dmfm.w2.b"] {
            store.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let preds: Vec<Var> = (0..3).map(|_| tape.constant(&random(&mut rng, &[1, 3, 2, 1]))).collect();
        let (out, alpha) = dmfm.forward(&mut tape, &store, &preds).unwrap();
        assert!(tape.data(alpha).iter().all(|a| (a - 1.0 / 3.0).abs() < 1e-15));
        let mean = fuse_mean(&mut tape, &preds).unwrap();
        for (a, b) in tape.data(out).iter().zip(tape.data(mean)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_forecasts_pass_through() {
        let (store, dmfm, mut rng) = fusion(3);
        let p = random(&mut rng, &[2, 3, 2, 1]);
        let mut tape = Tape::new();
        let preds: Vec<Var> = (0..3).map(|_| tape.constant(&p)).collect();
        let (out, _) = dmfm.forward(&mut tape, &store, &preds).unwrap();
        for (a, b) in tape.data(out).iter().zip(p.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_fusion_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random(&mut rng, &[1, 2, 2, 1]);
        let neg = Tensor::new(p.shape().to_vec(), p.data().iter().map(|v| -v).collect()).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(&p);
        let b = tape.constant(&neg);
        let one = fuse_sum(&mut tape, &[a]).unwrap();
        assert_eq!(tape.data(one), p.data());
        let zero = fuse_sum(&mut tape, &[a, b]).unwrap();
        assert!(tape.data(zero).iter().all(|&v| v == 0.0));
        let c = tape.constant(&Tensor::full(&[1, 2, 2, 1], 0.5));
        let three = fuse_sum(&mut tape, &[c, c, c]).unwrap();
        assert!(tape.data(three).iter().all(|&v| v == 1.5));
    }
}
