//! Segment embedding: the encoder's initial `[L, N, C, d_hidden]` grid.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Number of segments after front padding `input_len` to a multiple of `segment_len`.
pub fn segment_count(input_len: usize, segment_len: usize) -> usize {
    input_len.div_ceil(segment_len)
}

/// Maps each length-`segment_len` run of one (variable, attribute) channel
/// through a shared linear map and adds a learned embedding per segment index.
#[derive(Clone, Debug)]
pub struct SegmentEmbedding {
    pub proj: Linear,
    pub position: String,
    pub input_len: usize,
    pub segment_len: usize,
    pub d_hidden: usize,
}

impl SegmentEmbedding {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        input_len: usize,
        segment_len: usize,
        d_hidden: usize,
    ) -> Result<Self> {
        if segment_len == 0 || input_len == 0 || d_hidden == 0 {
            return Err(Error::config(
                "segment_len",
                "input length, segment length and d_hidden must be >= 1",
            ));
        }
        let proj = Linear::init(store, rng, &format!("{prefix}.proj"), segment_len, d_hidden, true);
        let position = format!("{prefix}.pos");
        let l = segment_count(input_len, segment_len);
        store.insert(position.clone(), Tensor::zeros(&[l, d_hidden]));
        Ok(SegmentEmbedding {
            proj,
            position,
            input_len,
            segment_len,
            d_hidden,
        })
    }

    pub fn segments(&self) -> usize {
        segment_count(self.input_len, self.segment_len)
    }

    /// `x: [batch, T_in, N, C]` to `[batch, L, N, C, d_hidden]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.input_len {
            return Err(Error::shape(
                "segment_embed",
                format!("expected [batch, {}, N, C], got {shape:?}", self.input_len),
            ));
        }
        let (b, n, c) = (shape[0], shape[2], shape[3]);
        let l = self.segments();
        let pad = l * self.segment_len - self.input_len;
        // front padding repeats the earliest step
        let x = if pad > 0 {
            let idx: Vec<usize> = std::iter::repeat_n(0, pad).chain(0..self.input_len).collect();
            tape.index_select(x, 1, &idx)?
        } else {
            x
        };
        let x = tape.reshape(x, &[b, l, self.segment_len, n, c])?;
        let x = tape.permute(x, &[0, 1, 3, 4, 2])?;
        let h = self.proj.forward(tape, store, x)?;
        let pos = tape.param(store, &self.position)?;
        let pos = tape.reshape(pos, &[l, 1, 1, self.d_hidden])?;
        tape.add(h, pos)
    }
}
