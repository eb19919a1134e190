//! Cross-time and cross-attribute layer of an encoder block.
//!
//! Input and output grids are `[batch, L, N, C, d_hidden]`. A block above
//! the first one merges adjacent segment pairs before attending, so its
//! output has `ceil(L / 2)` segments.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{Linear, Mlp, Norm, NormKind};
use crate::params::ParamStore;

/// Axis of the `[batch, L, N, C, d]` grid that attention runs along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Time,
    Attribute,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::Time => 1,
            Axis::Attribute => 3,
        }
    }
}

/// Concatenates adjacent segment pairs on the hidden axis and projects back.
#[derive(Clone, Debug)]
pub struct SegmentMerge {
    pub proj: Linear,
}

impl SegmentMerge {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d: usize) -> Self {
        SegmentMerge {
            proj: Linear::init(store, rng, prefix, 2 * d, d, true),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let s = tape.shape(z).to_vec();
        let (b, l, n, c, d) = (s[0], s[1], s[2], s[3], s[4]);
        // Odd counts duplicate the final segment.
        let z = if l % 2 == 1 {
            let idx: Vec<usize> = (0..l).chain(std::iter::once(l - 1)).collect();
            tape.index_select(z, 1, &idx)?
        } else {
            z
        };
        let half = l.div_ceil(2);
        let z = tape.reshape(z, &[b, half, 2, n, c, d])?;
        let z = tape.permute(z, &[0, 1, 3, 4, 2, 5])?;
        let z = tape.reshape(z, &[b, half, n, c, 2 * d])?;
        self.proj.forward(tape, store, z)
    }
}

/// Multi-head scaled dot-product self-attention along one axis of the grid.
#[derive(Clone, Debug)]
pub struct AxisAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub d: usize,
}

impl AxisAttention {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        d: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::config(
                "heads",
                format!("d_hidden {d} is not divisible by {heads} heads"),
            ));
        }
        Ok(AxisAttention {
            q: Linear::init(store, rng, &format!("{prefix}.q"), d, d, true),
            k: Linear::init(store, rng, &format!("{prefix}.k"), d, d, true),
            v: Linear::init(store, rng, &format!("{prefix}.v"), d, d, true),
            o: Linear::init(store, rng, &format!("{prefix}.o"), d, d, true),
            heads,
            d,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var, axis: Axis) -> Result<Var> {
        Ok(self.forward_with_weights(tape, store, z, axis)?.0)
    }

    /// Also returns the attention weights, `[M, heads, P, P]` where `P` is the
    /// attended axis length and `M` the product of the other grid axes.
    pub fn forward_with_weights(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        axis: Axis,
    ) -> Result<(Var, Var)> {
        let s = tape.shape(z).to_vec();
        if s.len() != 5 || s[4] != self.d {
            return Err(Error::shape("msa_axis", format!("expected [b, L, N, C, {}], got {s:?}", self.d)));
        }
        let ax = axis.index();
        let mut perm: Vec<usize> = (0..4).filter(|&i| i != ax).collect();
        perm.extend([ax, 4]);
        let moved = tape.permute(z, &perm)?;
        let p = s[ax];
        let m = s[..4].iter().product::<usize>() / p;
        let (h, dh) = (self.heads, self.d / self.heads);
        let flat = tape.reshape(moved, &[m, p, self.d])?;

        let split = |tape: &mut Tape, lin: &Linear| -> Result<Var> {
            let y = lin.forward(tape, store, flat)?;
            let y = tape.reshape(y, &[m, p, h, dh])?;
            tape.permute(y, &[0, 2, 1, 3])
        };
        let q = split(tape, &self.q)?;
        let k = split(tape, &self.k)?;
        let v = split(tape, &self.v)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let weights = tape.softmax_lastdim(scores)?;
        let ctx = tape.matmul(weights, v)?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[m, p, self.d])?;
        let out = self.o.forward(tape, store, ctx)?;
        let permuted_shape: Vec<usize> = perm.iter().map(|&i| s[i]).collect();
        let out = tape.reshape(out, &permuted_shape)?;
        let mut inverse = vec![0; 5];
        for (i, &pi) in perm.iter().enumerate() {
            inverse[pi] = i;
        }
        Ok((tape.permute(out, &inverse)?, weights))
    }
}

#[derive(Clone, Debug)]
pub struct TripConfig {
    pub d_hidden: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub norm: NormKind,
    /// Blocks above the first merge segment pairs before attending.
    pub merge: bool,
}

/// Segment merge (optional), time attention, attribute attention, each
/// attention and MLP sublayer wrapped in a residual plus normalization.
#[derive(Clone, Debug)]
pub struct TripLayer {
    pub merge: Option<SegmentMerge>,
    pub msa_time: AxisAttention,
    pub mlp_time: Mlp,
    pub msa_attr: AxisAttention,
    pub mlp_attr: Mlp,
    /// One per normalization site, in evaluation order.
    pub norms: [Norm; 4],
}

impl TripLayer {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, cfg: &TripConfig) -> Result<Self> {
        let d = cfg.d_hidden;
        let merge = cfg
            .merge
            .then(|| SegmentMerge::init(store, rng, &format!("{prefix}.merge"), d));
        let msa_time = AxisAttention::init(store, rng, &format!("{prefix}.msa_time"), d, cfg.heads)?;
        let mlp_time = Mlp::init(store, rng, &format!("{prefix}.mlp_time"), d, cfg.mlp_hidden);
        let msa_attr = AxisAttention::init(store, rng, &format!("{prefix}.msa_attr"), d, cfg.heads)?;
        let mlp_attr = Mlp::init(store, rng, &format!("{prefix}.mlp_attr"), d, cfg.mlp_hidden);
        let norm = |store: &mut ParamStore, i: usize| Norm::init(store, &format!("{prefix}.norm{i}"), cfg.norm, d);
        let norms = [norm(store, 1), norm(store, 2), norm(store, 3), norm(store, 4)];
        Ok(TripLayer {
            merge,
            msa_time,
            mlp_time,
            msa_attr,
            mlp_attr,
            norms,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        // residual on the merged grid
        let z = match &self.merge {
            Some(m) => m.forward(tape, store, z)?,
            None => z,
        };
        let a = self.msa_time.forward(tape, store, z, Axis::Time)?;
        let r = tape.add(z, a)?;
        let z_time_hat = self.norms[0].forward(tape, store, r)?;
        let f = self.mlp_time.forward(tape, store, z_time_hat)?;
        let r = tape.add(z_time_hat, f)?;
        let z_time = self.norms[1].forward(tape, store, r)?;

        let a = self.msa_attr.forward(tape, store, z_time, Axis::Attribute)?;
        let r = tape.add(z_time, a)?;
        let z_attr_hat = self.norms[2].forward(tape, store, r)?;
        let f = self.mlp_attr.forward(tape, store, z_attr_hat)?;
        let r = tape.add(z_attr_hat, f)?;
        self.norms[3].forward(tape, store, r)
    }
}
