//! Inter-variable layer: diversity-aware neighbor selection followed by
//! graph attention over each variable's selected neighborhood.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{glorot, ParamStore};

/// Slope of the LeakyReLU used for attention logits and the node output.
pub const GAT_SLOPE: f64 = 0.2;

/// One `C`-vector per variable.
#[derive(Clone, Debug, PartialEq)]
pub struct VariableProfile {
    n: usize,
    c: usize,
    data: Vec<f64>,
}

impl VariableProfile {
    pub fn new(n: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if n < 2 || c == 0 || data.len() != n * c {
            return Err(Error::Data(format!(
                "profile needs N >= 2 rows of C >= 1 values (N={n}, C={c}, {} values)",
                data.len()
            )));
        }
        Ok(VariableProfile { n, c, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Data("profile rows differ in length".into()));
        }
        Self::new(rows.len(), c, rows.concat())
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.c
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.c..(i + 1) * self.c]
    }
}

/// Mean over the segment and hidden axes of a `[L, N, C, d]` slab (row-major),
/// giving one `C`-vector per variable.
pub fn temporal_profile(grid: &[f64], l: usize, n: usize, c: usize, d: usize) -> Result<VariableProfile> {
    if grid.len() != l * n * c * d {
        return Err(Error::shape(
            "temporal_profile",
            format!("{} values for [{l}, {n}, {c}, {d}]", grid.len()),
        ));
    }
    let mut out = vec![0.0; n * c];
    for seg in grid.chunks(n * c * d) {
        for (acc, cell) in out.iter_mut().zip(seg.chunks(d)) {
            *acc += cell.iter().sum::<f64>();
        }
    }
    let denom = (l * d) as f64;
    out.iter_mut().for_each(|v| *v /= denom);
    VariableProfile::new(n, c, out)
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu * nv)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DnsmConfig {
    /// Weight of similarity against diversity, in `[0, 1]`.
    pub lambda: f64,
    pub k: usize,
}

impl Default for DnsmConfig {
    fn default() -> Self {
        DnsmConfig { lambda: 0.7, k: 3 }
    }
}

impl DnsmConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("lambda", format!("{} is outside [0, 1]", self.lambda)));
        }
        if self.k == 0 || self.k >= n {
            return Err(Error::config(
                "k",
                format!("{} neighbors requested for {n} variables (need 1 <= k <= N-1)", self.k),
            ));
        }
        Ok(())
    }
}

/// Selected neighbor indices, one row per variable, in selection order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborMatrix {
    n: usize,
    k: usize,
    indices: Vec<usize>,
}

impl NeighborMatrix {
    /// Validates that rows are duplicate-free, exclude their own variable and
    /// hold `k <= N - 1` entries. `k = 0` (self-loop only) is allowed here.
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if n < 2 || k >= n {
            return Err(Error::Data(format!("neighbor matrix with N={n}, k={k}")));
        }
        for (i, row) in rows.iter().enumerate() {
            let mut seen = vec![false; n];
            let ok = row.len() == k
                && row
                    .iter()
                    .all(|&j| j < n && j != i && !std::mem::replace(&mut seen[j], true));
            if !ok {
                return Err(Error::Data(format!("invalid neighbor row {i}: {row:?}")));
            }
        }
        Ok(NeighborMatrix {
            n,
            k,
            indices: rows.concat(),
        })
    }

    pub fn self_only(n: usize) -> Result<Self> {
        Self::from_rows(vec![vec![]; n])
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        (0..self.n).map(move |i| self.row(i))
    }
}

/// Greedy similarity/diversity neighbor selection.
///
/// The first neighbor is the most cosine-similar variable. Each later pick
/// maximizes `λ·sim(i, j) + (1 − λ)·(1 − mean_n cos(j, j_n))` over unpicked
/// candidates, where `j_n` are the neighbors chosen so far. Ties go to the
/// lowest index.
pub fn dnsm_select(profile: &VariableProfile, cfg: &DnsmConfig) -> Result<NeighborMatrix> {
    let n = profile.n_vars();
    cfg.validate(n)?;
    let mut pair = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let s = cosine(profile.row(a), profile.row(b));
            pair[a * n + b] = s;
            pair[b * n + a] = s;
        }
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let sim = &pair[i * n..(i + 1) * n];
        let mut taken = vec![false; n];
        taken[i] = true;
        // Running sum of cosines between each candidate and the picks so far.
        let mut redundancy = vec![0.0; n];
        let mut picks = Vec::with_capacity(cfg.k);
        for m in 1..=cfg.k {
            let score = |j: usize| {
                if m == 1 {
                    sim[j]
                } else {
                    let diversity = 1.0 - redundancy[j] / (m - 1) as f64;
                    cfg.lambda * sim[j] + (1.0 - cfg.lambda) * diversity
                }
            };
            let mut best: Option<(usize, f64)> = None;
            for j in (0..n).filter(|&j| !taken[j]) {
                let s = score(j);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((j, s));
                }
            }
            let (pick, _) = best.expect("k <= N - 1 leaves a candidate");
            taken[pick] = true;
            picks.push(pick);
            for (j, r) in redundancy.iter_mut().enumerate() {
                *r += pair[j * n + pick];
            }
        }
        rows.push(picks);
    }
    NeighborMatrix::from_rows(rows)
}

/// Single-head graph attention over `{i} ∪ N_i` for every (segment, attribute)
/// slice, with variables as nodes.
#[derive(Clone, Debug)]
pub struct GraphAttention {
    pub w: String,
    pub a_src: String,
    pub a_dst: String,
    pub d: usize,
}

impl GraphAttention {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d: usize) -> Self {
        let g = GraphAttention {
            w: format!("{prefix}.w"),
            a_src: format!("{prefix}.a_src"),
            a_dst: format!("{prefix}.a_dst"),
            d,
        };
        store.insert(g.w.clone(), glorot(rng, d, d));
        store.insert(g.a_src.clone(), glorot(rng, d, 1));
        store.insert(g.a_dst.clone(), glorot(rng, d, 1));
        g
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        neighbors: &[NeighborMatrix],
    ) -> Result<Var> {
        Ok(self.forward_with_weights(tape, store, z, neighbors)?.0)
    }

    /// Also returns attention weights `[batch, N, L, C, k + 1]`, self first.
    pub fn forward_with_weights(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        neighbors: &[NeighborMatrix],
    ) -> Result<(Var, Var)> {
        let s = tape.shape(z).to_vec();
        if s.len() != 5 || s[4] != self.d {
            return Err(Error::shape("termm_gat", format!("expected [b, L, N, C, {}], got {s:?}", self.d)));
        }
        let (b, l, n, c, d) = (s[0], s[1], s[2], s[3], s[4]);
        if neighbors.len() != b {
            return Err(Error::shape(
                "termm_gat",
                format!("{} neighbor matrices for batch of {b}", neighbors.len()),
            ));
        }
        let k = neighbors[0].k();
        if neighbors.iter().any(|nb| nb.n_vars() != n || nb.k() != k) {
            return Err(Error::shape("termm_gat", format!("neighbor matrices must be {n} x {k}")));
        }
        let k1 = k + 1;
        let mut gather = Vec::with_capacity(b * n * k1);
        for (bi, nb) in neighbors.iter().enumerate() {
            for i in 0..n {
                gather.push(bi * n + i);
                gather.extend(nb.row(i).iter().map(|&j| bi * n + j));
            }
        }

        let w = tape.param(store, &self.w)?;
        let a_src = tape.param(store, &self.a_src)?;
        let a_dst = tape.param(store, &self.a_dst)?;

        let wh = tape.matmul(z, w)?;
        let wh = tape.permute(wh, &[0, 2, 1, 3, 4])?; // [b, N, L, C, d]
        let wh_nodes = tape.reshape(wh, &[b * n, l, c, d])?;

        let src = tape.matmul(wh, a_src)?; // [b, N, L, C, 1]
        let dst = tape.matmul(wh_nodes, a_dst)?; // [b*N, L, C, 1]
        let dst = tape.index_select(dst, 0, &gather)?;
        let dst = tape.reshape(dst, &[b, n, k1, l, c])?;
        let dst = tape.permute(dst, &[0, 1, 3, 4, 2])?; // [b, N, L, C, k1]
        let logits = tape.add(src, dst)?;
        let logits = tape.leaky_relu(logits, GAT_SLOPE)?;
        let att = tape.softmax_lastdim(logits)?;

        let feats = tape.index_select(wh_nodes, 0, &gather)?;
        let feats = tape.reshape(feats, &[b, n, k1, l, c, d])?;
        let feats = tape.permute(feats, &[0, 1, 3, 4, 2, 5])?; // [b, N, L, C, k1, d]
        let att_row = tape.reshape(att, &[b, n, l, c, 1, k1])?;
        let agg = tape.matmul(att_row, feats)?;
        let agg = tape.reshape(agg, &[b, n, l, c, d])?;
        let out = tape.leaky_relu(agg, GAT_SLOPE)?;
        Ok((tape.permute(out, &[0, 2, 1, 3, 4])?, att))
    }
}

/// Neighbor selection on the current representation, then graph attention.
#[derive(Clone, Debug)]
pub struct TipLayer {
    pub gat: GraphAttention,
    pub dnsm: DnsmConfig,
}

impl TipLayer {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d: usize, dnsm: DnsmConfig) -> Self {
        TipLayer {
            gat: GraphAttention::init(store, rng, &format!("{prefix}.gat"), d),
            dnsm,
        }
    }

    /// Per-sample neighbor matrices for a `[batch, L, N, C, d]` grid.
    ///
    /// Selection reads values only; no gradient flows through it.
    pub fn select(&self, tape: &Tape, z: Var) -> Result<Vec<NeighborMatrix>> {
        let s = tape.shape(z);
        let (b, l, n, c, d) = (s[0], s[1], s[2], s[3], s[4]);
        let slab = l * n * c * d;
        tape.data(z)
            .chunks(slab)
            .take(b)
            .map(|grid| dnsm_select(&temporal_profile(grid, l, n, c, d)?, &self.dnsm))
            .collect()
    }

    /// Returns the block output and the neighbor matrices used. Passing
    /// `frozen` skips selection and reuses the given matrices.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        frozen: Option<&[NeighborMatrix]>,
    ) -> Result<(Var, Vec<NeighborMatrix>)> {
        let neighbors = match frozen {
            Some(f) => f.to_vec(),
            None => self.select(tape, z)?,
        };
        let y = self.gat.forward(tape, store, z, &neighbors)?;
        Ok((y, neighbors))
    }
}
