//! Oracles and harnesses shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use dimignn::decoder::{DecoderHead, Dmfm};
use dimignn::gradcheck::{finite_difference_grad, finite_difference_param, relative_error};
use dimignn::layers::{Norm, NormKind};
use dimignn::tip::{GraphAttention, NeighborMatrix};
use dimignn::trip::{Axis, AxisAttention, SegmentMerge};
use dimignn::{Model, ModelConfig, ParamStore, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference neighbor selection, scoring every candidate from scratch each round.
///
/// Round one takes the candidate most cosine-similar to the target. Later
/// rounds take the candidate maximizing
/// `lambda * sim + (1 - lambda) * (1 - mean cosine to the picks so far)`.
/// The first maximal candidate in index order wins.
pub fn dnsm_oracle(profiles: &[Vec<f64>], lambda: f64, k: usize) -> Vec<Vec<usize>> {
    fn cos(u: &[f64], v: &[f64]) -> f64 {
        let mut dot = 0.0;
        let mut uu = 0.0;
        let mut vv = 0.0;
        for c in 0..u.len() {
            dot += u[c] * v[c];
            uu += u[c] * u[c];
            vv += v[c] * v[c];
        }
        if uu == 0.0 || vv == 0.0 {
            return 0.0;
        }
        dot / (uu.sqrt() * vv.sqrt())
    }

    let n = profiles.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut chosen: Vec<usize> = Vec::new();
        while chosen.len() < k {
            let mut best_j = usize::MAX;
            let mut best_score = f64::NEG_INFINITY;
            for j in 0..n {
                if j == i || chosen.contains(&j) {
                    continue;
                }
                let sim = cos(&profiles[i], &profiles[j]);
                let score = if chosen.is_empty() {
                    sim
                } else {
                    let mut total = 0.0;
                    for &s in &chosen {
                        total += cos(&profiles[j], &profiles[s]);
                    }
                    let div = 1.0 - total / chosen.len() as f64;
                    lambda * sim + (1.0 - lambda) * div
                };
                if best_j == usize::MAX || score > best_score {
                    best_j = j;
                    best_score = score;
                }
            }
            chosen.push(best_j);
        }
        out.push(chosen);
    }
    out
}

pub struct DnsmInstance {
    pub profiles: Vec<Vec<f64>>,
    pub lambda: f64,
    pub k: usize,
}

/// N in [3, 8], C in [2, 6], k in [1, min(4, N - 1)], lambda from the fixed grid.
pub fn random_dnsm_instance(rng: &mut ChaCha8Rng) -> DnsmInstance {
    let n = rng.gen_range(3..=8);
    let c = rng.gen_range(2..=6);
    let k = rng.gen_range(1..=4.min(n - 1));
    let lambda = [0.0, 0.3, 0.7, 1.0][rng.gen_range(0..4)];
    let profiles = (0..n)
        .map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    DnsmInstance { profiles, lambda, k }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Adds uniform noise to every parameter so no gradient is trivially symmetric.
pub fn perturb(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    let names: Vec<String> = store.names().map(String::from).collect();
    for name in names {
        for v in store.get_mut(&name).unwrap().data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

/// `sum(out * r)` with fixed pseudo-random weights `r`, so every output
/// element carries a distinct upstream gradient.
pub fn weighted_sum(tape: &mut Tape, out: Var) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let r: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.7311).sin()).collect();
    let r = tape.constant_from(&shape, r)?;
    let p = tape.mul(out, r)?;
    tape.sum(p)
}

pub const FD_STEP: f64 = 1e-5;

/// Gradients whose norms both fall below this are compared in absolute terms.
pub const ZERO_GRAD_FLOOR: f64 = 1e-8;

fn grad_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm(a).max(norm(b)) < ZERO_GRAD_FLOOR {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        return norm(&diff);
    }
    relative_error(a, b)
}

/// Largest relative error between analytic and central-difference gradients
/// of the scalar `loss`, over the input and every parameter in `store`.
/// Returns `(worst name, worst error)`.
pub fn max_grad_error<F>(store: &ParamStore, x: &Tensor, loss: F) -> (String, f64)
where
    F: Fn(&mut Tape, &ParamStore, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(&x.clone().with_requires_grad(true));
    let l = loss(&mut tape, store, xv).unwrap();
    let grads = tape.backward(l).unwrap();
    let gx = grads.get(xv).expect("input gradient").to_vec();
    let mut analytic = store.clone();
    analytic.zero_grads();
    grads.accumulate_into(&mut analytic).unwrap();

    let eval = |s: &ParamStore, x: &Tensor| -> f64 {
        let mut t = Tape::inference();
        let xv = t.constant(x);
        let l = loss(&mut t, s, xv).unwrap();
        t.scalar(l)
    };

    let mut worst = ("input".to_string(), grad_error(&gx, finite_difference_grad(|t| eval(store, t), x, FD_STEP).data()));
    for name in store.names() {
        let numeric = finite_difference_param(store, name, |s| eval(s, x), FD_STEP);
        let a = analytic.get(name).unwrap().grad().expect("parameter gradient");
        let err = grad_error(a, numeric.data());
        if err > worst.1 {
            worst = (name.to_string(), err);
        }
    }
    worst
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn grad_dyt() -> (String, f64) {
    let mut r = rng(11);
    let mut store = ParamStore::new();
    let norm = Norm::init(&mut store, "n", NormKind::Dyt, 4);
    perturb(&mut store, &mut r, 0.3);
    let x = random_tensor(&mut r, &[2, 3, 4], 1.5);
    max_grad_error(&store, &x, |t, s, x| {
        let y = norm.forward(t, s, x)?;
        weighted_sum(t, y)
    })
}

pub fn grad_layernorm() -> (String, f64) {
    let mut r = rng(12);
    let mut store = ParamStore::new();
    let norm = Norm::init(&mut store, "n", NormKind::LayerNorm, 4);
    perturb(&mut store, &mut r, 0.3);
    let x = random_tensor(&mut r, &[2, 3, 4], 1.5);
    max_grad_error(&store, &x, |t, s, x| {
        let y = norm.forward(t, s, x)?;
        weighted_sum(t, y)
    })
}

pub fn grad_msa_axis() -> (String, f64) {
    let mut r = rng(13);
    let mut store = ParamStore::new();
    let msa = AxisAttention::init(&mut store, &mut r, "msa", 4, 2).unwrap();
    perturb(&mut store, &mut r, 0.1);
    let x = random_tensor(&mut r, &[1, 2, 4, 2, 4], 1.0);
    max_grad_error(&store, &x, |t, s, x| {
        let a = msa.forward(t, s, x, Axis::Time)?;
        let b = msa.forward(t, s, a, Axis::Attribute)?;
        weighted_sum(t, b)
    })
}

pub fn grad_merge() -> (String, f64) {
    let mut r = rng(14);
    let mut store = ParamStore::new();
    let merge = SegmentMerge::init(&mut store, &mut r, "merge", 4);
    perturb(&mut store, &mut r, 0.1);
    // odd segment count exercises the duplicated tail
    let x = random_tensor(&mut r, &[1, 3, 4, 2, 4], 1.0);
    max_grad_error(&store, &x, |t, s, x| {
        let y = merge.forward(t, s, x)?;
        weighted_sum(t, y)
    })
}

pub fn grad_termm() -> (String, f64) {
    let mut r = rng(15);
    let mut store = ParamStore::new();
    let gat = GraphAttention::init(&mut store, &mut r, "gat", 4);
    perturb(&mut store, &mut r, 0.2);
    let x = random_tensor(&mut r, &[2, 2, 4, 2, 4], 1.0);
    let nbrs = vec![
        NeighborMatrix::from_rows(vec![vec![1, 2], vec![3, 0], vec![0, 3], vec![2, 1]]).unwrap(),
        NeighborMatrix::from_rows(vec![vec![3, 1], vec![2, 3], vec![1, 0], vec![0, 2]]).unwrap(),
    ];
    max_grad_error(&store, &x, |t, s, x| {
        let y = gat.forward(t, s, x, &nbrs)?;
        weighted_sum(t, y)
    })
}

pub fn grad_decode() -> (String, f64) {
    let mut r = rng(16);
    let mut store = ParamStore::new();
    let head = DecoderHead::init(&mut store, &mut r, "dec", 2, 4, 2);
    perturb(&mut store, &mut r, 0.1);
    let x = random_tensor(&mut r, &[2, 2, 4, 2, 4], 1.0);
    max_grad_error(&store, &x, |t, s, x| {
        let y = head.forward(t, s, x)?;
        weighted_sum(t, y)
    })
}

pub fn grad_dmfm() -> (String, f64) {
    let mut r = rng(17);
    let mut store = ParamStore::new();
    let dmfm = Dmfm::init(&mut store, &mut r, "dmfm", 2, 4, 3, 3);
    perturb(&mut store, &mut r, 0.2);
    // three per-block forecasts [2, 2, 4, 1] stacked on a leading axis
    let x = random_tensor(&mut r, &[3, 2, 2, 4, 1], 1.0);
    max_grad_error(&store, &x, |t, s, x| {
        let preds = (0..3)
            .map(|b| {
                let p = t.slice(x, 0, b, 1)?;
                t.reshape(p, &[2, 2, 4, 1])
            })
            .collect::<Result<Vec<_>>>()?;
        let (y, _) = dmfm.forward(t, s, &preds)?;
        weighted_sum(t, y)
    })
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        input_len: 8,
        segment_len: 2,
        blocks: 2,
        n_vars: 4,
        n_attrs: 2,
        d_hidden: 4,
        heads: 2,
        horizon: 2,
        k: 2,
        d_fuse: 3,
        ..Default::default()
    }
}

/// Full forward pass plus MSE against a random target, neighbors frozen at
/// the selection made by the unperturbed pass.
pub fn grad_full_model() -> (String, f64) {
    let mut r = rng(18);
    let mut model = Model::new(small_model_config()).unwrap();
    // unit-slope DyT, gamma 1.5
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for name in names {
        let fill = if name.ends_with(".alpha") {
            1.0
        } else if name.ends_with(".gamma") {
            1.5
        } else {
            continue;
        };
        model.params.get_mut(&name).unwrap().data_mut().fill(fill);
    }
    perturb(&mut model.params, &mut r, 0.05);
    let x = random_tensor(&mut r, &[2, 8, 4, 2], 1.0);
    let target = random_tensor(&mut r, &[2, 2, 4, 1], 1.0);
    let frozen = {
        let mut t = Tape::inference();
        let xv = t.constant(&x);
        model.forward(&mut t, xv).unwrap().neighbors
    };
    let store = model.params.clone();
    max_grad_error(&store, &x, |t, s, x| {
        let out = model.forward_with(t, s, x, Some(&frozen))?;
        let y = t.constant(&target);
        let d = t.sub(out.prediction, y)?;
        let sq = t.mul(d, d)?;
        t.mean(sq)
    })
}

/// Every gradient check, in a fixed order.
pub fn gradient_suite() -> Vec<(&'static str, (String, f64))> {
    vec![
        ("dyt", grad_dyt()),
        ("layernorm", grad_layernorm()),
        ("msa_axis", grad_msa_axis()),
        ("merge_segments", grad_merge()),
        ("termm_gat", grad_termm()),
        ("decode_block", grad_decode()),
        ("dmfm_fuse", grad_dmfm()),
        ("model_forward+mse", grad_full_model()),
    ]
}

pub const GRAD_TOLERANCE: f64 = 1e-6;
