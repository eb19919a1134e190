// Synthetic coupled multivariate series for desk-scale experiments.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::SeriesTensor;

/// `parent`'s main attribute at `t - lag` feeds `child`'s main attribute at `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingEdge {
    pub parent: usize,
    pub child: usize,
    pub lag: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CouplingGraph {
    pub edges: Vec<CouplingEdge>,
}

impl CouplingGraph {
    pub fn empty() -> Self {
        Self::default()
    }

    /// `i -> i + 1 (mod n)` for every variable.
    pub fn ring(n: usize, lag: usize, weight: f64) -> Self {
        CouplingGraph {
            edges: (0..n)
                .map(|i| CouplingEdge {
                    parent: i,
                    child: (i + 1) % n,
                    lag,
                    weight,
                })
                .collect(),
        }
    }

    /// Redundant pairs plus long-range drivers.
    ///
    /// Variable `2g + 1` follows its partner `2g` at lag 1 (weight 0.8), so
    /// each pair carries largely the same information. Every variable is also
    /// driven by variable `i + 2 (mod n)` at lag `lag` (weight 0.6), a member
    /// of the next pair; with `lag` at least the forecast horizon, the
    /// driver's observed values inform the whole horizon.
    pub fn paired_relay(n: usize, lag: usize) -> Self {
        let mut edges = Vec::new();
        for i in 0..n {
            if i % 2 == 1 {
                edges.push(CouplingEdge {
                    parent: i - 1,
                    child: i,
                    lag: 1,
                    weight: 0.8,
                });
            }
            if n > 2 {
                edges.push(CouplingEdge {
                    parent: (i + 2) % n,
                    child: i,
                    lag,
                    weight: 0.6,
                });
            }
        }
        CouplingGraph { edges }
    }
}

const NOISE: f64 = 0.4;

/// Sinusoid-plus-noise channels with lagged parent influence on the main attribute.
///
/// Each variable gets its own period (incommensurate across variables) and a
/// random phase. Attribute 0 is `sin(2πt/P + φ) + noise + Σ w · parent(t - lag)`;
/// attributes `c ≥ 1` are phase-shifted copies of the variable's seasonal
/// component with independent noise. Deterministic given `seed`.
pub fn synth_coupled(
    n: usize,
    c: usize,
    t: usize,
    seed: u64,
    graph: &CouplingGraph,
) -> Result<SeriesTensor> {
    if n < 2 || c < 1 || t < 1 {
        return Err(Error::Data(format!("synth_coupled needs N>=2, C>=1, T>=1 (got {n}, {c}, {t})")));
    }
    for e in &graph.edges {
        if e.parent >= n || e.child >= n || e.lag == 0 {
            return Err(Error::Data(format!("invalid coupling edge {e:?}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let periods: Vec<f64> = (0..n)
        .map(|i| 12.0 + 19.0 * i as f64 / (n - 1) as f64 + rng.gen_range(0.0..0.5))
        .collect();
    let phases: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..TAU)).collect();
    let attr_shift: Vec<f64> = (0..c).map(|k| 0.9 * k as f64).collect();

    let mut data = vec![0.0; t * n * c];
    let idx = |ti: usize, v: usize, a: usize| (ti * n + v) * c + a;
    for ti in 0..t {
        for v in 0..n {
            let angle = TAU * ti as f64 / periods[v] + phases[v];
            for a in 0..c {
                let eps: f64 = StandardNormal.sample(&mut rng);
                data[idx(ti, v, a)] = (angle + attr_shift[a]).sin() + NOISE * eps;
            }
        }
        for e in &graph.edges {
            if ti >= e.lag {
                let parent = data[idx(ti - e.lag, e.parent, 0)];
                data[idx(ti, e.child, 0)] += e.weight * parent;
            }
        }
    }
    let mut series = SeriesTensor::new(
        Tensor::new(vec![t, n, c], data)?,
        (0..n).map(|i| format!("v{i:02}")).collect(),
        (0..c)
            .map(|k| if k == 0 { "target".to_string() } else { format!("cov{k}") })
            .collect(),
    )?;
    series.step = "1".into();
    Ok(series)
}
