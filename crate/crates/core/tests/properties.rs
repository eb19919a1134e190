mod common;

use common::{perturb, random_tensor};
use dimignn::data::{make_windows, NormStats, SeriesTensor};
use dimignn::decoder::Dmfm;
use dimignn::train::mse_mae;
use dimignn::{ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn series(t: usize, n: usize, c: usize, data: Vec<f64>) -> SeriesTensor {
    SeriesTensor::new(
        Tensor::new(vec![t, n, c], data).unwrap(),
        (0..n).map(|i| format!("v{i}")).collect(),
        (0..c).map(|i| format!("a{i}")).collect(),
    )
    .unwrap()
}

fn series_strategy() -> impl Strategy<Value = SeriesTensor> {
    (6usize..40, 2usize..5, 1usize..4).prop_flat_map(|(t, n, c)| {
        prop::collection::vec(-50.0f64..50.0, t * n * c).prop_map(move |d| series(t, n, c, d))
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        logits in prop::collection::vec(-300.0f64..300.0, 1..7),
    ) {
        let width = logits.len();
        let data: Vec<f64> = (0..rows).flat_map(|r| logits.iter().map(move |v| v * (r as f64 + 1.0) / rows as f64)).collect();
        let mut tape = Tape::inference();
        let x = tape.constant_from(&[rows, width], data).unwrap();
        let y = tape.softmax_lastdim(x).unwrap();
        for row in tape.data(y).chunks(width) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_is_a_convex_combination(seed in any::<u64>(), blocks in 1usize..5, scale in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dmfm = Dmfm::init(&mut store, &mut rng, "f", 3, 2, blocks, 4);
        perturb(&mut store, &mut rng, scale);
        let preds: Vec<Tensor> = (0..blocks).map(|_| random_tensor(&mut rng, &[2, 3, 2, 1], 10.0)).collect();
        let mut tape = Tape::inference();
        let vars: Vec<_> = preds.iter().map(|p| tape.constant(p)).collect();
        let (out, alpha) = dmfm.forward(&mut tape, &store, &vars).unwrap();
        for row in tape.data(alpha).chunks(blocks) {
            prop_assert!(row.iter().all(|&a| a >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for (i, &v) in tape.data(out).iter().enumerate() {
            let lo = preds.iter().map(|p| p.data()[i]).fold(f64::INFINITY, f64::min);
            let hi = preds.iter().map(|p| p.data()[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn windows_tile_the_series_without_leakage(
        s in series_strategy(),
        input_len in 1usize..5,
        horizon in 1usize..4,
        stride in 1usize..4,
    ) {
        prop_assume!(s.len() >= input_len + horizon);
        let w = make_windows(&s, input_len, horizon, stride).unwrap();
        prop_assert_eq!(w.len(), (s.len() - input_len - horizon) / stride + 1);
        let (n, c) = (s.n_vars(), s.n_attrs());
        for (i, sample) in w.samples.iter().enumerate() {
            prop_assert_eq!(sample.start, i * stride);
            for t in 0..input_len {
                for v in 0..n {
                    for a in 0..c {
                        prop_assert_eq!(sample.input.at(&[t, v, a]), s.get(sample.start + t, v, a));
                    }
                }
            }
            let (from, to) = w.target_range(i);
            prop_assert_eq!(from, sample.start + input_len);
            prop_assert_eq!(to - from, horizon);
            for h in 0..horizon {
                for v in 0..n {
                    prop_assert_eq!(sample.target.at(&[h, v, 0]), s.get(from + h, v, 0));
                }
            }
        }
    }

    #[test]
    fn normalization_round_trips(s in series_strategy()) {
        let stats = NormStats::fit(&s);
        let z = stats.normalize(&s).unwrap();
        let back = stats.denormalize(&z).unwrap();
        for (a, b) in back.values().data().iter().zip(s.values().data()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
        for v in 0..s.n_vars() {
            let x = z.get(0, v, 0);
            prop_assert!((stats.denormalize_target(v, x) - s.get(0, v, 0)).abs() <= 1e-9 * (1.0 + s.get(0, v, 0).abs()));
        }
    }

    #[test]
    fn error_metrics_are_consistent(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..30),
    ) {
        let n = pairs.len();
        let p = Tensor::new(vec![n, 1, 1], pairs.iter().map(|x| x.0).collect()).unwrap();
        let t = Tensor::new(vec![n, 1, 1], pairs.iter().map(|x| x.1).collect()).unwrap();
        let (mse, mae) = mse_mae(&p, &t).unwrap();
        prop_assert!(mse >= 0.0 && mae >= 0.0);
        prop_assert!(mse + 1e-12 >= mae * mae);
        prop_assert_eq!(mse_mae(&t, &p).unwrap(), (mse, mae));
    }
}
