mod common;

use common::{dnsm_oracle, random_dnsm_instance};
use dimignn::tip::{cosine, dnsm_select, DnsmConfig, VariableProfile};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn select(rows: &[Vec<f64>], lambda: f64, k: usize) -> Vec<Vec<usize>> {
    let p = VariableProfile::from_rows(rows).unwrap();
    dnsm_select(&p, &DnsmConfig { lambda, k })
        .unwrap()
        .rows()
        .map(<[usize]>::to_vec)
        .collect()
}

#[test]
fn agrees_with_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let inst = random_dnsm_instance(&mut rng);
        assert_eq!(
            select(&inst.profiles, inst.lambda, inst.k),
            dnsm_oracle(&inst.profiles, inst.lambda, inst.k),
            "instance {i}"
        );
    }
}

#[test]
fn hand_scored_four_variables() {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let rows = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![s, s], vec![0.0, 1.0]];
    assert_eq!(select(&rows, 0.7, 2)[0], [1, 2]);
    assert_eq!(select(&rows, 0.0, 2)[0], [1, 3]);
}

#[test]
fn identical_profiles_pick_lowest_indices() {
    let rows = vec![vec![0.3, -0.2, 0.9]; 6];
    for lambda in [0.0, 0.3, 0.7, 1.0] {
        let picked = select(&rows, lambda, 3);
        assert_eq!(picked[0], [1, 2, 3]);
        assert_eq!(picked[4], [0, 1, 2]);
    }
}

#[test]
fn zero_rows_count_as_orthogonal() {
    let rows = vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![0.9, 0.1], vec![-1.0, 0.0]];
    for lambda in [0.0, 0.7, 1.0] {
        assert_eq!(select(&rows, lambda, 3), dnsm_oracle(&rows, lambda, 3));
    }
    // the dead channel scores 0, above the anti-correlated one
    assert_eq!(select(&rows, 1.0, 3)[0], [2, 1, 3]);
}

fn profiles() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, f64)> {
    (3usize..=8, 2usize..=6).prop_flat_map(|(n, c)| {
        (
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, c), n),
            1..n,
            prop::sample::select(vec![0.0, 0.3, 0.5, 0.7, 1.0]),
        )
    })
}

proptest! {
    #[test]
    fn rows_are_distinct_and_exclude_self((rows, k, lambda) in profiles()) {
        for (i, row) in select(&rows, lambda, k).iter().enumerate() {
            prop_assert_eq!(row.len(), k);
            prop_assert!(!row.contains(&i));
            let mut sorted = row.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), k);
        }
    }

    #[test]
    fn positive_rescaling_changes_nothing(
        (rows, k, lambda) in profiles(),
        scales in prop::collection::vec(1e-3f64..1e3, 8),
    ) {
        let scaled: Vec<Vec<f64>> = rows
            .iter()
            .zip(&scales)
            .map(|(r, s)| r.iter().map(|v| v * s).collect())
            .collect();
        prop_assert_eq!(select(&rows, lambda, k), select(&scaled, lambda, k));
    }

    #[test]
    fn similarity_only_is_descending_cosine((rows, k, _) in profiles()) {
        let picked = select(&rows, 1.0, k);
        for (i, row) in picked.iter().enumerate() {
            let sims: Vec<f64> = row.iter().map(|&j| cosine(&rows[i], &rows[j])).collect();
            prop_assert!(sims.windows(2).all(|w| w[0] >= w[1]));
            let floor = *sims.last().unwrap();
            let skipped_better = (0..rows.len())
                .filter(|j| *j != i && !row.contains(j))
                .any(|j| cosine(&rows[i], &rows[j]) > floor);
            prop_assert!(!skipped_better);
        }
    }

    #[test]
    fn relabeling_variables_relabels_the_selection(
        (rows, k, lambda) in profiles(),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let n = rows.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        // variable perm[i] of the relabeled set is variable i of the original
        let mut relabeled = vec![Vec::new(); n];
        for (i, &p) in perm.iter().enumerate() {
            relabeled[p] = rows[i].clone();
        }
        let original = select(&rows, lambda, k);
        let moved = select(&relabeled, lambda, k);
        for i in 0..n {
            let mapped: Vec<usize> = original[i].iter().map(|&j| perm[j]).collect();
            prop_assert_eq!(&moved[perm[i]], &mapped);
        }
    }
}
