use conceptlab::agents::communication_cost;
use conceptlab::bvae::{self, kl_rows, BvaeConfig};
use conceptlab::data::{gen_concept_set, ConceptSetConfig};
use conceptlab::eval;
use conceptlab::nn::Tensor;
use conceptlab::somvae::{nearest_embedding, SomGrid};
use conceptlab::split_rng;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #[test]
    fn kl_is_nonnegative(mu in prop::collection::vec(-5.0f64..5.0, 5), lv in prop::collection::vec(-6.0f64..4.0, 5)) {
        let kl = kl_rows(&Tensor::row_vector(&mu), &Tensor::row_vector(&lv))[0];
        prop_assert!(kl >= 0.0);
    }

    #[test]
    fn communication_cost_is_positive_and_decreasing(ls in prop::collection::vec(-5.0f64..5.0, 8), k in 0usize..8, d in 0.01f64..1.0) {
        let t = Tensor::new(2, 4, ls.clone()).unwrap();
        let c = communication_cost(&t);
        prop_assert!(c > 0.0);
        let mut up = ls;
        up[k] += d;
        prop_assert!(communication_cost(&Tensor::new(2, 4, up).unwrap()) < c);
    }

    #[test]
    fn grid_degrees_count_each_edge_twice(rows in 1usize..6, cols in 1usize..6) {
        let g = SomGrid::new(rows, cols).unwrap();
        let total: usize = (0..g.len()).map(|k| g.neighbors(k).unwrap().len()).sum();
        prop_assert_eq!(total, 2 * (rows * (cols - 1) + cols * (rows - 1)));
        for k in 0..g.len() {
            for n in g.neighbors(k).unwrap() {
                prop_assert!(g.neighbors(n).unwrap().contains(&k));
            }
        }
    }

    #[test]
    fn nmi_is_invariant_to_relabelling(seq in prop::collection::vec(0usize..4, 20..200), perm in Just([2usize, 0, 3, 1])) {
        let relabelled: Vec<usize> = seq.iter().map(|&s| perm[s] + 10).collect();
        let distinct = seq.iter().collect::<std::collections::BTreeSet<_>>().len();
        let v = eval::nmi(&relabelled, &seq).unwrap();
        if distinct > 1 {
            prop_assert!((v - 1.0).abs() < 1e-9, "{v}");
        } else {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn pearson_is_bounded_and_symmetric(xy in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..50)) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        if let (Ok(a), Ok(b)) = (eval::pearson(&x, &y), eval::pearson(&y, &x)) {
            prop_assert!((-1.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn nearest_embedding_agrees_with_brute_force() {
    let mut rng = split_rng(17, 0);
    let emb = Tensor::new(
        6,
        16,
        (0..96).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    for _ in 0..1000 {
        let z: Vec<f64> = (0..16).map(|_| rng.random_range(-1.5..1.5)).collect();
        let dists: Vec<f64> = (0..6)
            .map(|k| {
                emb.row(k)
                    .iter()
                    .zip(&z)
                    .map(|(e, v)| (e - v).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let brute = (0..6)
            .min_by(|&a, &b| dists[a].total_cmp(&dists[b]))
            .unwrap();
        assert_eq!(nearest_embedding(&z, &emb), brute);
    }
}

#[test]
fn trained_bvae_beats_the_mean_predictor() {
    let data = gen_concept_set(
        &ConceptSetConfig {
            count: 600,
            ..Default::default()
        },
        5,
    )
    .unwrap();
    let cfg = BvaeConfig {
        epochs: 15,
        ..Default::default()
    };
    let (model, report) = bvae::train(&data, &cfg).unwrap();
    assert!(report.final_loss < report.initial_loss);
    let val = data.standardized_matrix(&data.split.val);
    let mean_pred_mse = {
        let train = data.standardized_matrix(&data.split.train);
        let n = train.rows() as f64;
        let means: Vec<f64> = (0..train.cols())
            .map(|c| train.column(c).iter().sum::<f64>() / n)
            .collect();
        let mut s = 0.0;
        for r in 0..val.rows() {
            for (c, m) in means.iter().enumerate() {
                s += (val.get(r, c) - m).powi(2);
            }
        }
        s / val.len() as f64
    };
    let mu = model.encode_means(&val).unwrap();
    let recon = model.decode(&mu).unwrap();
    let mse = val.zip_map(&recon, |a, b| (a - b).powi(2)).sum() / val.len() as f64;
    assert!(mse < mean_pred_mse, "{mse} vs {mean_pred_mse}");
}
