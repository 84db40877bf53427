use proptest::prelude::*;

use seeood::data::{make_dataset, ClusterRole, GaussianClusterSpec};
use seeood::detection::{detect, select_threshold, tpr_at_tnr, Decision};
use seeood::training::discriminator_loss_and_grads;
use seeood::wasserstein::wasserstein_score;
use seeood::{
    parse_config, Activation, CostMatrix, Dataset, ExperimentConfig, GridSpec, Heatmap,
    LabeledPoint, Mlp, OutputHead, Preset, ProbVector, Rng,
};

fn prob_vector(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, k).prop_filter_map("all-zero weights", |w| {
        let total: f64 = w.iter().sum();
        (total > 1e-9).then(|| w.iter().map(|x| x / total).collect())
    })
}

fn cost_matrix(k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(0.0f64..5.0, k * k).prop_map(move |flat| {
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| if i == j { 0.0 } else { flat[i * k + j] })
                    .collect()
            })
            .collect()
    })
}

fn head() -> impl Strategy<Value = OutputHead> {
    prop_oneof![
        Just(OutputHead::Softmax),
        Just(OutputHead::Tanh),
        Just(OutputHead::Identity)
    ]
}

proptest! {
    #[test]
    fn weight_text_round_trips_bit_exactly(
        sizes in prop::collection::vec(1usize..6, 2..5),
        seed in any::<u64>(),
        scale in -40i32..40,
        tanh in any::<bool>(),
        head in head(),
    ) {
        let hidden = if tanh { Activation::Tanh } else { Activation::Relu };
        let mut net = Mlp::glorot(&sizes, hidden, head, &mut Rng::new(seed)).unwrap();
        let factor = 10f64.powi(scale);
        let flat: Vec<f64> = net.flat_params().iter().map(|v| v * factor + v / 3.0).collect();
        net.set_flat_params(&flat).unwrap();
        let back = Mlp::from_text(&net.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), net.to_text());
        let bits = |m: &Mlp| m.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&net));
        prop_assert_eq!(back, net);
    }

    #[test]
    fn score_is_bounded_and_lipschitz(
        (u, v) in (2usize..9).prop_flat_map(|k| (prob_vector(k), prob_vector(k))),
    ) {
        let k = u.len();
        let m = CostMatrix::binary(k).unwrap();
        let (su, _) = wasserstein_score(&ProbVector::new(u.clone()).unwrap(), &m).unwrap();
        let (sv, _) = wasserstein_score(&ProbVector::new(v.clone()).unwrap(), &m).unwrap();
        let upper = 1.0 - 1.0 / k as f64;
        prop_assert!((0.0..=upper + 1e-12).contains(&su));
        let l2: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!((su - sv).abs() <= l2 + 1e-12);
    }

    #[test]
    fn score_is_the_cheapest_column_with_lowest_index_ties(
        (p, rows) in (2usize..7).prop_flat_map(|k| (prob_vector(k), cost_matrix(k))),
    ) {
        let m = CostMatrix::new(rows.clone()).unwrap();
        let (score, arg) = wasserstein_score(&ProbVector::new(p.clone()).unwrap(), &m).unwrap();
        let costs: Vec<f64> = (0..p.len())
            .map(|c| p.iter().zip(&rows).map(|(pj, row)| pj * row[c]).sum())
            .collect();
        for (c, &cost) in costs.iter().enumerate() {
            prop_assert!(score <= cost + 1e-12);
            if c < arg {
                prop_assert!(cost > score);
            }
        }
        prop_assert!((costs[arg] - score).abs() <= 1e-12);
    }

    #[test]
    fn tpr_is_non_increasing_in_target(
        ind in prop::collection::vec(0.0f64..1.0, 1..60),
        ood in prop::collection::vec(0.0f64..1.0, 1..60),
        a in 0.01f64..=1.0,
        b in 0.01f64..=1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (tpr_lo, _) = tpr_at_tnr(&ind, &ood, lo).unwrap();
        let (tpr_hi, _) = tpr_at_tnr(&ind, &ood, hi).unwrap();
        prop_assert!(tpr_hi <= tpr_lo);
    }

    #[test]
    fn threshold_is_sound_minimal_and_inclusive(
        scores in prop::collection::vec((0u32..20).prop_map(|v| v as f64 / 20.0), 1..80),
        target in 0.01f64..=1.0,
    ) {
        let threshold = select_threshold(&scores, target).unwrap();
        let n = scores.len() as f64;
        let tnr = |eta: f64| scores.iter().filter(|&&s| s <= eta).count() as f64 / n;
        prop_assert!(tnr(threshold.eta) >= target);
        prop_assert!(scores.contains(&threshold.eta));
        for &s in scores.iter().filter(|&&s| s < threshold.eta) {
            prop_assert!(tnr(s) < target);
        }
        prop_assert_eq!(detect(threshold.eta, &threshold), Decision::InD);
    }

    #[test]
    fn loss_decomposes_into_its_terms(
        seed in any::<u64>(),
        beta_ood in 0.0f64..10.0,
        beta_z in 0.0f64..200.0,
    ) {
        let mut rng = Rng::new(seed);
        let disc = Mlp::glorot(&[2, 6, 3], Activation::Relu, OutputHead::Softmax, &mut rng).unwrap();
        let mut point = || vec![rng.uniform_range(-1.0, 8.0), rng.uniform_range(-1.0, 8.0)];
        let ind: Vec<LabeledPoint> = (0..5).map(|i| LabeledPoint { x: point(), label: i % 3 }).collect();
        let ood: Vec<Vec<f64>> = (0..2).map(|_| point()).collect();
        let gen: Vec<Vec<f64>> = (0..4).map(|_| point()).collect();
        let cost = CostMatrix::binary(3).unwrap();
        let l = discriminator_loss_and_grads(&disc, &ind, &ood, &gen, beta_ood, beta_z, &cost).unwrap();
        prop_assert!((l.loss - (l.ce - beta_ood * l.ood_score + beta_z * l.gen_score)).abs() <= 1e-12);
    }

    #[test]
    fn dataset_csv_round_trips(
        seed in any::<u64>(),
        n_train in 0usize..20,
        n_test in 1usize..20,
        dim in 1usize..4,
    ) {
        let cluster = |mean: f64, role| GaussianClusterSpec {
            mean: vec![mean; dim],
            std: 0.7,
            n_train,
            n_test,
            role,
        };
        let clusters = [
            cluster(0.0, ClusterRole::InD(0)),
            cluster(3.0, ClusterRole::InD(1)),
            cluster(-3.0, ClusterRole::OoD),
        ];
        let data = make_dataset(&clusters, &mut Rng::new(seed)).unwrap();
        let back = Dataset::from_csv(&data.to_csv()).unwrap();
        prop_assert_eq!(back.to_csv(), data.to_csv());
        prop_assert_eq!(back.ind_test.len(), data.ind_test.len());
        prop_assert_eq!(back.ood_test, data.ood_test);
    }

    #[test]
    fn heatmap_csv_round_trips_and_pgm_is_in_range(
        values in prop::collection::vec(0.0f64..1.0, 16),
        max_score in 0.1f64..1.0,
    ) {
        let grid = GridSpec { resolution: 4, ..GridSpec::default() };
        let heatmap = Heatmap { grid, values };
        prop_assert_eq!(&Heatmap::from_csv(&heatmap.to_csv(), grid).unwrap(), &heatmap);
        let pgm = heatmap.to_pgm(max_score);
        let levels: Vec<u32> = pgm.lines().skip(3).flat_map(|l| l.split(' ')).map(|c| c.parse().unwrap()).collect();
        prop_assert_eq!(levels.len(), 16);
        prop_assert!(levels.iter().all(|&g| g <= 255));
        prop_assert_eq!(pgm, heatmap.to_pgm(max_score));
    }

    #[test]
    fn config_round_trips(
        preset in prop_oneof![Just(Preset::Setting1), Just(Preset::Setting2), Just(Preset::Wood2d)],
        seed in any::<u64>(),
        lr in 1e-6f64..1.0,
        beta_z in 0.0f64..1000.0,
        iterations in 1usize..100_000,
        replications in 1usize..10,
        targets in prop::collection::vec(0.01f64..=1.0, 1..4),
        resolution in 1usize..500,
    ) {
        let mut c = ExperimentConfig::from_preset(preset);
        c.train.seed = seed;
        c.train.lr_d = lr;
        c.train.beta_z = beta_z;
        c.train.iterations = iterations;
        c.replications = replications;
        c.tnr_targets = targets;
        c.grid.resolution = resolution;
        prop_assert_eq!(parse_config(&c.to_ini()).unwrap(), c);
    }
}
