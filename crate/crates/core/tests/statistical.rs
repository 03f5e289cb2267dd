//! Monte Carlo checks of the estimators on small simulated designs.

use rand::Rng;

use netcv_core::analysis::true_risk_minimizer;
use netcv_core::criteria::{full_data_fits, select_from_fits, CriterionKind};
use netcv_core::cv::select_model_cv;
use netcv_core::folds::FoldScheme;
use netcv_core::netgen::{
    largest_remainder, pareto_order_statistic_means, powerlaw_block_sizes, sample_network,
    BlockSizeScheme, GeneratorCell,
};
use netcv_core::sbm::FitOptions;
use netcv_core::stream;

fn simulated_order_statistic_means(n: usize, k: usize, alpha: f64, draws: usize, seed: u64) -> Vec<f64> {
    let x_min = n as f64 * (alpha - 1.0) / (alpha * k as f64);
    let mut rng = stream(seed);
    let mut sums = vec![0.0; k];
    for _ in 0..draws {
        let mut xs: Vec<f64> = (0..k)
            .map(|_| x_min * (1.0 - rng.random::<f64>()).powf(-1.0 / alpha))
            .collect();
        xs.sort_by(|a, b| b.total_cmp(a));
        for (s, x) in sums.iter_mut().zip(&xs) {
            *s += x;
        }
    }
    sums.iter().map(|s| s / draws as f64).collect()
}

#[test]
fn pareto_order_statistics_match_simulation() {
    // Light tail: every order statistic has finite variance.
    let means = simulated_order_statistic_means(60, 3, 3.0, 1_000_000, 7);
    let analytic = pareto_order_statistic_means(60, 3, 3.0);
    for (m, a) in means.iter().zip(&analytic) {
        assert!((m - a).abs() / a < 0.01, "simulated {m} vs analytic {a}");
    }

    // Shape 1.5: the maximum has infinite variance, so only the smaller order
    // statistic is compared; the block sizes follow from it because the
    // expected order statistics sum to n.
    let (n, k) = (60usize, 2usize);
    let means = simulated_order_statistic_means(n, k, 1.5, 1_000_000, 2024);
    let analytic = pareto_order_statistic_means(n, k, 1.5);
    assert!((means[1] - analytic[1]).abs() / analytic[1] < 0.01, "{means:?} vs {analytic:?}");
    let simulated = largest_remainder(&[n as f64 - means[1], means[1]], n);
    let sizes = powerlaw_block_sizes(n, k).unwrap();
    for (s, t) in simulated.iter().zip(&sizes) {
        assert!(s.abs_diff(*t) <= 1, "{simulated:?} vs {sizes:?}");
    }
}

#[test]
fn latin_cv_prefers_one_block_on_homogeneous_dense_networks() {
    let cell = GeneratorCell {
        n: 60,
        k: 1,
        sizes: BlockSizeScheme::Equal,
        b: 0.15,
        r: 1.0,
    };
    let model = cell.model().unwrap();
    let reps = 20;
    let mut hits = 0;
    for rep in 0..reps {
        let mut rng = stream(500 + rep);
        let y = sample_network(&model.probabilities, &mut rng);
        let (k, curve) = select_model_cv(&y, 1..=4, FoldScheme::Latin, 5, &mut rng).unwrap();
        assert_eq!(curve.ks(), vec![1, 2, 3, 4]);
        hits += usize::from(k == 1);
    }
    assert!(hits >= 18, "{hits}/{reps}");
}

#[test]
fn unpenalized_likelihood_never_picks_the_true_small_model() {
    let mut correct = 0;
    for (i, &(k_true, b, r)) in [(1usize, 0.1, 3.0), (2, 0.1, 5.0)].iter().enumerate() {
        let cell = GeneratorCell {
            n: 30,
            k: k_true,
            sizes: BlockSizeScheme::Equal,
            b,
            r,
        };
        let model = cell.model().unwrap();
        for rep in 0..10 {
            let mut rng = stream(((i as u64) << 32) + rep);
            let y = sample_network(&model.probabilities, &mut rng);
            let fits = full_data_fits(&y, 1..=6, FitOptions::default(), &mut rng).unwrap();
            let (k, curve) = select_from_fits(&fits, CriterionKind::LogLikelihood, 30).unwrap();
            assert_eq!(curve.len(), 6);
            correct += usize::from(k == k_true);
            // Shared fits: the penalized criteria see identical likelihoods.
            let (_, aic) = select_from_fits(&fits, CriterionKind::Aic, 30).unwrap();
            for (a, l) in aic.iter().zip(&curve) {
                assert!((a.value - l.value - 2.0 * a.d as f64).abs() < 1e-9);
            }
        }
    }
    assert_eq!(correct, 0);
}

#[test]
fn constant_truth_is_best_fit_by_one_block() {
    let cell = GeneratorCell {
        n: 300,
        k: 1,
        sizes: BlockSizeScheme::Equal,
        b: 0.1,
        r: 1.0,
    };
    let model = cell.model().unwrap();
    for rep in 0..2 {
        let mut rng = stream(900 + rep);
        let y = sample_network(&model.probabilities, &mut rng);
        let (k, curve) = true_risk_minimizer(&model.probabilities, &y, 1..=3, &mut rng).unwrap();
        assert_eq!(k, 1, "{curve:?}");
    }
}
