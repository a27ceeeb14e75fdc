mod common;

use rand::Rng;

use simattr::attribution::gradcos_scores;
use simattr::oracle::{training_objective, TrainingView};

#[test]
fn objective_gradient_matches_central_differences() {
    for seed in 0..50 {
        let mut rng = common::rng(seed);
        let (n, d, k) = (
            rng.random_range(4..20),
            rng.random_range(1..5),
            rng.random_range(2..5),
        );
        let set = common::random_set(&mut rng, n, d, k);
        let view = TrainingView::full(&set);
        let model = common::random_model(&mut rng, k, d);
        let wd = rng.random_range(0.0..0.1);
        let (_, gw, gb) = training_objective(&model, &view, wd);
        let analytic: Vec<f64> = gw.into_iter().chain(gb).collect();
        let numeric =
            common::finite_difference(&model, 1e-6, |m| training_objective(m, &view, wd).0);
        let err = common::rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn sample_gradient_matches_central_differences() {
    for seed in 0..50 {
        let mut rng = common::rng(1000 + seed);
        let (d, k) = (rng.random_range(1..6), rng.random_range(2..6));
        let model = common::random_model(&mut rng, k, d);
        let x = common::gaussian_rows(&mut rng, 1, d, 1.0).remove(0);
        let y = rng.random_range(0..k) as u32;
        let analytic = model.sample_gradient(&x, y).unwrap();
        let numeric = common::finite_difference(&model, 1e-6, |m| common::sample_loss(m, &x, y));
        let err = common::rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn gradcos_of_sample_with_itself_is_one() {
    for seed in 0..20 {
        let mut rng = common::rng(2000 + seed);
        let set = common::random_set(&mut rng, 30, 4, 3);
        let model = common::random_model(&mut rng, 3, 4);
        let i = rng.random_range(0..set.n());
        let scores = gradcos_scores(&model, &set, &set.target(i)).unwrap();
        assert!(
            (scores.scores[i] - 1.0).abs() <= 1e-9,
            "seed {seed}: {}",
            scores.scores[i]
        );
    }
}
