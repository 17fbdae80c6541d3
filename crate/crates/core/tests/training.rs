//! End-to-end training on small problems.

use wganpca::experiment::{experiment_covariance, median, run_training};
use wganpca::{Algorithm, TrainConfig};

fn tiny(seed: u64) -> TrainConfig {
    TrainConfig {
        d: 4,
        r: 4,
        n: 2000,
        batch: 100,
        algorithm: Algorithm::Gp,
        critic_hidden: vec![16, 16],
        max_gen_iters: 300,
        decay_every_epochs: 100,
        log_every: 50,
        log_wall_time: false,
        seed,
        ..TrainConfig::default()
    }
}

/// With `r = d` the r-PCA residual is zero, so the distance to the truth
/// should fall from its initial value.
#[test]
fn full_rank_generator_approaches_truth() {
    let cov = experiment_covariance(11, 4, 0).unwrap();
    let mut initial = Vec::new();
    let mut finals = Vec::new();
    for seed in 0..5 {
        let (row, outcome) = run_training(&tiny(seed), &cov, "tiny").unwrap();
        assert!(!row.aborted);
        assert!(row.population_pca_residual < 1e-12);
        initial.push(outcome.log.records[0].frob_to_truth);
        finals.push(row.final_frob_to_truth);
    }
    let (i, f) = (median(&initial), median(&finals));
    assert!(f < 0.7 * i, "median initial {i}, final {f}: {finals:?}");
}

#[test]
fn same_seed_same_log() {
    let cov = experiment_covariance(12, 4, 0).unwrap();
    let cfg = TrainConfig { max_gen_iters: 60, algorithm: Algorithm::Wc, ..tiny(3) };
    let a = run_training(&cfg, &cov, "a").unwrap().1.log.to_csv();
    let b = run_training(&cfg, &cov, "b").unwrap().1.log.to_csv();
    assert_eq!(a, b);
    let other = run_training(&TrainConfig { seed: 4, ..cfg }, &cov, "c").unwrap().1.log.to_csv();
    assert_ne!(a, other);
}
