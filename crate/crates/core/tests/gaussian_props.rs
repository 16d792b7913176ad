use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rjmi::gaussian::*;

/// Joint covariance `[[I, nu I], [nu I, I]]`.
fn joint_cov(n: usize, nu: f64) -> Array2<f64> {
    let mut c = Array2::eye(2 * n);
    for i in 0..n {
        c[[i, n + i]] = nu;
        c[[n + i, i]] = nu;
    }
    c
}

/// Log-determinant and inverse by Gauss-Jordan elimination with partial
/// pivoting.
fn log_det_and_inverse(m: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = Array2::eye(n);
    let mut log_det = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .unwrap();
        if pivot != col {
            for k in 0..n {
                a.swap([col, k], [pivot, k]);
                inv.swap([col, k], [pivot, k]);
            }
        }
        let p = a[[col, col]];
        assert!(
            p > 0.0 || pivot != col,
            "covariance must be positive definite"
        );
        log_det += p.abs().ln();
        for k in 0..n {
            a[[col, k]] /= p;
            inv[[col, k]] /= p;
        }
        for r in 0..n {
            if r != col {
                let factor = a[[r, col]];
                for k in 0..n {
                    a[[r, k]] -= factor * a[[col, k]];
                    inv[[r, k]] -= factor * inv[[col, k]];
                }
            }
        }
    }
    (log_det, inv)
}

fn log_normal_density(z: &Array1<f64>, cov: &Array2<f64>) -> f64 {
    let (log_det, inv) = log_det_and_inverse(cov);
    let quad = z.dot(&inv.dot(z));
    -0.5 * (quad + log_det + z.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

#[test]
fn true_mi_matches_log_det() {
    for n in 1..=8 {
        for nu in [0.05, 0.3, 0.5, std::f64::consts::FRAC_1_SQRT_2, 0.9, 0.99] {
            let cfg = GaussianTaskConfig::new(n, nu, 0).unwrap();
            let (log_det, _) = log_det_and_inverse(&joint_cov(n, nu));
            let oracle = -0.5 * log_det;
            assert!((true_mi(&cfg) - oracle).abs() < 1e-10, "n = {n}, nu = {nu}");
        }
    }
}

#[test]
fn true_mi_examples() {
    let c = GaussianTaskConfig::new(5, 0.5, 0).unwrap();
    assert!((true_mi(&c) - 0.7192).abs() < 1e-4);
    let c = GaussianTaskConfig::new(10, 0.5f64.sqrt(), 0).unwrap();
    assert!((true_mi(&c) - 5.0 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn exact_log_ratio_matches_densities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 1..=4 {
        for nu in [0.2, 0.6, 0.95] {
            let cfg = GaussianTaskConfig::new(n, nu, 0).unwrap();
            let batch = sample_pair_batch(&cfg, 20, &mut rng).unwrap();
            let eye = Array2::eye(n);
            for (x, y) in batch.xs.outer_iter().zip(batch.ys_shuffled.outer_iter()) {
                let z: Array1<f64> = x.iter().chain(y.iter()).copied().collect();
                let oracle = log_normal_density(&z, &joint_cov(n, nu))
                    - log_normal_density(&x.to_owned(), &eye)
                    - log_normal_density(&y.to_owned(), &eye);
                let got = exact_log_ratio(x, y, &cfg);
                assert!(
                    (got - oracle).abs() < 1e-9 * (1.0 + oracle.abs()),
                    "{got} vs {oracle}"
                );
            }
        }
    }
}

#[test]
fn rejects_bad_configs() {
    assert!(matches!(
        GaussianTaskConfig::new(0, 0.5, 0),
        Err(TaskError::ZeroDim)
    ));
    for nu in [0.0, 1.0, -0.3, 1.5, f64::NAN] {
        assert!(GaussianTaskConfig::new(3, nu, 0).is_err(), "nu = {nu}");
    }
    let cfg = GaussianTaskConfig::new(3, 0.5, 0).unwrap();
    assert!(sample_pair_batch(&cfg, 0, &mut cfg.rng()).is_err());
}

#[test]
fn sample_moments_match_covariance() {
    let cfg = GaussianTaskConfig::new(3, 0.6, 1).unwrap();
    let batch = sample_pair_batch(&cfg, 100_000, &mut cfg.rng()).unwrap();
    let n = batch.len() as f64;
    for j in 0..3 {
        let x = batch.xs.column(j);
        let y = batch.ys.column(j);
        let ys = batch.ys_shuffled.column(j);
        let var_x = x.dot(&x) / n;
        let var_y = y.dot(&y) / n;
        let cov = x.dot(&y) / n;
        let cov_shuffled = x.dot(&ys) / n;
        // standard errors are about 0.005
        assert!((var_x - 1.0).abs() < 0.03);
        assert!((var_y - 1.0).abs() < 0.03);
        assert!((cov - 0.6).abs() < 0.03);
        assert!(cov_shuffled.abs() < 0.03);
    }
    let cross = batch.xs.column(0).dot(&batch.ys.column(1)) / n;
    assert!(cross.abs() < 0.03);
}

#[test]
fn oracle_expectations() {
    let cfg = GaussianTaskConfig::new(2, 0.5, 2).unwrap();
    let batch = sample_pair_batch(&cfg, 200_000, &mut cfg.rng()).unwrap();
    let joint = oracle_scores(&batch.xs, &batch.ys, &cfg, 0.0);
    let marg = oracle_scores(&batch.xs, &batch.ys_shuffled, &cfg, 0.0);
    let n = joint.len() as f64;
    // E_P[T*] = I(X;Y) and E_Q[e^{T*}] = 1
    let mean_joint = joint.iter().sum::<f64>() / n;
    let mean_exp = marg.iter().map(|t| t.exp()).sum::<f64>() / n;
    assert!((mean_joint - true_mi(&cfg)).abs() < 0.01, "{mean_joint}");
    assert!((mean_exp - 1.0).abs() < 0.01, "{mean_exp}");
    // E_Q[e^{2 T*}] = (1 - nu^2)^{-n}
    let second = marg.iter().map(|t| (2.0 * t).exp()).sum::<f64>() / n;
    let oracle = (1.0 - 0.25f64).powi(-2);
    assert!(
        (second - oracle).abs() < 0.05 * oracle,
        "{second} vs {oracle}"
    );
    let shifted = oracle_scores(&batch.xs, &batch.ys, &cfg, 1.0);
    assert!(shifted
        .iter()
        .zip(&joint)
        .all(|(s, j)| (s - j - 1.0).abs() < 1e-12));
}

#[test]
fn sampling_is_seeded() {
    let cfg = GaussianTaskConfig::new(4, 0.3, 9).unwrap();
    let a = sample_pair_batch(&cfg, 64, &mut cfg.rng()).unwrap();
    let b = sample_pair_batch(&cfg, 64, &mut cfg.rng()).unwrap();
    assert_eq!(a.xs, b.xs);
    assert_eq!(a.ys_shuffled, b.ys_shuffled);
    let other = GaussianTaskConfig::new(4, 0.3, 10).unwrap();
    let c = sample_pair_batch(&other, 64, &mut other.rng()).unwrap();
    assert_ne!(a.xs, c.xs);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = sample_pair_batch(&cfg, 64, &mut rng).unwrap();
    assert_eq!(d.xs.shape(), &[64, 4]);
}

proptest! {
    #[test]
    fn shuffle_is_a_row_permutation(seed in 0u64..1000, n in 1usize..64, dim in 1usize..5) {
        let cfg = GaussianTaskConfig::new(dim, 0.5, seed).unwrap();
        let batch = sample_pair_batch(&cfg, n, &mut cfg.rng()).unwrap();
        let key = |r: ndarray::ArrayView1<f64>| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let mut original: Vec<_> = batch.ys.outer_iter().map(key).collect();
        let mut shuffled: Vec<_> = batch.ys_shuffled.outer_iter().map(key).collect();
        original.sort();
        shuffled.sort();
        prop_assert_eq!(original, shuffled);
    }

    #[test]
    fn true_mi_increasing_in_nu(dim in 1usize..20, nu in 0.01f64..0.98, d in 0.001f64..0.01) {
        let lo = GaussianTaskConfig::new(dim, nu, 0).unwrap();
        let hi = GaussianTaskConfig::new(dim, nu + d, 0).unwrap();
        prop_assert!(true_mi(&hi) > true_mi(&lo));
        prop_assert!(true_mi(&lo) > 0.0);
    }
}
