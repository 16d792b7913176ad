use ndarray::{concatenate, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rjmi::critic::*;
use rjmi::estimators::{
    evaluate, rje_a_moments_ratio, rje_a_value_at_ratio, score_gradients, EstimatorKind, ScoreBatch,
};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Scores and relu on/off pattern computed with explicit loops.
fn naive_forward(params: &CriticParameters, input: &Array2<f64>) -> (Vec<f64>, Vec<bool>) {
    let last = params.layers.len() - 1;
    let mut pattern = Vec::new();
    let mut scores = Vec::new();
    for row in input.outer_iter() {
        let mut current: Vec<f64> = row.to_vec();
        for (l, layer) in params.layers.iter().enumerate() {
            let (fan_in, fan_out) = layer.weights.dim();
            let mut next = vec![0.0; fan_out];
            for (j, out) in next.iter_mut().enumerate() {
                let mut acc = layer.bias[j];
                for (i, &c) in current.iter().enumerate().take(fan_in) {
                    acc += c * layer.weights[[i, j]];
                }
                *out = acc;
            }
            if l < last {
                for v in &mut next {
                    pattern.push(*v > 0.0);
                    *v = v.max(0.0);
                }
            }
            current = next;
        }
        scores.push(current[0]);
    }
    (scores, pattern)
}

struct Problem {
    xs: Array2<f64>,
    ys: Array2<f64>,
    ys_shuffled: Array2<f64>,
}

impl Problem {
    fn new(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Self {
        let xs = random_matrix(rng, n, dim);
        let ys = &xs * 0.8 + random_matrix(rng, n, dim) * 0.6;
        let mut ys_shuffled = ys.clone();
        for i in 0..n {
            let j = (i + 1) % n;
            ys_shuffled.row_mut(i).assign(&ys.row(j));
        }
        Self {
            xs,
            ys,
            ys_shuffled,
        }
    }

    fn input(&self) -> Array2<f64> {
        let joint = concatenate(Axis(1), &[self.xs.view(), self.ys.view()]).unwrap();
        let marg = concatenate(Axis(1), &[self.xs.view(), self.ys_shuffled.view()]).unwrap();
        concatenate(Axis(0), &[joint.view(), marg.view()]).unwrap()
    }

    fn pass(&self, params: &CriticParameters) -> ForwardPass {
        forward_joint_and_marginal(
            params,
            self.xs.view(),
            self.ys.view(),
            self.ys_shuffled.view(),
        )
        .unwrap()
    }
}

fn score_batch(pass: &ForwardPass) -> ScoreBatch {
    let (j, m) = split_scores(&pass.scores);
    ScoreBatch::new(j.to_vec(), m.to_vec()).unwrap()
}

/// Objective whose gradient `score_gradients` describes. With a detached
/// ratio the RJE-a moments ratio is frozen at `r0`.
fn objective(kind: &EstimatorKind, scores: &ScoreBatch, r0: f64) -> f64 {
    match *kind {
        EstimatorKind::RjeA {
            c,
            detach_ratio: true,
        } => rje_a_value_at_ratio(scores, c, r0).unwrap().value,
        _ => evaluate(kind, scores).unwrap().value,
    }
}

fn all_kinds() -> Vec<EstimatorKind> {
    vec![
        EstimatorKind::Mine,
        EstimatorKind::Nwj,
        EstimatorKind::Smile { tau: 5.0 },
        EstimatorKind::RjeA {
            c: 2.0,
            detach_ratio: true,
        },
        EstimatorKind::RjeA {
            c: 2.0,
            detach_ratio: false,
        },
        EstimatorKind::RjeB { a: 4.0, b: 1.0 },
    ]
}

/// Checks the chained analytic gradient against central differences.
/// Returns (checked, skipped) parameter counts; parameters whose
/// perturbation flips a relu are skipped since the objective has a kink
/// inside the difference interval.
fn check_full_chain(
    kind: &EstimatorKind,
    params: &CriticParameters,
    problem: &Problem,
) -> (usize, usize) {
    let h = 1e-6;
    let pass = problem.pass(params);
    let scores = score_batch(&pass);
    let r0 = rje_a_moments_ratio(&scores);
    let g = score_gradients(kind, &scores).unwrap();
    let score_grads: Vec<f64> = g.d_joint.iter().chain(&g.d_marg).copied().collect();
    let analytic = backward_batch(params, &pass, &score_grads)
        .unwrap()
        .flatten();
    let input = problem.input();
    let base = params.flatten();
    let mut probe = params.clone();
    let (mut checked, mut skipped) = (0, 0);
    for k in 0..base.len() {
        let mut eval = |delta: f64| {
            let mut theta = base.clone();
            theta[k] += delta;
            probe.assign_flat(&theta).unwrap();
            let value = objective(kind, &score_batch(&problem.pass(&probe)), r0);
            (value, naive_forward(&probe, &input).1)
        };
        let (up, pattern_up) = eval(h);
        let (down, pattern_down) = eval(-h);
        if pattern_up != pattern_down {
            skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let err = (numeric - analytic[k]).abs();
        let scale = numeric.abs().max(analytic[k].abs());
        assert!(
            err <= (1e-4 * scale).max(1e-6),
            "{} param {k}: analytic {} vs numeric {numeric}",
            kind.name(),
            analytic[k]
        );
        checked += 1;
    }
    (checked, skipped)
}

#[test]
fn forward_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = CriticConfig::new(6, vec![7, 5]).unwrap();
    let params = init_critic(&cfg, 3).unwrap();
    let xs = random_matrix(&mut rng, 9, 3);
    let ys = random_matrix(&mut rng, 9, 3);
    let pass = forward_batch(&params, xs.view(), ys.view()).unwrap();
    let input = concatenate(Axis(1), &[xs.view(), ys.view()]).unwrap();
    let (oracle, _) = naive_forward(&params, &input);
    for (a, b) in pass.scores.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn full_chain_gradients_for_every_estimator() {
    let cfg = CriticConfig::new(4, vec![8, 8]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params_per_point = init_critic(&cfg, 0).unwrap().num_params();
    for kind in all_kinds() {
        let (mut checked, mut skipped, mut guarded) = (0, 0, 0);
        for point in 0..20 {
            let mut params = init_critic(&cfg, 100 + point).unwrap();
            // alternate between the RJE-a guard regime and the regular one
            let last = params.layers.len() - 1;
            params.layers[last].bias[0] = if point % 2 == 0 { 0.0 } else { -4.0 };
            let problem = Problem::new(&mut rng, 6, 2);
            let out = evaluate(&kind, &score_batch(&problem.pass(&params))).unwrap();
            guarded += usize::from(out.diagnostics.guard_triggered);
            let (c, s) = check_full_chain(&kind, &params, &problem);
            checked += c;
            skipped += s;
        }
        assert!(
            skipped * 50 <= checked,
            "{}: skipped {skipped} of {checked}",
            kind.name()
        );
        assert!(checked >= 20 * params_per_point * 9 / 10);
        if matches!(kind, EstimatorKind::RjeA { .. }) {
            assert!(
                guarded > 0 && guarded < 20,
                "both guard regimes are exercised"
            );
        }
    }
}

#[test]
fn backward_of_linear_score_objective() {
    // d/dtheta sum_i score_i for a single layer network is the column sums
    let cfg = CriticConfig::new(3, vec![4]).unwrap();
    let params = init_critic(&cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = random_matrix(&mut rng, 5, 3);
    let pass = forward_input(&params, input).unwrap();
    let grads = backward_batch(&params, &pass, &[0.0; 5]).unwrap();
    assert!(grads.flatten().iter().all(|&g| g == 0.0));
    let grads = backward_batch(&params, &pass, &[1.0; 5]).unwrap();
    assert_eq!(grads.layers[1].bias[0], 5.0);
}

#[test]
fn backward_rejects_stale_pass() {
    let small = init_critic(&CriticConfig::new(4, vec![8, 8]).unwrap(), 0).unwrap();
    let other = init_critic(&CriticConfig::new(4, vec![8, 6]).unwrap(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pass = forward_input(&small, random_matrix(&mut rng, 3, 4)).unwrap();
    assert!(matches!(
        backward_batch(&other, &pass, &[1.0; 3]),
        Err(CriticError::StaleActivations(_))
    ));
    assert!(backward_batch(&small, &pass, &[1.0; 2]).is_err());
    assert!(matches!(
        forward_input(&small, random_matrix(&mut rng, 3, 5)),
        Err(CriticError::DimensionMismatch(_))
    ));
}

#[test]
fn he_init_variance() {
    let cfg = CriticConfig::for_task_dim(10);
    let shapes = cfg.layer_shapes();
    let mut var_sums = vec![0.0; shapes.len()];
    for seed in 0..100 {
        let params = init_critic(&cfg, seed).unwrap();
        for (l, layer) in params.layers.iter().enumerate() {
            let w = &layer.weights;
            let n = w.len() as f64;
            let mean = w.sum() / n;
            var_sums[l] += w.mapv(|v| (v - mean).powi(2)).sum() / (n - 1.0);
            assert!(layer.bias.iter().all(|&b| b == 0.0));
        }
    }
    for (l, &(fan_in, _)) in shapes.iter().enumerate() {
        let target = 2.0 / fan_in as f64;
        let avg = var_sums[l] / 100.0;
        assert!(
            (avg / target - 1.0).abs() < 0.2,
            "layer {l}: {avg} vs {target}"
        );
    }
}

#[test]
fn init_is_seeded() {
    let cfg = CriticConfig::new(4, vec![8, 8]).unwrap();
    assert_eq!(init_critic(&cfg, 1).unwrap(), init_critic(&cfg, 1).unwrap());
    assert_ne!(init_critic(&cfg, 1).unwrap(), init_critic(&cfg, 2).unwrap());
}

#[test]
fn adam_constant_gradient_step_tends_to_lr() {
    let cfg = CriticConfig::new(2, vec![3]).unwrap();
    let mut params = init_critic(&cfg, 0).unwrap();
    let mut grads = params.zeros_like();
    let n = grads.num_params();
    let pattern: Vec<f64> = (0..n)
        .map(|i| if i % 2 == 0 { 0.3 } else { -2.0 })
        .collect();
    grads.assign_flat(&pattern).unwrap();
    let lr = 1e-3;
    let mut state = OptimizerState::new(
        &params,
        AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        },
    );
    let mut before = params.flatten();
    for _ in 0..2000 {
        optimizer_step(&mut params, &grads, &mut state).unwrap();
        let after = params.flatten();
        for i in 0..n {
            let step = after[i] - before[i];
            // descent: the step opposes the gradient sign
            assert!(step * pattern[i] < 0.0);
            assert!(step.abs() <= lr * 1.0001);
        }
        before = after;
    }
    let mut last = params.clone();
    optimizer_step(&mut last, &grads, &mut state).unwrap();
    for (a, b) in last.flatten().iter().zip(params.flatten()) {
        assert!(((a - b).abs() - lr).abs() < 1e-6 * lr);
    }
}

#[test]
fn optimizer_names_non_finite_gradient() {
    let cfg = CriticConfig::new(2, vec![3]).unwrap();
    let mut params = init_critic(&cfg, 0).unwrap();
    let before = params.clone();
    let mut grads = params.zeros_like();
    grads.layers[1].weights[[2, 0]] = f64::NAN;
    let mut state = OptimizerState::new(&params, AdamConfig::default());
    let err = optimizer_step(&mut params, &grads, &mut state).unwrap_err();
    assert!(err.to_string().contains("non-finite gradient"), "{err}");
    assert!(err.to_string().contains("layers.1.weights[2]"), "{err}");
    assert_eq!(params, before);
    assert_eq!(state.step, 0);
}

#[test]
fn config_validation() {
    assert!(CriticConfig::new(0, vec![4]).is_err());
    assert!(CriticConfig::new(4, vec![]).is_err());
    assert!(CriticConfig::new(4, vec![4, 0]).is_err());
    assert_eq!(
        CriticConfig::for_task_dim(10).layer_shapes(),
        vec![(20, 100), (100, 100), (100, 1)]
    );
}

#[test]
fn snapshot_rejects_garbage() {
    assert!(CriticParameters::from_snapshot("").is_err());
    assert!(
        CriticParameters::from_snapshot("critic-snapshot v1\nlayers.0.weights 2 2\n1 2 3\n")
            .is_err()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn snapshot_round_trip(seed in 0u64..10_000, input in 1usize..6, w1 in 1usize..6, w2 in 1usize..6) {
        let cfg = CriticConfig::new(input, vec![w1, w2]).unwrap();
        let params = init_critic(&cfg, seed).unwrap();
        let text = params.to_snapshot();
        let back = CriticParameters::from_snapshot(&text).unwrap();
        prop_assert_eq!(&back, &params);
        prop_assert_eq!(back.to_snapshot(), text);
    }

    #[test]
    fn flat_round_trip(seed in 0u64..10_000) {
        let cfg = CriticConfig::new(3, vec![4, 2]).unwrap();
        let params = init_critic(&cfg, seed).unwrap();
        let mut copy = params.zeros_like();
        copy.assign_flat(&params.flatten()).unwrap();
        prop_assert_eq!(copy, params.clone());
        prop_assert!(copy_with_wrong_len(&params));
    }
}

fn copy_with_wrong_len(params: &CriticParameters) -> bool {
    let mut copy = params.zeros_like();
    copy.assign_flat(&vec![0.0; params.num_params() + 1])
        .is_err()
}
