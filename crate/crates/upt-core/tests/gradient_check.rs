//! Finite-difference verification of the analytic log-probability gradients
//! for both reference policies: 100 random (parameters, sequence) pairs
//! each, central differences with h = 1e-6, max relative error below 1e-5.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use upt_core::policy::{BanditPolicy, Policy, PolicyParams, SampleKey, SeqPolicy};
use upt_core::tasks::{generate_tasks, Task, TaskSet};

const H: f64 = 1e-6;
const MAX_REL_ERR: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central-difference gradient of the summed sequence log-probability.
fn fd_logprob_gradient(
    policy: &dyn Policy,
    params: &PolicyParams,
    task: &Task,
    tokens: &[u32],
) -> Vec<f64> {
    let dim = params.dim();
    let mut grad = vec![0.0; dim];
    let base = params.values().to_vec();
    for j in 0..dim {
        let mut plus = base.clone();
        plus[j] += H;
        let mut minus = base.clone();
        minus[j] -= H;
        let lp_plus: f64 = policy
            .logprob(&PolicyParams::new(plus).unwrap(), task, tokens)
            .unwrap()
            .iter()
            .sum();
        let lp_minus: f64 = policy
            .logprob(&PolicyParams::new(minus).unwrap(), task, tokens)
            .unwrap()
            .iter()
            .sum();
        grad[j] = (lp_plus - lp_minus) / (2.0 * H);
    }
    grad
}

fn random_params(dim: usize, rng: &mut ChaCha8Rng) -> PolicyParams {
    PolicyParams::new((0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

fn check_policy(policy: &dyn Policy, tasks: &TaskSet, pairs: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..pairs {
        let task = &tasks.tasks()[i % tasks.len()];
        let params = random_params(policy.dim(), &mut rng);
        let response = policy
            .sample_one(&params, task, 1.0, SampleKey::new(seed, i as u64), 0)
            .unwrap();
        let (_, grads) = policy
            .logprob_and_grad(&params, task, &response.tokens)
            .unwrap();
        let mut analytic = vec![0.0; policy.dim()];
        for g in grads {
            for (idx, v) in g {
                analytic[idx] += v;
            }
        }
        let numeric = fd_logprob_gradient(policy, &params, task, &response.tokens);
        for (j, (a, f)) in analytic.iter().zip(&numeric).enumerate() {
            let e = rel_err(*a, *f);
            worst = worst.max(e);
            assert!(
                e < MAX_REL_ERR,
                "pair {i} coord {j}: analytic {a} vs numeric {f} (rel err {e})"
            );
        }
    }
    assert!(worst < MAX_REL_ERR);
}

#[test]
fn bandit_logprob_gradients_match_finite_differences() {
    let tasks = generate_tasks("modular", 4, 101).unwrap();
    let policy = BanditPolicy::new(&tasks).unwrap();
    check_policy(&policy, &tasks, 100, 2024);
}

#[test]
fn seq_logprob_gradients_match_finite_differences() {
    let tasks = generate_tasks("mixed", 3, 102).unwrap();
    let policy = SeqPolicy::with_options(&tasks, 3).unwrap();
    check_policy(&policy, &tasks, 100, 2025);
}
