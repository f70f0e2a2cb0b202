//! The group-relative policy optimization update: group-normalized
//! advantages, the clipped token-level surrogate with a KL penalty to a
//! frozen reference policy, and a decoupled-weight-decay adaptive-moment
//! optimizer step.
//!
//! The objective maximized per group of G responses is
//!
//! ```text
//! (1/G) sum_i (1/|o_i|) sum_t { min[ g_it * A_i, clip(g_it, 1-eps, 1+eps) * A_i ]
//!                               - beta * kl_t }
//! ```
//!
//! with `g_it = exp(logprob_new - logprob_old)` and the nonnegative KL
//! estimator `kl_t = exp(ref - new) - (ref - new) - 1`. Advantages are
//! treated as constants: no gradient flows through the normalization.

use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyParams, Response};
use crate::tasks::Task;
use serde::{Deserialize, Serialize};

/// Which denominator the advantage normalization divides by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdMode {
    /// Divide the variance by G.
    Population,
    /// Divide the variance by G - 1.
    Sample,
}

impl std::str::FromStr for StdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "population" => Ok(StdMode::Population),
            "sample" => Ok(StdMode::Sample),
            other => Err(Error::invalid(format!("unknown std mode {other:?}"))),
        }
    }
}

impl StdMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            StdMode::Population => "population",
            StdMode::Sample => "sample",
        }
    }
}

/// A group's rewards with their mean, standard deviation, and the
/// standardized advantages.
#[derive(Debug, Clone)]
pub struct GroupStats {
    pub rewards: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub advantages: Vec<f64>,
}

impl GroupStats {
    /// True when every reward was identical, which zeroes all advantages.
    pub fn zero_variance(&self) -> bool {
        self.std == 0.0
    }
}

/// Standardize rewards within their group: (r - mean) / std with the
/// population standard deviation. A zero-deviation group gets all-zero
/// advantages instead of a division by zero.
pub fn normalize_advantages(rewards: &[f64]) -> Result<GroupStats> {
    normalize_advantages_with(rewards, StdMode::Population)
}

pub fn normalize_advantages_with(rewards: &[f64], mode: StdMode) -> Result<GroupStats> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::invalid(format!(
            "advantage normalization needs a group of at least 2, got {g}"
        )));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite { context: "rewards" });
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    // All-equal rewards have standard deviation exactly zero; detecting
    // them by value avoids accumulation noise being amplified to unit-scale
    // advantages.
    let all_equal = rewards.windows(2).all(|w| w[0] == w[1]);
    let std = if all_equal {
        0.0
    } else {
        let denom = match mode {
            StdMode::Population => g as f64,
            StdMode::Sample => (g - 1) as f64,
        };
        (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / denom).sqrt()
    };
    let advantages = if std == 0.0 {
        vec![0.0; g]
    } else {
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(GroupStats {
        rewards: rewards.to_vec(),
        mean,
        std,
        advantages,
    })
}

/// Nonnegative per-token KL estimator against the reference policy:
/// exp(ref - new) - (ref - new) - 1. Zero exactly when the log-probabilities
/// agree.
pub fn kl_token(new_logprob: f64, ref_logprob: f64) -> Result<f64> {
    if !new_logprob.is_finite() || !ref_logprob.is_finite() {
        return Err(Error::NonFinite {
            context: "kl_token log-probabilities",
        });
    }
    if new_logprob > 0.0 || ref_logprob > 0.0 {
        return Err(Error::invalid("log-probabilities must be <= 0"));
    }
    let delta = ref_logprob - new_logprob;
    Ok(delta.exp() - delta - 1.0)
}

/// Per-token diagnostics from a surrogate evaluation.
#[derive(Debug, Clone, Copy)]
pub struct TokenStats {
    /// Probability ratio between the current and the sampling-time policy.
    pub ratio: f64,
    /// Whether the clipped branch changed the min-branch value.
    pub clipped: bool,
    /// Value of the per-token KL estimator.
    pub kl: f64,
}

/// Objective, gradient, and telemetry for one group.
#[derive(Debug, Clone)]
pub struct SurrogateOutcome {
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub token_stats: Vec<Vec<TokenStats>>,
    pub clip_fraction: f64,
    pub mean_kl: f64,
}

/// Telemetry emitted after an optimizer step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateReport {
    pub objective: f64,
    pub grad_norm: f64,
    pub clip_fraction: f64,
    pub mean_kl: f64,
    pub step_index: u64,
}

/// Evaluate the clipped group objective and its exact gradient at `params`.
///
/// `advantages` must come from this group's rewards. Responses are reduced
/// in index order. A token on the clipped branch contributes no policy
/// gradient; the KL penalty always contributes.
#[allow(clippy::too_many_arguments)]
pub fn surrogate(
    policy: &dyn Policy,
    task: &Task,
    group: &[Response],
    stats: &GroupStats,
    params: &PolicyParams,
    ref_params: &PolicyParams,
    clip_eps: f64,
    kl_beta: f64,
) -> Result<SurrogateOutcome> {
    if group.len() != stats.advantages.len() {
        return Err(Error::invalid(format!(
            "group of {} responses with {} advantages",
            group.len(),
            stats.advantages.len()
        )));
    }
    if group.is_empty() {
        return Err(Error::invalid("empty response group"));
    }
    if !clip_eps.is_finite() || clip_eps <= 0.0 || !kl_beta.is_finite() || kl_beta < 0.0 {
        return Err(Error::invalid("clip range must be > 0 and KL weight >= 0"));
    }
    let g = group.len() as f64;
    let mut objective = 0.0;
    let mut gradient = vec![0.0; params.dim()];
    let mut token_stats = Vec::with_capacity(group.len());
    let mut clipped_tokens = 0usize;
    let mut total_tokens = 0usize;
    let mut kl_sum = 0.0;

    for (response, advantage) in group.iter().zip(&stats.advantages) {
        let (new_lp, grads) = policy.logprob_and_grad(params, task, &response.tokens)?;
        let ref_lp = policy.logprob(ref_params, task, &response.tokens)?;
        let scale = 1.0 / (g * response.len() as f64);
        let mut per_token = Vec::with_capacity(response.len());
        for t in 0..response.len() {
            let ratio = (new_lp[t] - response.old_logprobs[t]).exp();
            let unclipped = ratio * advantage;
            let clipped_ratio = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
            let clipped_value = clipped_ratio * advantage;
            let clipped = clipped_value < unclipped;
            let kl = kl_token(new_lp[t], ref_lp[t])?;
            objective += scale * (unclipped.min(clipped_value) - kl_beta * kl);
            // Unclipped branch: d/dθ ratio·A = ratio·A·∇logπ. Clipped branch
            // is constant in θ. KL: d/dθ = (1 - exp(ref - new))·∇logπ.
            let kl_coeff = kl_beta * (1.0 - (ref_lp[t] - new_lp[t]).exp());
            let policy_coeff = if clipped { 0.0 } else { ratio * advantage };
            let coeff = scale * (policy_coeff - kl_coeff);
            if coeff != 0.0 {
                for (idx, gval) in &grads[t] {
                    gradient[*idx] += coeff * gval;
                }
            }
            per_token.push(TokenStats { ratio, clipped, kl });
            if clipped {
                clipped_tokens += 1;
            }
            kl_sum += kl;
            total_tokens += 1;
        }
        token_stats.push(per_token);
    }

    Ok(SurrogateOutcome {
        objective,
        gradient,
        token_stats,
        clip_fraction: clipped_tokens as f64 / total_tokens as f64,
        mean_kl: kl_sum / total_tokens as f64,
    })
}

/// First/second moment accumulators for the adaptive optimizer.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One ascent step on the objective: global gradient-norm rescaling,
/// bias-corrected adaptive moments, and decoupled weight decay applied
/// separately from the moment update.
pub fn optimizer_step(
    params: &PolicyParams,
    gradient: &[f64],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    grad_clip_norm: f64,
) -> Result<PolicyParams> {
    if gradient.len() != params.dim() || state.m.len() != params.dim() {
        return Err(Error::invalid("gradient/state shape mismatch"));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "gradient",
        });
    }
    let norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    let rescale = if grad_clip_norm > 0.0 && norm > grad_clip_norm {
        grad_clip_norm / norm
    } else {
        1.0
    };
    state.step += 1;
    let bias1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bias2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    let mut out = Vec::with_capacity(params.dim());
    for (i, theta) in params.values().iter().enumerate() {
        let g = gradient[i] * rescale;
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        let new = theta + lr * m_hat / (v_hat.sqrt() + ADAM_EPS) - lr * weight_decay * theta;
        out.push(new);
    }
    PolicyParams::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::extract;
    use crate::policy::{BanditPolicy, Policy, SampleKey, WrongMass};
    use crate::tasks::generate_tasks;
    use crate::voting::RewardedGroup;

    #[test]
    fn advantage_two_class_example() {
        // Oracle: mean 0.5, population std 0.5.
        let s = normalize_advantages(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.advantages, vec![1.0, 1.0, -1.0, -1.0]);
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.std, 0.5);
    }

    #[test]
    fn advantage_single_winner_example() {
        // Oracle: mean 0.25, population std sqrt(3)/4; winner gets sqrt(3).
        let s = normalize_advantages(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let r3 = 3.0f64.sqrt();
        assert!((s.advantages[0] - r3).abs() < 1e-12);
        for a in &s.advantages[1..] {
            assert!((a + 1.0 / r3).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_variance_gives_zero_advantages() {
        let s = normalize_advantages(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(s.zero_variance());
        assert!(s.advantages.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn advantage_preconditions() {
        assert!(normalize_advantages(&[1.0]).is_err());
        assert!(normalize_advantages(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn sample_std_mode() {
        let s = normalize_advantages_with(&[1.0, 0.0], StdMode::Sample).unwrap();
        // Sample std of {1,0} is sqrt(0.5)/... variance 0.5, std ~0.7071.
        assert!((s.std - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_token(-1.0, -1.0).unwrap(), 0.0);
        // exp(ln .25 - ln .5) - (ln .25 - ln .5) - 1 = 0.5 + ln 2 - 1.
        let v = kl_token(0.5f64.ln(), 0.25f64.ln()).unwrap();
        assert!((v - (0.5 + 2.0f64.ln() - 1.0)).abs() < 1e-12);
        assert!((v - 0.19314718055994531).abs() < 1e-12);
        // Nonnegative over random pairs.
        for i in 0..200 {
            let a = -((i as f64 * 0.37).sin().abs() + 1e-3);
            let b = -((i as f64 * 0.83).cos().abs() + 1e-3);
            assert!(kl_token(a, b).unwrap() >= 0.0);
        }
        assert!(kl_token(f64::NAN, -1.0).is_err());
        assert!(kl_token(0.5, -1.0).is_err());
    }

    fn bandit_fixture() -> (crate::tasks::TaskSet, BanditPolicy, PolicyParams) {
        let ts = generate_tasks("modular", 2, 31).unwrap();
        let policy = BanditPolicy::new(&ts).unwrap();
        let params = policy
            .init_with_accuracy(&ts, 0.6, WrongMass::Uniform)
            .unwrap();
        (ts, policy, params)
    }

    #[test]
    fn surrogate_at_old_params_matches_plain_policy_gradient() {
        let (ts, policy, params) = bandit_fixture();
        let task = &ts.tasks()[0];
        let group = policy
            .sample_group(&params, task, 8, 1.0, SampleKey::new(11, 1))
            .unwrap();
        let answers: Vec<_> = group.iter().map(|r| extract(&r.text)).collect();
        let rewarded = RewardedGroup::from_answers(answers);
        let stats = normalize_advantages(&rewarded.rewards).unwrap();
        let ref_params = params.clone();
        let out = surrogate(
            &policy,
            task,
            &group,
            &stats,
            &params,
            &ref_params,
            0.2,
            0.01,
        )
        .unwrap();

        // At theta = theta_old every ratio is 1 and nothing clips.
        for ts_resp in &out.token_stats {
            for t in ts_resp {
                assert!((t.ratio - 1.0).abs() < 1e-12);
                assert!(!t.clipped);
                assert!(t.kl.abs() < 1e-15);
            }
        }
        assert_eq!(out.clip_fraction, 0.0);

        // Gradient equals (1/G) sum_i (A_i/|o_i|) sum_t grad logpi (the KL
        // gradient vanishes when params equal the reference).
        let mut expect = vec![0.0; params.dim()];
        for (r, a) in group.iter().zip(&stats.advantages) {
            let (_, grads) = policy.logprob_and_grad(&params, task, &r.tokens).unwrap();
            let scale = a / (group.len() as f64 * r.len() as f64);
            for g in grads {
                for (idx, v) in g {
                    expect[idx] += scale * v;
                }
            }
        }
        for (a, b) in out.gradient.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_signal_is_exactly_zero() {
        let (ts, policy, params) = bandit_fixture();
        let task = &ts.tasks()[1];
        let group = policy
            .sample_group(&params, task, 4, 1.0, SampleKey::new(12, 1))
            .unwrap();
        let stats = normalize_advantages(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        let out = surrogate(&policy, task, &group, &stats, &params, &params, 0.2, 0.0).unwrap();
        assert_eq!(out.objective, 0.0);
        assert!(out.gradient.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn clipped_flag_matches_direct_check() {
        let (ts, policy, params) = bandit_fixture();
        let task = &ts.tasks()[0];
        let group = policy
            .sample_group(&params, task, 8, 1.0, SampleKey::new(13, 1))
            .unwrap();
        // Fixed mixed rewards so advantages are nonzero regardless of what
        // the sampled group voted.
        let stats = normalize_advantages(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        // Move away from the sampling parameters to make ratios wander.
        let moved: Vec<f64> = params
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.6 * ((i * 7) as f64).sin())
            .collect();
        let moved = PolicyParams::new(moved).unwrap();
        let eps = 0.2;
        let out = surrogate(&policy, task, &group, &stats, &moved, &params, eps, 0.01).unwrap();
        let mut any_clipped = false;
        for (resp, stats_resp) in out.token_stats.iter().enumerate() {
            for (t, tok) in stats_resp.iter().enumerate() {
                let a = stats.advantages[resp];
                let unclipped = tok.ratio * a;
                let clipped_val = tok.ratio.clamp(1.0 - eps, 1.0 + eps) * a;
                assert_eq!(tok.clipped, clipped_val < unclipped, "resp {resp} tok {t}");
                any_clipped |= tok.clipped;
            }
        }
        // The perturbation is large enough that something must clip.
        assert!(any_clipped);
    }

    #[test]
    fn reward_translation_and_scale_leave_advantages_unchanged() {
        let base = [1.0, 0.0, 1.0, 1.0, 0.0];
        let s0 = normalize_advantages(&base).unwrap();
        let shifted: Vec<f64> = base.iter().map(|r| r + 3.5).collect();
        let scaled: Vec<f64> = base.iter().map(|r| r * 7.25).collect();
        for other in [shifted, scaled] {
            let s1 = normalize_advantages(&other).unwrap();
            for (a, b) in s0.advantages.iter().zip(&s1.advantages) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kl_regularization_pulls_back_to_reference() {
        // With all-zero advantages and beta > 0, repeated steps shrink the
        // mean KL toward zero: the policy returns to the reference.
        let (ts, policy, ref_params) = bandit_fixture();
        let task = &ts.tasks()[0];
        let mut params = PolicyParams::new(
            ref_params
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| v + 0.8 * ((i * 3) as f64).cos())
                .collect(),
        )
        .unwrap();
        let mut state = AdamState::new(params.dim());
        let group = policy
            .sample_group(&params, task, 6, 1.0, SampleKey::new(14, 1))
            .unwrap();
        let stats = normalize_advantages(&[1.0; 6]).unwrap(); // all zero advantages
        let first = surrogate(
            &policy,
            task,
            &group,
            &stats,
            &params,
            &ref_params,
            0.2,
            0.05,
        )
        .unwrap()
        .mean_kl;
        let mut last = first;
        for _ in 0..300 {
            let out = surrogate(
                &policy,
                task,
                &group,
                &stats,
                &params,
                &ref_params,
                0.2,
                0.05,
            )
            .unwrap();
            params = optimizer_step(&params, &out.gradient, &mut state, 0.02, 0.0, 1.0).unwrap();
            last = out.mean_kl;
        }
        assert!(first > 1e-3);
        assert!(last < first / 20.0, "KL {first} -> {last}");
    }

    #[test]
    fn optimizer_zero_gradient_is_identity() {
        let params = PolicyParams::new(vec![1.0, -2.0, 3.0]).unwrap();
        let mut state = AdamState::new(3);
        let out = optimizer_step(&params, &[0.0, 0.0, 0.0], &mut state, 0.1, 0.0, 1.0).unwrap();
        assert_eq!(out.values(), params.values());
    }

    #[test]
    fn optimizer_clips_gradient_norm() {
        let params = PolicyParams::zeros(2);
        let mut state = AdamState::new(2);
        // Norm 10 gradient with clip 1.0: the applied gradient has norm 1,
        // so the first bias-corrected step is lr * g/|g| elementwise.
        let g = [6.0, 8.0];
        let out = optimizer_step(&params, &g, &mut state, 0.1, 0.0, 1.0).unwrap();
        let expect = [
            0.1 * (0.6 / (0.6 + ADAM_EPS)),
            0.1 * (0.8 / (0.8 + ADAM_EPS)),
        ];
        for (o, e) in out.values().iter().zip(expect) {
            assert!((o - e).abs() < 1e-9);
        }
    }

    #[test]
    fn ascent_moves_toward_maximum() {
        // f(theta) = -theta^2 from theta = 1 with ascent gradient -2 theta.
        let mut params = PolicyParams::new(vec![1.0]).unwrap();
        let mut state = AdamState::new(1);
        let g = -2.0 * params.values()[0];
        params = optimizer_step(&params, &[g], &mut state, 0.1, 0.0, 1.0).unwrap();
        assert!(params.values()[0] < 1.0 && params.values()[0] > 0.0);
        for _ in 0..200 {
            let g = -2.0 * params.values()[0];
            params = optimizer_step(&params, &[g], &mut state, 0.1, 0.0, 1.0).unwrap();
        }
        assert!(params.values()[0].abs() < 0.05);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let params = PolicyParams::new(vec![2.0]).unwrap();
        let mut state = AdamState::new(1);
        let out = optimizer_step(&params, &[0.0], &mut state, 0.5, 0.01, 1.0).unwrap();
        // Zero gradient leaves the moment update at zero; only decay acts.
        assert!((out.values()[0] - (2.0 - 0.5 * 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let params = PolicyParams::zeros(2);
        let mut state = AdamState::new(2);
        assert!(optimizer_step(&params, &[f64::NAN, 0.0], &mut state, 0.1, 0.0, 1.0).is_err());
        // The failed step must not advance the step counter.
        assert_eq!(state.step_count(), 0);
    }
}
