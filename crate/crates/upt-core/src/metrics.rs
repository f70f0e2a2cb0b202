//! Label-free training diagnostics, evaluation accuracy, and the
//! closed-form majority-vote analysis.
//!
//! Semantic entropy clusters a group's responses by answer equivalence and
//! reports the Shannon entropy of the cluster distribution in nats. The
//! binomial analysis computes the probability that a majority of n
//! independent draws at per-draw accuracy p is correct, exactly (rational
//! arithmetic) for n <= 64 and in stable log space beyond.

use crate::answer::{equivalent, ExtractedAnswer};
use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyParams, SampleKey};
use crate::tasks::Task;
use crate::voting::RewardedGroup;
use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

/// Cluster sizes, their empirical probabilities, and the entropy H in nats.
#[derive(Debug, Clone)]
pub struct EntropyReport {
    pub cluster_sizes: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub entropy: f64,
    /// Responses that produced an extractable answer; the probability
    /// denominator.
    pub voters: usize,
    /// True when no response was extractable, leaving nothing to cluster.
    pub degenerate: bool,
}

/// Cluster answers by equivalence and compute -sum p ln p over the cluster
/// distribution. Unextractable answers are excluded; a group with no
/// extractable answer yields an empty report flagged degenerate.
pub fn semantic_entropy(answers: &[ExtractedAnswer]) -> Result<EntropyReport> {
    if answers.is_empty() {
        return Err(Error::invalid("semantic entropy needs at least one answer"));
    }
    let mut clusters: Vec<(&ExtractedAnswer, usize)> = Vec::new();
    let mut voters = 0usize;
    for a in answers {
        if a.is_none() {
            continue;
        }
        voters += 1;
        match clusters.iter_mut().find(|(rep, _)| equivalent(rep, a)) {
            Some((_, c)) => *c += 1,
            None => clusters.push((a, 1)),
        }
    }
    if voters == 0 {
        return Ok(EntropyReport {
            cluster_sizes: Vec::new(),
            probabilities: Vec::new(),
            entropy: 0.0,
            voters: 0,
            degenerate: true,
        });
    }
    let cluster_sizes: Vec<usize> = clusters.iter().map(|(_, c)| *c).collect();
    let probabilities: Vec<f64> = cluster_sizes
        .iter()
        .map(|c| *c as f64 / voters as f64)
        .collect();
    let entropy = -probabilities
        .iter()
        .map(|p| if *p > 0.0 { p * p.ln() } else { 0.0 })
        .sum::<f64>();
    Ok(EntropyReport {
        cluster_sizes,
        probabilities,
        entropy: entropy.max(0.0),
        voters,
        degenerate: false,
    })
}

/// n independent draws, each correct with probability p.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BinomialVoteModel {
    pub n: u32,
    pub p: f64,
}

impl BinomialVoteModel {
    pub fn new(n: u32, p: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::invalid("binomial model needs n >= 1"));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("p must lie in (0,1), got {p}")));
        }
        Ok(BinomialVoteModel { n, p })
    }
}

/// Which lower summation index defines the majority event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteVariant {
    /// Strictly more than n/2 draws correct: i from floor(n/2)+1.
    Strict,
    /// At least ceil(n/2) draws correct, which includes exact-half ties for
    /// even n.
    Inclusive,
}

impl VoteVariant {
    pub fn lower_index(&self, n: u32) -> u32 {
        match self {
            VoteVariant::Strict => n / 2 + 1,
            VoteVariant::Inclusive => n.div_ceil(2),
        }
    }
}

const EXACT_N_LIMIT: u32 = 64;

/// P(majority event) for the model, exact for n <= 64.
pub fn majority_success_prob(model: BinomialVoteModel, variant: VoteVariant) -> Result<f64> {
    if model.n <= EXACT_N_LIMIT {
        Ok(ratio_to_f64(&majority_success_prob_exact(model, variant)?))
    } else {
        majority_success_prob_logspace(model, variant)
    }
}

/// Exact rational tail sum: sum_{i=lo}^{n} C(n,i) p^i (1-p)^{n-i}, with p
/// taken as the exact dyadic rational of the given f64.
///
/// Computed in integer arithmetic over the common denominator d^n (p =
/// a/d exactly), with one reduction at the end.
pub fn majority_success_prob_exact(
    model: BinomialVoteModel,
    variant: VoteVariant,
) -> Result<BigRational> {
    let p = BigRational::from_float(model.p)
        .ok_or_else(|| Error::invalid("p is not a finite float"))?;
    let a = p.numer().clone();
    let d = p.denom().clone();
    let b = &d - &a;
    let n = model.n;
    let lo = variant.lower_index(n);
    let mut a_pow = num::pow::pow(a.clone(), lo as usize);
    let mut b_pow = num::pow::pow(b.clone(), (n - lo) as usize);
    let mut total = BigInt::zero();
    for i in lo..=n {
        total += binomial_coefficient(n, i) * &a_pow * &b_pow;
        if i < n {
            a_pow *= &a;
            b_pow /= &b;
        }
    }
    Ok(BigRational::new(total, num::pow::pow(d, n as usize)))
}

fn binomial_coefficient(n: u32, k: u32) -> BigInt {
    let k = k.min(n - k);
    let mut c = BigInt::one();
    for j in 0..k {
        c = c * BigInt::from(n - j) / BigInt::from(j + 1);
    }
    c
}

/// Stable log-space tail sum for large n.
fn majority_success_prob_logspace(model: BinomialVoteModel, variant: VoteVariant) -> Result<f64> {
    let n = model.n as usize;
    let mut ln_fact = vec![0.0f64; n + 1];
    for i in 1..=n {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let ln_p = model.p.ln();
    let ln_q = (1.0 - model.p).ln();
    let lo = variant.lower_index(model.n) as usize;
    let terms: Vec<f64> = (lo..=n)
        .map(|i| ln_fact[n] - ln_fact[i] - ln_fact[n - i] + i as f64 * ln_p + (n - i) as f64 * ln_q)
        .collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()).exp())
}

/// Per-outcome-count terms of the tail sum, for the analysis CLI: (i,
/// C(n,i) p^i (1-p)^(n-i)) for i from ceil(n/2) to n.
pub fn binomial_terms(model: BinomialVoteModel) -> Result<Vec<(u32, f64)>> {
    let p = BigRational::from_float(model.p)
        .ok_or_else(|| Error::invalid("p is not a finite float"))?;
    let a = p.numer().clone();
    let d = p.denom().clone();
    let b = &d - &a;
    let n = model.n;
    let lo = VoteVariant::Inclusive.lower_index(n);
    let d_pow = num::pow::pow(d, n as usize);
    let mut a_pow = num::pow::pow(a.clone(), lo as usize);
    let mut b_pow = num::pow::pow(b.clone(), (n - lo) as usize);
    let mut out = Vec::with_capacity((n - lo + 1) as usize);
    for i in lo..=n {
        let numer = binomial_coefficient(n, i) * &a_pow * &b_pow;
        out.push((i, ratio_to_f64(&BigRational::new(numer, d_pow.clone()))));
        if i < n {
            a_pow *= &a;
            b_pow /= &b;
        }
    }
    Ok(out)
}

/// f64 value of a possibly huge rational. Falls back to a shifted division
/// when the numerator or denominator alone overflows f64.
pub(crate) fn ratio_to_f64(r: &BigRational) -> f64 {
    if let Some(v) = r.to_f64() {
        if v.is_finite() {
            return v;
        }
    }
    let bits = r.numer().bits().max(r.denom().bits());
    let shift = bits.saturating_sub(96);
    let n = r.numer() >> shift;
    let d = r.denom() >> shift;
    match (n.to_f64(), d.to_f64()) {
        (Some(nf), Some(df)) if df != 0.0 => nf / df,
        _ => f64::NAN,
    }
}

/// Mean pseudo-reward over every response of every group: the winner share
/// weighted by group size.
pub fn mean_majority_reward(groups: &[RewardedGroup]) -> Result<f64> {
    let total: usize = groups.iter().map(|g| g.rewards.len()).sum();
    if total == 0 {
        return Err(Error::invalid(
            "mean majority reward needs at least one response",
        ));
    }
    let sum: f64 = groups.iter().flat_map(|g| g.rewards.iter()).sum();
    Ok(sum / total as f64)
}

/// How evaluation decodes the policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AccuracyMode {
    /// Argmax decoding, one response per task.
    Greedy,
    /// Mean over k temperature-1 samples per task.
    Sampled { k: usize, seed: u64 },
}

/// Evaluation step key; far above any training step so evaluation draws
/// never collide with rollout streams.
const EVAL_STEP: u64 = u64::MAX;

/// Per-task evaluation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskEvaluation {
    pub id: String,
    pub truth: String,
    pub decoded: String,
    pub correct_fraction: f64,
}

/// Fraction of tasks (greedy) or samples (sampled mode) whose extracted
/// answer is equivalent to the truth. Reads labels: evaluation only.
pub fn accuracy(
    policy: &dyn Policy,
    params: &PolicyParams,
    tasks: &[Task],
    mode: AccuracyMode,
) -> Result<f64> {
    let per_task = evaluate_tasks(policy, params, tasks, mode)?;
    if per_task.is_empty() {
        return Err(Error::invalid("accuracy needs a nonempty task list"));
    }
    Ok(per_task.iter().map(|t| t.correct_fraction).sum::<f64>() / per_task.len() as f64)
}

/// Per-task breakdown behind `accuracy`.
pub fn evaluate_tasks(
    policy: &dyn Policy,
    params: &PolicyParams,
    tasks: &[Task],
    mode: AccuracyMode,
) -> Result<Vec<TaskEvaluation>> {
    let mut out = Vec::with_capacity(tasks.len());
    for task in tasks {
        let truth = task.truth_for_eval();
        match mode {
            AccuracyMode::Greedy => {
                let response = policy.greedy_decode(params, task)?;
                let answer = crate::answer::extract(&response.text);
                let correct = equivalent(&answer, truth);
                out.push(TaskEvaluation {
                    id: task.id().to_string(),
                    truth: truth.canonical().to_string(),
                    decoded: answer.canonical().to_string(),
                    correct_fraction: if correct { 1.0 } else { 0.0 },
                });
            }
            AccuracyMode::Sampled { k, seed } => {
                if k == 0 {
                    return Err(Error::invalid("sampled accuracy needs k >= 1"));
                }
                let group =
                    policy.sample_group(params, task, k, 1.0, SampleKey::new(seed, EVAL_STEP))?;
                let mut hits = 0usize;
                let mut last = String::new();
                for r in &group {
                    let answer = crate::answer::extract(&r.text);
                    if equivalent(&answer, truth) {
                        hits += 1;
                    }
                    last = answer.canonical().to_string();
                }
                out.push(TaskEvaluation {
                    id: task.id().to_string(),
                    truth: truth.canonical().to_string(),
                    decoded: last,
                    correct_fraction: hits as f64 / k as f64,
                });
            }
        }
    }
    Ok(out)
}

/// Exact marginal probability mass the policy puts on each task's correct
/// answer, averaged over tasks. The sampling-free analog of
/// `accuracy(Sampled {k -> infinity})`; suites assert on this.
pub fn expected_accuracy(
    policy: &dyn Policy,
    params: &PolicyParams,
    tasks: &[Task],
) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::invalid(
            "expected accuracy needs a nonempty task list",
        ));
    }
    let mut total = 0.0;
    for task in tasks {
        if let Some(slot) = task.truth_slot() {
            total += policy.answer_marginals(params, task)?[slot];
        }
    }
    Ok(total / tasks.len() as f64)
}
