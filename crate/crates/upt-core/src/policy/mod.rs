//! The policy abstraction and two reference toy policies with exact analytic
//! log-probability gradients.
//!
//! Both policies are log-linear, so every gradient the optimizer consumes can
//! be checked against finite differences exactly — the training math, not
//! function approximation, is what the tests exercise. Parameter vectors are
//! immutable snapshots: samplers and scorers share them freely across
//! workers, and updates produce a fresh snapshot.

mod bandit;
mod checkpoint;
mod rng;
mod seq;

pub use bandit::BanditPolicy;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use rng::{fnv1a64, labeled_rng, stream_rng, SampleKey};
pub use seq::SeqPolicy;

use crate::error::{Error, Result};
use crate::tasks::{Task, TaskSet};
use serde::{Deserialize, Serialize};

/// A flat vector of 64-bit policy parameters. All entries are finite; the
/// dimension is fixed for the policy's lifetime.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    values: Vec<f64>,
}

impl PolicyParams {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "policy parameters",
            });
        }
        Ok(PolicyParams { values })
    }

    pub fn zeros(dim: usize) -> Self {
        PolicyParams {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bit pattern of every entry, for bitwise trajectory comparisons.
    pub fn to_bits(&self) -> Vec<u64> {
        self.values.iter().map(|v| v.to_bits()).collect()
    }
}

/// One sampled token sequence with the per-token log-probabilities it was
/// scored with at sampling time (these define the old policy for its group).
#[derive(Debug, Clone)]
pub struct Response {
    pub tokens: Vec<u32>,
    pub old_logprobs: Vec<f64>,
    pub text: String,
}

impl Response {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Sparse gradient of one token's log-probability with respect to the
/// parameter vector: (index, value) pairs.
pub type SparseGrad = Vec<(usize, f64)>;

/// Which reference policy a checkpoint or config refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Bandit,
    Seq,
}

impl PolicyKind {
    pub fn tag(&self) -> u8 {
        match self {
            PolicyKind::Bandit => 0,
            PolicyKind::Seq => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(PolicyKind::Bandit),
            1 => Ok(PolicyKind::Seq),
            other => Err(Error::Format(format!("unknown policy kind tag {other}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Bandit => "bandit",
            PolicyKind::Seq => "seq",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bandit" => Ok(PolicyKind::Bandit),
            "seq" => Ok(PolicyKind::Seq),
            other => Err(Error::invalid(format!("unknown policy kind {other:?}"))),
        }
    }
}

/// How initialization spreads the non-correct probability mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WrongMass {
    /// Equal mass on every wrong answer.
    Uniform,
    /// The given mass on one designated wrong answer (the slot after the
    /// correct one, cyclically); the rest spread equally.
    Designated { mass: f64 },
}

/// Behavioral contract shared by the toy policies: sampling, exact scoring
/// with gradients, greedy decoding, and accuracy-targeted initialization.
///
/// The log-probability of a freshly sampled sequence recomputed via
/// `logprob` equals the sampling-time value to within 1e-12.
pub trait Policy: Send + Sync {
    fn kind(&self) -> PolicyKind;

    /// Length of the parameter vector this policy expects.
    fn dim(&self) -> usize;

    /// Draw `g` independent sequences autoregressively at the given
    /// temperature. Recorded log-probabilities are at temperature-1 scale
    /// under the sampling parameters.
    fn sample_group(
        &self,
        params: &PolicyParams,
        task: &Task,
        g: usize,
        temperature: f64,
        key: SampleKey,
    ) -> Result<Vec<Response>> {
        validate_sampling(self, params, temperature)?;
        (0..g)
            .map(|i| self.sample_one(params, task, temperature, key, i as u64))
            .collect()
    }

    /// Draw the sequence for response index `index` of the group keyed by
    /// `key`. Deterministic in (key, index) regardless of caller threading.
    fn sample_one(
        &self,
        params: &PolicyParams,
        task: &Task,
        temperature: f64,
        key: SampleKey,
        index: u64,
    ) -> Result<Response>;

    /// Per-token log-probabilities and their exact gradients w.r.t. the
    /// parameter vector. Rejects tokens outside the vocabulary or illegal
    /// at their position.
    fn logprob_and_grad(
        &self,
        params: &PolicyParams,
        task: &Task,
        tokens: &[u32],
    ) -> Result<(Vec<f64>, Vec<SparseGrad>)>;

    /// Per-token log-probabilities only.
    fn logprob(&self, params: &PolicyParams, task: &Task, tokens: &[u32]) -> Result<Vec<f64>> {
        self.logprob_and_grad(params, task, tokens)
            .map(|(lp, _)| lp)
    }

    /// Argmax decoding (ties to the lowest token id).
    fn greedy_decode(&self, params: &PolicyParams, task: &Task) -> Result<Response>;

    /// Exact marginal probability of each answer slot being the final
    /// answer, at temperature 1.
    fn answer_marginals(&self, params: &PolicyParams, task: &Task) -> Result<Vec<f64>>;

    /// Parameters under which every task's correct answer is emitted with
    /// marginal probability exactly `p`, the rest per `wrong_mass`.
    fn init_with_accuracy(
        &self,
        tasks: &TaskSet,
        p: f64,
        wrong_mass: WrongMass,
    ) -> Result<PolicyParams>;
}

/// Construct the named reference policy laid out for a task set.
pub fn make_policy(kind: PolicyKind, tasks: &TaskSet) -> Result<Box<dyn Policy>> {
    match kind {
        PolicyKind::Bandit => Ok(Box::new(BanditPolicy::new(tasks)?)),
        PolicyKind::Seq => Ok(Box::new(SeqPolicy::new(tasks)?)),
    }
}

pub(crate) fn validate_sampling(
    policy: &(impl Policy + ?Sized),
    params: &PolicyParams,
    temperature: f64,
) -> Result<()> {
    if !params.is_finite() {
        return Err(Error::NonFinite {
            context: "policy parameters",
        });
    }
    if params.dim() != policy.dim() {
        return Err(Error::invalid(format!(
            "parameter dimension {} does not match policy dimension {}",
            params.dim(),
            policy.dim()
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

/// Per-(task, p) target distribution over answer slots; shared by both
/// reference policies.
pub(crate) fn target_distribution(
    n_answers: usize,
    truth_slot: usize,
    p: f64,
    wrong_mass: WrongMass,
) -> Result<Vec<f64>> {
    if n_answers < 2 {
        return Err(Error::invalid(
            "accuracy-targeted init needs at least 2 answers per task",
        ));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("p must lie in (0,1), got {p}")));
    }
    let mut q = vec![0.0; n_answers];
    q[truth_slot] = p;
    match wrong_mass {
        WrongMass::Uniform => {
            let each = (1.0 - p) / (n_answers - 1) as f64;
            for (j, slot) in q.iter_mut().enumerate() {
                if j != truth_slot {
                    *slot = each;
                }
            }
        }
        WrongMass::Designated { mass } => {
            if !(mass > 0.0 && mass < 1.0) {
                return Err(Error::invalid(format!(
                    "designated wrong mass must lie in (0,1), got {mass}"
                )));
            }
            let rest = 1.0 - p - mass;
            let others = n_answers - 2;
            if others == 0 {
                if rest.abs() > 1e-12 {
                    return Err(Error::invalid(
                        "p + designated mass must equal 1 when there are only 2 answers",
                    ));
                }
            } else if rest <= 0.0 {
                return Err(Error::invalid(format!(
                    "p {p} + designated mass {mass} leave no probability for the remaining answers"
                )));
            }
            let designated = (truth_slot + 1) % n_answers;
            q[designated] = mass;
            if others > 0 {
                let each = rest / others as f64;
                for (j, slot) in q.iter_mut().enumerate() {
                    if j != truth_slot && j != designated {
                        *slot = each;
                    }
                }
            }
        }
    }
    Ok(q)
}

/// log softmax over `logits`, numerically stable.
pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|l| l.exp()).collect()
}

pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Inverse-CDF categorical draw over `probs`, in index order.
pub(crate) fn categorical(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

/// Argmax with ties resolved to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
