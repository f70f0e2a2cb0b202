//! Log-linear autoregressive policy over a small vocabulary.
//!
//! Sequences are up to `L_MAX` filler tokens, then an answer token, then the
//! terminal token, so token-level ratios, per-token KL, and the 1/|o|
//! normalization all get exercised. Next-token logits are sums of three
//! feature rows: the task's feature bucket, the previous token, and a
//! position bucket.

use super::{
    argmax, categorical, log_softmax, softmax, stream_rng, target_distribution, validate_sampling,
    Policy, PolicyKind, PolicyParams, Response, SampleKey, SparseGrad, WrongMass,
};
use crate::error::{Error, Result};
use crate::tasks::{Task, TaskSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Terminal token id.
pub const TERM: u32 = 0;
/// Most filler tokens a sequence may carry before it must answer.
pub const L_MAX: usize = 16;

const POS_BUCKETS: usize = 4;
const FILLER_WORDS: [&str; 8] = ["so", "then", "we", "see", "that", "hence", "thus", "step"];

pub struct SeqPolicy {
    n_buckets: usize,
    max_slots: usize,
    vocab: usize,
    dim: usize,
}

#[derive(Clone, Copy)]
struct Cursor {
    t: usize,
    prev: u32,
    answered: bool,
}

impl Cursor {
    fn start() -> Self {
        Cursor {
            t: 0,
            prev: TERM,
            answered: false,
        }
    }
}

impl SeqPolicy {
    pub fn new(tasks: &TaskSet) -> Result<Self> {
        Self::with_options(tasks, 6)
    }

    pub fn with_options(tasks: &TaskSet, n_filler: usize) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::invalid("sequence policy needs a nonempty task set"));
        }
        let n_filler = n_filler.clamp(1, FILLER_WORDS.len());
        let max_slots = tasks
            .tasks()
            .iter()
            .map(|t| t.answer_space().len())
            .max()
            .unwrap_or(2);
        let n_buckets = tasks.len();
        let vocab = 1 + max_slots + n_filler;
        if vocab > 64 {
            return Err(Error::invalid(format!(
                "vocabulary of {vocab} tokens exceeds the 64-token budget"
            )));
        }
        let rows = n_buckets + vocab + POS_BUCKETS;
        Ok(SeqPolicy {
            n_buckets,
            max_slots,
            vocab,
            dim: rows * vocab,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn answer_token(slot: usize) -> u32 {
        (slot + 1) as u32
    }

    fn slot_of(&self, token: u32) -> Option<usize> {
        if (1..=self.max_slots as u32).contains(&token) {
            Some((token - 1) as usize)
        } else {
            None
        }
    }

    fn is_filler(&self, token: u32) -> bool {
        (token as usize) > self.max_slots && (token as usize) < self.vocab
    }

    fn bucket(&self, task: &Task) -> usize {
        let f0 = task.features().first().copied().unwrap_or(0.0);
        (f0.round() as i64).rem_euclid(self.n_buckets as i64) as usize
    }

    fn pos_bucket(t: usize) -> usize {
        (t / 4).min(POS_BUCKETS - 1)
    }

    /// Rows whose parameters are active for this context.
    fn active_rows(&self, task: &Task, cursor: Cursor) -> [usize; 3] {
        [
            self.bucket(task),
            self.n_buckets + cursor.prev as usize,
            self.n_buckets + self.vocab + Self::pos_bucket(cursor.t),
        ]
    }

    fn allowed(&self, task: &Task, cursor: Cursor) -> Result<Vec<u32>> {
        if cursor.answered {
            return Ok(vec![TERM]);
        }
        let k = task.answer_space().len();
        if k > self.max_slots {
            return Err(Error::invalid(format!(
                "task {} has {k} answers but the policy supports {}",
                task.id(),
                self.max_slots
            )));
        }
        let mut out: Vec<u32> = (1..=k as u32).collect();
        if cursor.t < L_MAX {
            out.extend((self.max_slots as u32 + 1)..self.vocab as u32);
        }
        Ok(out)
    }

    fn logits(
        &self,
        params: &PolicyParams,
        task: &Task,
        cursor: Cursor,
        allowed: &[u32],
    ) -> Vec<f64> {
        let rows = self.active_rows(task, cursor);
        allowed
            .iter()
            .map(|v| {
                rows.iter()
                    .map(|r| params.values()[r * self.vocab + *v as usize])
                    .sum()
            })
            .collect()
    }

    fn render(&self, task: &Task, tokens: &[u32]) -> String {
        let mut words = Vec::new();
        for tok in tokens {
            if *tok == TERM {
                break;
            }
            if let Some(slot) = self.slot_of(*tok) {
                words.push(format!(
                    r"\boxed{{{}}}",
                    task.answer_space()[slot].canonical()
                ));
            } else {
                let f = (*tok as usize - self.max_slots - 1).min(FILLER_WORDS.len() - 1);
                words.push(FILLER_WORDS[f].to_string());
            }
        }
        words.join(" ")
    }

    fn advance(&self, cursor: &mut Cursor, token: u32) {
        if self.slot_of(token).is_some() {
            cursor.answered = true;
        }
        cursor.prev = token;
        cursor.t += 1;
    }

    fn decode_with(
        &self,
        params: &PolicyParams,
        task: &Task,
        temperature: f64,
        mut pick: impl FnMut(&[f64], &mut ChaCha8Rng) -> usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Response> {
        let mut cursor = Cursor::start();
        let mut tokens = Vec::new();
        let mut logps = Vec::new();
        loop {
            let allowed = self.allowed(task, cursor)?;
            let logits = self.logits(params, task, cursor, &allowed);
            let tempered: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
            let choice = pick(&tempered, rng);
            let token = allowed[choice];
            logps.push(log_softmax(&logits)[choice]);
            tokens.push(token);
            if token == TERM {
                break;
            }
            self.advance(&mut cursor, token);
        }
        let text = self.render(task, &tokens);
        Ok(Response {
            tokens,
            old_logprobs: logps,
            text,
        })
    }
}

impl Policy for SeqPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Seq
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_one(
        &self,
        params: &PolicyParams,
        task: &Task,
        temperature: f64,
        key: SampleKey,
        index: u64,
    ) -> Result<Response> {
        validate_sampling(self, params, temperature)?;
        let mut rng = stream_rng(key, task.id(), index);
        self.decode_with(
            params,
            task,
            temperature,
            |tempered, rng| categorical(&softmax(tempered), rng.gen::<f64>()),
            &mut rng,
        )
    }

    fn logprob_and_grad(
        &self,
        params: &PolicyParams,
        task: &Task,
        tokens: &[u32],
    ) -> Result<(Vec<f64>, Vec<SparseGrad>)> {
        if params.dim() != self.dim {
            return Err(Error::invalid(format!(
                "parameter dimension {} does not match policy dimension {}",
                params.dim(),
                self.dim
            )));
        }
        if tokens.is_empty() {
            return Err(Error::invalid("empty token sequence"));
        }
        let mut cursor = Cursor::start();
        let mut logps = Vec::with_capacity(tokens.len());
        let mut grads = Vec::with_capacity(tokens.len());
        for (position, token) in tokens.iter().enumerate() {
            if *token as usize >= self.vocab {
                return Err(Error::InvalidToken {
                    token: *token,
                    position,
                });
            }
            if position > 0 && tokens[position - 1] == TERM {
                return Err(Error::InvalidToken {
                    token: *token,
                    position,
                });
            }
            let allowed = self.allowed(task, cursor)?;
            let choice = allowed
                .iter()
                .position(|v| v == token)
                .ok_or(Error::InvalidToken {
                    token: *token,
                    position,
                })?;
            let logits = self.logits(params, task, cursor, &allowed);
            let logp = log_softmax(&logits);
            let probs = softmax(&logits);
            logps.push(logp[choice]);
            let rows = self.active_rows(task, cursor);
            let mut grad: SparseGrad = Vec::with_capacity(rows.len() * allowed.len());
            for r in rows {
                for (j, v) in allowed.iter().enumerate() {
                    let indicator = if j == choice { 1.0 } else { 0.0 };
                    let g = indicator - probs[j];
                    if g != 0.0 {
                        grad.push((r * self.vocab + *v as usize, g));
                    }
                }
            }
            grads.push(grad);
            if *token != TERM {
                self.advance(&mut cursor, *token);
            }
        }
        if *tokens.last().unwrap() != TERM {
            return Err(Error::invalid(
                "token sequence does not end in the terminal token",
            ));
        }
        Ok((logps, grads))
    }

    fn greedy_decode(&self, params: &PolicyParams, task: &Task) -> Result<Response> {
        validate_sampling(self, params, 1.0)?;
        let mut rng = stream_rng(SampleKey::new(0, 0), task.id(), 0);
        self.decode_with(params, task, 1.0, |tempered, _| argmax(tempered), &mut rng)
    }

    fn answer_marginals(&self, params: &PolicyParams, task: &Task) -> Result<Vec<f64>> {
        let k = task.answer_space().len();
        let mut marginals = vec![0.0; k];
        // Exact dynamic program over (previous token, position) states; the
        // chain is absorbed the moment an answer token is emitted. State
        // mass is indexed by token id so the summation order is fixed.
        let mut mass = vec![0.0f64; self.vocab];
        mass[TERM as usize] = 1.0;
        for t in 0..=L_MAX {
            let mut next = vec![0.0f64; self.vocab];
            let mut any = false;
            for prev in 0..self.vocab as u32 {
                let m = mass[prev as usize];
                if m == 0.0 {
                    continue;
                }
                let cursor = Cursor {
                    t,
                    prev,
                    answered: false,
                };
                let allowed = self.allowed(task, cursor)?;
                let probs = softmax(&self.logits(params, task, cursor, &allowed));
                for (j, v) in allowed.iter().enumerate() {
                    if let Some(slot) = self.slot_of(*v) {
                        marginals[slot] += m * probs[j];
                    } else if self.is_filler(*v) {
                        next[*v as usize] += m * probs[j];
                        any = true;
                    }
                }
            }
            mass = next;
            if !any {
                break;
            }
        }
        Ok(marginals)
    }

    fn init_with_accuracy(
        &self,
        tasks: &TaskSet,
        p: f64,
        wrong_mass: WrongMass,
    ) -> Result<PolicyParams> {
        let mut values = vec![0.0; self.dim];
        let mut assigned: HashMap<usize, (usize, usize)> = HashMap::new();
        for task in tasks.tasks() {
            let k = task.answer_space().len();
            let slot = task
                .truth_slot()
                .ok_or_else(|| Error::invalid(format!("task {} has no truth slot", task.id())))?;
            let bucket = self.bucket(task);
            if let Some(existing) = assigned.get(&bucket) {
                if *existing != (k, slot) {
                    return Err(Error::invalid(format!(
                        "tasks sharing feature bucket {bucket} disagree on their answer layout; \
                         accuracy-targeted init is ill-posed"
                    )));
                }
                continue;
            }
            assigned.insert(bucket, (k, slot));
            let q = target_distribution(k, slot, p, wrong_mass)?;
            for (j, qj) in q.iter().enumerate() {
                values[bucket * self.vocab + Self::answer_token(j) as usize] = qj.ln();
            }
        }
        PolicyParams::new(values)
    }
}
