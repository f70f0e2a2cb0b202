//! Single-token bandit policy: one logit per (task, answer) pair.
//!
//! Each response is one answer token (which also terminates the sequence),
//! rendered as a boxed canonical answer so the extractor round-trips it.
//! Closed-form behavior makes this the reference for the group/advantage
//! math.

use super::{
    argmax, categorical, log_softmax, softmax, stream_rng, target_distribution, validate_sampling,
    Policy, PolicyKind, PolicyParams, Response, SampleKey, SparseGrad, WrongMass,
};
use crate::error::{Error, Result};
use crate::tasks::{Task, TaskSet};
use rand::Rng;
use std::collections::HashMap;

pub struct BanditPolicy {
    /// Task id -> (offset into the parameter vector, answer count).
    layout: HashMap<String, (usize, usize)>,
    dim: usize,
}

impl BanditPolicy {
    pub fn new(tasks: &TaskSet) -> Result<Self> {
        let mut layout = HashMap::new();
        let mut offset = 0usize;
        for t in tasks.tasks() {
            let k = t.answer_space().len();
            layout.insert(t.id().to_string(), (offset, k));
            offset += k;
        }
        Ok(BanditPolicy {
            layout,
            dim: offset,
        })
    }

    fn block<'p>(&self, params: &'p PolicyParams, task: &Task) -> Result<(usize, &'p [f64])> {
        let (offset, k) = *self.layout.get(task.id()).ok_or_else(|| {
            Error::invalid(format!("task {} unknown to this bandit policy", task.id()))
        })?;
        Ok((offset, &params.values()[offset..offset + k]))
    }

    fn render(task: &Task, slot: usize) -> String {
        format!(r"\boxed{{{}}}", task.answer_space()[slot].canonical())
    }
}

impl Policy for BanditPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Bandit
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
        let (_, logits) = self.block(params, task)?;
        let tempered: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
        let mut rng = stream_rng(key, task.id(), index);
        let slot = categorical(&softmax(&tempered), rng.gen::<f64>());
        let old_logprob = log_softmax(logits)[slot];
        Ok(Response {
            tokens: vec![slot as u32],
            old_logprobs: vec![old_logprob],
            text: Self::render(task, slot),
        })
    }

    fn logprob_and_grad(
        &self,
        params: &PolicyParams,
        task: &Task,
        tokens: &[u32],
    ) -> Result<(Vec<f64>, Vec<SparseGrad>)> {
        let (offset, logits) = self.block(params, task)?;
        if tokens.len() != 1 {
            return Err(Error::invalid(format!(
                "bandit responses are single tokens, got {}",
                tokens.len()
            )));
        }
        let slot = tokens[0] as usize;
        if slot >= logits.len() {
            return Err(Error::InvalidToken {
                token: tokens[0],
                position: 0,
            });
        }
        let logp = log_softmax(logits);
        let probs = softmax(logits);
        let grad: SparseGrad = (0..logits.len())
            .map(|j| {
                let indicator = if j == slot { 1.0 } else { 0.0 };
                (offset + j, indicator - probs[j])
            })
            .collect();
        Ok((vec![logp[slot]], vec![grad]))
    }

    fn greedy_decode(&self, params: &PolicyParams, task: &Task) -> Result<Response> {
        let (_, logits) = self.block(params, task)?;
        let slot = argmax(logits);
        Ok(Response {
            tokens: vec![slot as u32],
            old_logprobs: vec![log_softmax(logits)[slot]],
            text: Self::render(task, slot),
        })
    }

    fn answer_marginals(&self, params: &PolicyParams, task: &Task) -> Result<Vec<f64>> {
        let (_, logits) = self.block(params, task)?;
        Ok(softmax(logits))
    }

    fn init_with_accuracy(
        &self,
        tasks: &TaskSet,
        p: f64,
        wrong_mass: WrongMass,
    ) -> Result<PolicyParams> {
        let mut values = vec![0.0; self.dim];
        for t in tasks.tasks() {
            let (offset, k) = *self
                .layout
                .get(t.id())
                .ok_or_else(|| Error::invalid(format!("task {} unknown to policy", t.id())))?;
            let slot = t
                .truth_slot()
                .ok_or_else(|| Error::invalid(format!("task {} has no truth slot", t.id())))?;
            let q = target_distribution(k, slot, p, wrong_mass)?;
            for (j, qj) in q.iter().enumerate() {
                values[offset + j] = qj.ln();
            }
        }
        PolicyParams::new(values)
    }
}
