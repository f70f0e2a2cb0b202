//! Majority voting over a group's extracted answers and reward assignment:
//! pseudo-rewards from the vote winner, or supervised rewards from a label.
//!
//! Unextractable answers never vote and never earn reward. Ties are broken
//! by earliest first occurrence and flagged so experiments can filter.

use crate::answer::{equivalent, ExtractedAnswer};
use crate::error::{Error, Result};

/// Outcome of a majority vote.
#[derive(Debug, Clone)]
pub struct VoteResult {
    /// Representative of the winning equivalence class, absent when no
    /// answer was extractable.
    pub winner: Option<ExtractedAnswer>,
    /// Equivalence classes in first-occurrence order with multiplicities.
    pub counts: Vec<(ExtractedAnswer, usize)>,
    /// True when another class matched the winner's multiplicity.
    pub tie: bool,
    /// Number of responses that produced an extractable answer.
    pub voters: usize,
}

impl VoteResult {
    /// Multiplicity of the winning class (0 when there is no winner).
    pub fn winner_count(&self) -> usize {
        match &self.winner {
            Some(w) => self
                .counts
                .iter()
                .find(|(a, _)| equivalent(a, w))
                .map(|(_, c)| *c)
                .unwrap_or(0),
            None => 0,
        }
    }
}

/// Select the most frequent extracted answer in the group.
///
/// Answers with no extractable content are excluded from counting. Among
/// the remaining equivalence classes the largest multiplicity wins; a tie
/// in multiplicity goes to the class whose first member appears earliest,
/// with `tie` set.
pub fn majority_vote(answers: &[ExtractedAnswer]) -> VoteResult {
    let mut counts: Vec<(ExtractedAnswer, usize)> = Vec::new();
    let mut voters = 0usize;
    for a in answers {
        if a.is_none() {
            continue;
        }
        voters += 1;
        match counts.iter_mut().find(|(rep, _)| equivalent(rep, a)) {
            Some((_, c)) => *c += 1,
            None => counts.push((a.clone(), 1)),
        }
    }
    if counts.is_empty() {
        return VoteResult {
            winner: None,
            counts,
            tie: false,
            voters,
        };
    }
    let best = counts.iter().map(|(_, c)| *c).max().unwrap();
    let tie = counts.iter().filter(|(_, c)| *c == best).count() > 1;
    let winner = counts
        .iter()
        .find(|(_, c)| *c == best)
        .map(|(a, _)| a.clone());
    VoteResult {
        winner,
        counts,
        tie,
        voters,
    }
}

/// Reward each answer 1.0 for agreeing with the vote winner, else 0.0.
/// Unextractable answers and absent winners always yield 0.
pub fn pseudo_rewards(answers: &[ExtractedAnswer], vote: &VoteResult) -> Vec<f64> {
    match &vote.winner {
        Some(winner) => answers
            .iter()
            .map(|a| if equivalent(a, winner) { 1.0 } else { 0.0 })
            .collect(),
        None => vec![0.0; answers.len()],
    }
}

/// Reward each answer 1.0 for agreeing with the ground-truth label.
/// Rejects a label of kind none.
pub fn supervised_rewards(
    answers: &[ExtractedAnswer],
    truth: &ExtractedAnswer,
) -> Result<Vec<f64>> {
    if truth.is_none() {
        return Err(Error::invalid(
            "supervised reward requires a non-none label",
        ));
    }
    Ok(answers
        .iter()
        .map(|a| if equivalent(a, truth) { 1.0 } else { 0.0 })
        .collect())
}

/// A group's answers together with its vote and rewards, as consumed by the
/// diagnostics in `metrics`.
#[derive(Debug, Clone)]
pub struct RewardedGroup {
    pub answers: Vec<ExtractedAnswer>,
    pub vote: VoteResult,
    pub rewards: Vec<f64>,
}

impl RewardedGroup {
    /// Vote the group and attach pseudo-rewards.
    pub fn from_answers(answers: Vec<ExtractedAnswer>) -> Self {
        let vote = majority_vote(&answers);
        let rewards = pseudo_rewards(&answers, &vote);
        RewardedGroup {
            answers,
            vote,
            rewards,
        }
    }
}
