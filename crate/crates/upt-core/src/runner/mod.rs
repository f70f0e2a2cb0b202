//! The training loop: sample a group per task, extract answers, vote,
//! reward, normalize advantages, take the clipped surrogate step, and
//! refresh the old policy — with metric logging, checkpointing, and
//! deterministic worker fan-out.

mod config;
mod suite;

pub use config::{RewardMode, TrainConfig};
pub use suite::{run_experiment_suite, Criterion, SeedOutcome, SuiteName, SuiteReport};

use crate::answer::extract;
use crate::error::{Error, Result};
use crate::grpo::{normalize_advantages_with, optimizer_step, surrogate, AdamState, UpdateReport};
use crate::metrics::{accuracy, semantic_entropy, AccuracyMode, TaskEvaluation};
use crate::policy::{fnv1a64, labeled_rng, make_policy, Policy, PolicyParams, Response, SampleKey};
use crate::tasks::{Task, TaskSet};
use crate::voting::{supervised_rewards, RewardedGroup};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

/// Name of the env var that overrides the sampling worker count. Results
/// are identical for any value.
pub const WORKERS_ENV: &str = "UPT_WORKERS";

/// One line of the metric log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub episode: usize,
    pub mean_majority_reward: f64,
    pub mean_entropy: f64,
    /// Held-out greedy accuracy; present only on evaluation steps.
    pub greedy_accuracy: Option<f64>,
    pub clip_fraction: f64,
    pub mean_kl: f64,
    pub grad_norm: f64,
    pub objective: f64,
    pub wall_ms: f64,
}

/// Everything a finished run hands back.
#[derive(Debug)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub metrics: Vec<MetricRecord>,
    /// FNV over the parameter bits after every step: a compact witness of
    /// the whole parameter trajectory.
    pub param_hashes: Vec<u64>,
    pub steps: u64,
    pub run_dir: Option<PathBuf>,
}

/// Worker count from the environment, defaulting to 1.
pub fn resolve_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|w| *w >= 1)
        .unwrap_or(1)
}

/// Split a task set into training tasks and the held-out evaluation split
/// (a deterministic ~20% by id hash).
pub fn split_tasks(tasks: &TaskSet) -> (Vec<&Task>, Vec<&Task>) {
    tasks
        .tasks()
        .iter()
        .partition(|t| !fnv1a64(t.id().as_bytes()).is_multiple_of(5))
}

/// Run training with the worker count taken from `UPT_WORKERS`.
pub fn train(
    cfg: &TrainConfig,
    tasks: &TaskSet,
    initial: &PolicyParams,
    out_dir: Option<&Path>,
) -> Result<TrainOutput> {
    train_with_workers(cfg, tasks, initial, resolve_workers(), out_dir)
}

/// Run training with an explicit worker count. The count affects wall time
/// only: metric values, parameters, and checkpoints are identical.
pub fn train_with_workers(
    cfg: &TrainConfig,
    tasks: &TaskSet,
    initial: &PolicyParams,
    workers: usize,
    out_dir: Option<&Path>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::invalid("training needs a nonempty task set"));
    }
    let workers = workers.max(1);
    let policy = make_policy(cfg.policy_kind, tasks)?;
    if initial.dim() != policy.dim() {
        return Err(Error::invalid(format!(
            "initial parameters have dimension {}, policy expects {}",
            initial.dim(),
            policy.dim()
        )));
    }
    let (train_tasks, eval_tasks) = split_tasks(tasks);
    if train_tasks.is_empty() {
        return Err(Error::invalid(
            "the training split is empty; provide more tasks",
        ));
    }
    let eval_owned: Vec<Task> = eval_tasks.iter().map(|t| (*t).clone()).collect();

    let mut sink = match out_dir {
        Some(dir) => Some(RunDir::create(dir, cfg)?),
        None => None,
    };

    let reference = initial.clone();
    let mut params = initial.clone();
    let mut adam = AdamState::new(policy.dim());
    let mut metrics: Vec<MetricRecord> = Vec::new();
    let mut param_hashes: Vec<u64> = Vec::new();
    let mut step: u64 = 0;

    for episode in 0..cfg.episodes {
        let order = shuffled_indices(train_tasks.len(), cfg.seed, episode as u64);
        for batch in order.chunks(cfg.batch_tasks_per_step) {
            step += 1;
            let t0 = Instant::now();
            let batch_tasks: Vec<&Task> = batch.iter().map(|i| train_tasks[*i]).collect();

            let groups = sample_batch(
                policy.as_ref(),
                &params,
                &batch_tasks,
                cfg.group_size,
                cfg.temperature,
                SampleKey::new(cfg.seed, step),
                workers,
            )?;

            // Extract, vote, reward.
            let mut rewarded: Vec<RewardedGroup> = Vec::with_capacity(groups.len());
            let mut train_rewards: Vec<Vec<f64>> = Vec::with_capacity(groups.len());
            for (task, group) in batch_tasks.iter().zip(&groups) {
                let answers: Vec<_> = group.iter().map(|r| extract(&r.text)).collect();
                let rg = RewardedGroup::from_answers(answers);
                let rewards = match cfg.reward_mode {
                    RewardMode::Majority => rg.rewards.clone(),
                    RewardMode::GroundTruth => {
                        supervised_rewards(&rg.answers, task.truth_for_eval())?
                    }
                };
                rewarded.push(rg);
                train_rewards.push(rewards);
            }

            let stats: Vec<_> = train_rewards
                .iter()
                .map(|r| normalize_advantages_with(r, cfg.std_mode))
                .collect::<Result<_>>()?;

            // Inner epochs re-use the sampled batch; the sampling-time
            // log-probabilities stay fixed, so ratios drift and clipping
            // becomes active after the first pass.
            let mut last_report = UpdateReport {
                objective: 0.0,
                grad_norm: 0.0,
                clip_fraction: 0.0,
                mean_kl: 0.0,
                step_index: adam.step_count(),
            };
            for _ in 0..cfg.inner_epochs {
                let mut gradient = vec![0.0; policy.dim()];
                let mut objective = 0.0;
                let mut clip_fraction = 0.0;
                let mut mean_kl = 0.0;
                let mut contributing = 0usize;
                for ((task, group), st) in batch_tasks.iter().zip(&groups).zip(&stats) {
                    let out = surrogate(
                        policy.as_ref(),
                        task,
                        group,
                        st,
                        &params,
                        &reference,
                        cfg.clip_eps,
                        cfg.kl_beta,
                    )?;
                    objective += out.objective;
                    clip_fraction += out.clip_fraction;
                    mean_kl += out.mean_kl;
                    if cfg.skip_zero_variance && st.zero_variance() {
                        continue;
                    }
                    contributing += 1;
                    for (g, o) in gradient.iter_mut().zip(&out.gradient) {
                        *g += o;
                    }
                }
                let n_groups = groups.len() as f64;
                let mut grad_norm = 0.0;
                if contributing > 0 {
                    for g in gradient.iter_mut() {
                        *g /= contributing as f64;
                    }
                    grad_norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
                }
                // An exactly zero gradient means no update at all; weight
                // decay is part of taking a step, not a force of its own.
                if grad_norm > 0.0 {
                    params = optimizer_step(
                        &params,
                        &gradient,
                        &mut adam,
                        cfg.learning_rate,
                        cfg.weight_decay,
                        cfg.grad_clip_norm,
                    )
                    .map_err(|e| match e {
                        Error::NonFinite { .. } => Error::RunAborted {
                            step,
                            reason: "non-finite gradient or parameters; last checkpoint retained"
                                .into(),
                        },
                        other => other,
                    })?;
                }
                last_report = UpdateReport {
                    objective: objective / n_groups,
                    grad_norm,
                    clip_fraction: clip_fraction / n_groups,
                    mean_kl: mean_kl / n_groups,
                    step_index: adam.step_count(),
                };
            }
            param_hashes.push(hash_params(&params));

            let mean_majority_reward = {
                let total: usize = rewarded.iter().map(|g| g.rewards.len()).sum();
                rewarded.iter().flat_map(|g| g.rewards.iter()).sum::<f64>() / total as f64
            };
            let mean_entropy = rewarded
                .iter()
                .map(|g| semantic_entropy(&g.answers).map(|r| r.entropy))
                .sum::<Result<f64>>()?
                / rewarded.len() as f64;
            let greedy_accuracy =
                if step.is_multiple_of(cfg.eval_every as u64) && !eval_owned.is_empty() {
                    Some(accuracy(
                        policy.as_ref(),
                        &params,
                        &eval_owned,
                        AccuracyMode::Greedy,
                    )?)
                } else {
                    None
                };
            let record = MetricRecord {
                step,
                episode,
                mean_majority_reward,
                mean_entropy,
                greedy_accuracy,
                clip_fraction: last_report.clip_fraction,
                mean_kl: last_report.mean_kl,
                grad_norm: last_report.grad_norm,
                objective: last_report.objective,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            };
            if let Some(sink) = sink.as_mut() {
                sink.append_metric(&record)?;
            }
            metrics.push(record);
        }
        if let Some(sink) = sink.as_mut() {
            sink.write_checkpoint(episode, cfg, &params)?;
        }
    }

    let run_dir = sink.map(|s| s.finish()).transpose()?;
    Ok(TrainOutput {
        params,
        metrics,
        param_hashes,
        steps: step,
        run_dir,
    })
}

/// Evaluate a checkpointed policy and optionally write the per-task report.
pub fn evaluate(
    policy: &dyn Policy,
    params: &PolicyParams,
    tasks: &TaskSet,
    mode: AccuracyMode,
    report_path: Option<&Path>,
) -> Result<(f64, Vec<TaskEvaluation>)> {
    let per_task = crate::metrics::evaluate_tasks(policy, params, tasks.tasks(), mode)?;
    if per_task.is_empty() {
        return Err(Error::invalid("evaluation needs a nonempty task set"));
    }
    let acc = per_task.iter().map(|t| t.correct_fraction).sum::<f64>() / per_task.len() as f64;
    if let Some(path) = report_path {
        let mut out = String::new();
        for row in &per_task {
            out.push_str(&serde_json::to_string(row)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
    }
    Ok((acc, per_task))
}

fn hash_params(params: &PolicyParams) -> u64 {
    let mut bytes = Vec::with_capacity(params.dim() * 8);
    for v in params.values() {
        bytes.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fnv1a64(&bytes)
}

fn shuffled_indices(len: usize, seed: u64, episode: u64) -> Vec<usize> {
    use rand::Rng;
    let mut rng = labeled_rng(seed, "episode-shuffle", episode);
    let mut order: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Sample every (task, response) unit of the step, fanned out over a fixed
/// worker count. Each unit derives its own random stream, so the partition
/// cannot affect the result; units are reassembled in index order.
fn sample_batch(
    policy: &dyn Policy,
    params: &PolicyParams,
    batch_tasks: &[&Task],
    group_size: usize,
    temperature: f64,
    key: SampleKey,
    workers: usize,
) -> Result<Vec<Vec<Response>>> {
    let n_units = batch_tasks.len() * group_size;
    let slots: Mutex<Vec<Option<Result<Response>>>> =
        Mutex::new((0..n_units).map(|_| None).collect());
    let workers = workers.min(n_units).max(1);
    std::thread::scope(|scope| {
        for w in 0..workers {
            let slots = &slots;
            scope.spawn(move || {
                for unit in (w..n_units).step_by(workers) {
                    let task_idx = unit / group_size;
                    let response_idx = unit % group_size;
                    let sampled = policy.sample_one(
                        params,
                        batch_tasks[task_idx],
                        temperature,
                        key,
                        response_idx as u64,
                    );
                    slots.lock().unwrap()[unit] = Some(sampled);
                }
            });
        }
    });
    let slots = slots.into_inner().unwrap();
    let mut groups: Vec<Vec<Response>> = Vec::with_capacity(batch_tasks.len());
    let mut it = slots.into_iter();
    for _ in batch_tasks {
        let mut group = Vec::with_capacity(group_size);
        for _ in 0..group_size {
            let r = it
                .next()
                .flatten()
                .ok_or_else(|| Error::invalid("sampling worker dropped a unit"))?;
            group.push(r?);
        }
        groups.push(group);
    }
    Ok(groups)
}

/// Run-directory writer: `config.resolved`, `metrics.log`, and
/// `checkpoints/ep<k>.ckpt`.
struct RunDir {
    dir: PathBuf,
    metrics: std::io::BufWriter<std::fs::File>,
}

impl RunDir {
    fn create(dir: &Path, cfg: &TrainConfig) -> Result<Self> {
        std::fs::create_dir_all(dir.join("checkpoints"))?;
        std::fs::write(dir.join("config.resolved"), cfg.to_config_text())?;
        let metrics = std::io::BufWriter::new(std::fs::File::create(dir.join("metrics.log"))?);
        Ok(RunDir {
            dir: dir.to_path_buf(),
            metrics,
        })
    }

    fn append_metric(&mut self, record: &MetricRecord) -> Result<()> {
        serde_json::to_writer(&mut self.metrics, record)?;
        self.metrics.write_all(b"\n")?;
        Ok(())
    }

    fn write_checkpoint(
        &mut self,
        episode: usize,
        cfg: &TrainConfig,
        params: &PolicyParams,
    ) -> Result<()> {
        self.metrics.flush()?;
        crate::policy::save_checkpoint(
            &self
                .dir
                .join("checkpoints")
                .join(format!("ep{episode}.ckpt")),
            cfg.policy_kind,
            params,
        )
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.metrics.flush()?;
        Ok(self.dir)
    }
}
