//! Command-line front end: task generation and synthesis, training,
//! evaluation, the built-in experiment suites, answer extraction, and the
//! binomial majority-vote analysis.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use upt_core::metrics::{
    binomial_terms, majority_success_prob, AccuracyMode, BinomialVoteModel, VoteVariant,
};
use upt_core::policy::{load_checkpoint, make_policy, PolicyParams};
use upt_core::runner::{self, run_experiment_suite, SuiteName, TrainConfig};
use upt_core::tasks::{
    generate_tasks, synthesize_direct, synthesize_in_context, DirectSynthOptions, TaskSet,
};

#[derive(Parser)]
#[command(
    name = "upt",
    about = "Majority-vote self-rewarded policy training",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract one canonical answer per input line ("<kind>\t<canonical>").
    Extract {
        /// File with one response per line.
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Print both majority-event probabilities and the per-count terms.
    AnalyzeBinomial {
        /// Per-draw success probability in (0,1).
        #[arg(long)]
        p: f64,
        /// Number of independent draws.
        #[arg(long)]
        n: u32,
        /// Select the inclusive variant (lower index ceil(n/2)) as the
        /// headline value.
        #[arg(long)]
        inclusive: bool,
    },
    /// Generate a task set file.
    GenTasks {
        /// Template family: modular, line_intersection, choice_pattern, mixed.
        #[arg(long)]
        family: String,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize new tasks from a seed task set.
    Synth {
        /// in_context resamples each task's parameters; direct generates
        /// fresh tasks from the feature vectors alone.
        #[arg(long)]
        strategy: String,
        #[arg(long = "seed-tasks")]
        seed_tasks: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Synthesized tasks per seed task.
        #[arg(long, default_value_t = 1)]
        count_per_seed: usize,
        /// Output task file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a policy on a task set.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        /// Run directory (config echo, metrics.log, checkpoints/).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Warm-start checkpoint; zero-initialized when omitted.
        #[arg(long = "init-ckpt")]
        init_ckpt: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a task set.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        /// greedy or sampled.
        #[arg(long, default_value = "greedy")]
        mode: String,
        /// Samples per task in sampled mode.
        #[arg(long, default_value_t = 64)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-task report file (defaults next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in experiment suite.
    Suite {
        /// improve, degrade, or dynamics.
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Extract { input } => {
            let file =
                std::fs::File::open(&input).with_context(|| format!("open {}", input.display()))?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for line in std::io::BufReader::new(file).lines() {
                let answer = upt_core::answer::extract(&line?);
                writeln!(out, "{}\t{}", answer.kind().as_str(), answer.canonical())?;
            }
            Ok(())
        }
        Command::AnalyzeBinomial { p, n, inclusive } => {
            let model = BinomialVoteModel::new(n, p)?;
            let strict = majority_success_prob(model, VoteVariant::Strict)?;
            let incl = majority_success_prob(model, VoteVariant::Inclusive)?;
            let strict_lo = VoteVariant::Strict.lower_index(n);
            println!("n = {n}, p = {p}");
            println!("per-count terms C(n,i) p^i (1-p)^(n-i):");
            for (i, term) in binomial_terms(model)? {
                let tag = if i >= strict_lo {
                    "strict+inclusive"
                } else {
                    "inclusive only"
                };
                println!("  i = {i:>3}  {term:.12}  [{tag}]");
            }
            println!("P(majority correct), strict (i > n/2):        {strict:.12}");
            println!("P(majority correct), inclusive (i >= n/2):    {incl:.12}");
            let (label, value) = if inclusive {
                ("inclusive", incl)
            } else {
                ("strict", strict)
            };
            println!("selected variant: {label} -> {value:.12}");
            Ok(())
        }
        Command::GenTasks {
            family,
            count,
            seed,
            out,
        } => {
            let ts = generate_tasks(&family, count, seed)?;
            ts.save(&out)?;
            println!("wrote {} tasks to {}", ts.len(), out.display());
            Ok(())
        }
        Command::Synth {
            strategy,
            seed_tasks,
            seed,
            count_per_seed,
            out,
        } => {
            let source = TaskSet::load(&seed_tasks)?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut tasks = Vec::new();
            match strategy.as_str() {
                "in_context" => {
                    for task in source.tasks() {
                        for _ in 0..count_per_seed {
                            tasks.push(synthesize_in_context(task, &mut rng)?);
                        }
                    }
                }
                "direct" => {
                    let opts = DirectSynthOptions::default();
                    for task in source.tasks() {
                        for _ in 0..count_per_seed {
                            tasks.push(synthesize_direct(task.features(), &mut rng, &opts)?);
                        }
                    }
                }
                other => bail!("unknown synthesis strategy {other:?} (in_context | direct)"),
            }
            let out_set = TaskSet::from_tasks(tasks, seed)?;
            match out {
                Some(path) => {
                    out_set.save(&path)?;
                    println!("wrote {} tasks to {}", out_set.len(), path.display());
                }
                None => {
                    let stdout = std::io::stdout();
                    out_set.write_to(&mut stdout.lock())?;
                }
            }
            Ok(())
        }
        Command::Train {
            config,
            tasks,
            out,
            init_ckpt,
        } => {
            let cfg_text = std::fs::read_to_string(&config)
                .with_context(|| format!("read {}", config.display()))?;
            let cfg = TrainConfig::parse(&cfg_text)?;
            let ts = TaskSet::load(&tasks)?;
            let policy = make_policy(cfg.policy_kind, &ts)?;
            let initial = match init_ckpt {
                Some(path) => {
                    let (kind, params) = load_checkpoint(&path)?;
                    if kind != cfg.policy_kind {
                        bail!(
                            "checkpoint holds a {} policy but the config says {}",
                            kind.as_str(),
                            cfg.policy_kind.as_str()
                        );
                    }
                    params
                }
                None => PolicyParams::zeros(policy.dim()),
            };
            let result = runner::train(&cfg, &ts, &initial, out.as_deref())?;
            let last = result.metrics.last();
            println!(
                "trained {} steps; final majority reward {:.4}, entropy {:.4}",
                result.steps,
                last.map(|r| r.mean_majority_reward).unwrap_or(f64::NAN),
                last.map(|r| r.mean_entropy).unwrap_or(f64::NAN),
            );
            if let Some(dir) = result.run_dir {
                println!("run directory: {}", dir.display());
            }
            Ok(())
        }
        Command::Eval {
            ckpt,
            tasks,
            mode,
            k,
            seed,
            out,
        } => {
            let (kind, params) = load_checkpoint(&ckpt)?;
            let ts = TaskSet::load(&tasks)?;
            let policy = make_policy(kind, &ts)?;
            let mode = match mode.as_str() {
                "greedy" => AccuracyMode::Greedy,
                "sampled" => AccuracyMode::Sampled { k, seed },
                other => bail!("unknown eval mode {other:?} (greedy | sampled)"),
            };
            let report = out.unwrap_or_else(|| ckpt.with_extension("eval.jsonl"));
            let (acc, per_task) =
                runner::evaluate(policy.as_ref(), &params, &ts, mode, Some(&report))?;
            println!("accuracy: {acc:.4} over {} tasks", per_task.len());
            println!("per-task report: {}", report.display());
            Ok(())
        }
        Command::Suite { name, out } => {
            let suite: SuiteName = name.parse()?;
            let report = run_experiment_suite(suite, out.as_deref())?;
            print!("{}", report.summary());
            if let Some(dir) = out {
                println!("report: {}", dir.join("report.json").display());
            }
            if !report.passed {
                std::process::exit(1);
            }
            Ok(())
        }
    }
}
