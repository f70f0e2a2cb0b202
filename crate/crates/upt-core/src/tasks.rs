//! Synthetic question environments: parametric template families standing in
//! for unlabeled multi-modal datasets, plus the two question-synthesis
//! strategies (parameter resampling within a family, and fresh generation
//! from a feature vector).
//!
//! A task carries its ground truth, but the field is private: training code
//! never reads it. Only evaluation and the supervised-reward baseline go
//! through `truth_for_eval`.

use crate::answer::{equivalent, ExtractedAnswer};
use crate::error::{Error, Result};
use crate::policy::fnv1a64;
use num::bigint::BigInt;
use num::rational::BigRational;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// Candidate answers carried by every generated task.
pub const ANSWERS_PER_TASK: usize = 4;

const TASKSET_SCHEMA: &str = "upt-taskset";
const TASKSET_VERSION: u32 = 1;

/// Known template families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateFamily {
    /// Compute (a*b + c) mod m; numeric answers.
    Modular,
    /// x-coordinate where two integer-coefficient lines meet; rational answers.
    LineIntersection,
    /// Arithmetic-pattern multiple choice; option-letter answers.
    ChoicePattern,
}

impl TemplateFamily {
    pub const ALL: [TemplateFamily; 3] = [
        TemplateFamily::Modular,
        TemplateFamily::LineIntersection,
        TemplateFamily::ChoicePattern,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateFamily::Modular => "modular",
            TemplateFamily::LineIntersection => "line_intersection",
            TemplateFamily::ChoicePattern => "choice_pattern",
        }
    }

    fn id(&self) -> usize {
        match self {
            TemplateFamily::Modular => 0,
            TemplateFamily::LineIntersection => 1,
            TemplateFamily::ChoicePattern => 2,
        }
    }
}

impl std::str::FromStr for TemplateFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modular" => Ok(TemplateFamily::Modular),
            "line_intersection" => Ok(TemplateFamily::LineIntersection),
            "choice_pattern" => Ok(TemplateFamily::ChoicePattern),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

/// Generator tag plus the integer parameters the question was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub family: TemplateFamily,
    pub parameters: Vec<i64>,
}

impl Template {
    /// Recompute the exact answer from the parameters.
    pub fn derive_truth(&self) -> Result<ExtractedAnswer> {
        match self.family {
            TemplateFamily::Modular => {
                let [a, b, c, m] = self.expect_params::<4>()?;
                if m <= 1 {
                    return Err(Error::invalid("modular template needs modulus > 1"));
                }
                Ok(ExtractedAnswer::integer((a * b + c).rem_euclid(m)))
            }
            TemplateFamily::LineIntersection => {
                let [a1, b1, a2, b2] = self.expect_params::<4>()?;
                if a1 == a2 {
                    return Err(Error::invalid("parallel lines have no intersection"));
                }
                Ok(ExtractedAnswer::numeric(BigRational::new(
                    BigInt::from(b2 - b1),
                    BigInt::from(a1 - a2),
                )))
            }
            TemplateFamily::ChoicePattern => {
                let [start, step, len, k] = self.expect_params::<4>()?;
                if !(2..=5).contains(&k) {
                    return Err(Error::invalid("choice pattern needs 2..=5 options"));
                }
                let idx = (start + step * len).rem_euclid(k) as usize;
                Ok(ExtractedAnswer::choice((b'A' + idx as u8) as char))
            }
        }
    }

    fn expect_params<const N: usize>(&self) -> Result<[i64; N]> {
        self.parameters.as_slice().try_into().map_err(|_| {
            Error::invalid(format!(
                "{} template expects {N} parameters, got {}",
                self.family.as_str(),
                self.parameters.len()
            ))
        })
    }
}

/// One question: context features (the image/question stand-in), candidate
/// answers, and a hidden exact truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Task {
    id: String,
    family: TemplateFamily,
    parameters: Vec<i64>,
    features: Vec<f64>,
    answer_space: Vec<ExtractedAnswer>,
    truth: ExtractedAnswer,
}

impl Task {
    /// Assemble a task by hand; the usual invariants are enforced (at
    /// least two pairwise non-equivalent answers, truth among them).
    pub fn from_parts(
        id: String,
        template: Template,
        features: Vec<f64>,
        answer_space: Vec<ExtractedAnswer>,
        truth: ExtractedAnswer,
    ) -> Result<Self> {
        let task = Task {
            id,
            family: template.family,
            parameters: template.parameters,
            features,
            answer_space,
            truth,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn answer_space(&self) -> &[ExtractedAnswer] {
        &self.answer_space
    }

    pub fn template(&self) -> Template {
        Template {
            family: self.family,
            parameters: self.parameters.clone(),
        }
    }

    pub fn family(&self) -> TemplateFamily {
        self.family
    }

    /// The hidden label. Only evaluation, accuracy-targeted initialization,
    /// and the supervised-reward baseline may call this; the unsupervised
    /// training path does not.
    pub fn truth_for_eval(&self) -> &ExtractedAnswer {
        &self.truth
    }

    /// Position of the truth in the answer space, when it is there (a
    /// poisoned task has no valid slot).
    pub fn truth_slot(&self) -> Option<usize> {
        self.answer_space
            .iter()
            .position(|a| equivalent(a, &self.truth))
    }

    fn validate(&self) -> Result<()> {
        if self.answer_space.len() < 2 {
            return Err(Error::invalid(format!(
                "task {} needs at least 2 candidate answers",
                self.id
            )));
        }
        for (i, a) in self.answer_space.iter().enumerate() {
            if a.is_none() {
                return Err(Error::invalid(format!(
                    "task {} has an empty candidate answer",
                    self.id
                )));
            }
            for b in &self.answer_space[i + 1..] {
                if equivalent(a, b) {
                    return Err(Error::invalid(format!(
                        "task {} has duplicate candidate answers ({})",
                        self.id,
                        a.canonical()
                    )));
                }
            }
        }
        if self.truth_slot().is_none() {
            return Err(Error::invalid(format!(
                "task {} truth {:?} is not in its answer space",
                self.id,
                self.truth.canonical()
            )));
        }
        Ok(())
    }
}

/// An ordered collection of tasks with unique ids.
#[derive(Debug, Clone)]
pub struct TaskSet {
    tasks: Vec<Task>,
    seed: u64,
}

impl TaskSet {
    pub fn from_tasks(tasks: Vec<Task>, seed: u64) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for t in &tasks {
            t.validate()?;
            if !seen.insert(t.id.clone()) {
                return Err(Error::invalid(format!("duplicate task id {}", t.id)));
            }
        }
        Ok(TaskSet { tasks, seed })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    /// Copy of this set with every truth replaced by an out-of-space
    /// sentinel. Used to demonstrate that unsupervised training never reads
    /// labels: the parameter trajectory must not change.
    pub fn with_poisoned_truths(&self) -> TaskSet {
        let mut out = self.clone();
        for (i, t) in out.tasks.iter_mut().enumerate() {
            t.truth = ExtractedAnswer::text(&format!("poisoned sentinel {i}"));
        }
        out
    }

    /// Write as line-delimited JSON: a schema header line, then one task
    /// per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = serde_json::json!({
            "schema": TASKSET_SCHEMA,
            "version": TASKSET_VERSION,
            "seed": self.seed,
            "count": self.tasks.len(),
        });
        writeln!(w, "{header}")?;
        for t in &self.tasks {
            writeln!(w, "{}", serde_json::to_string(t)?)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format("empty task file".into()))??;
        let header: serde_json::Value = serde_json::from_str(&header_line)?;
        if header["schema"] != TASKSET_SCHEMA {
            return Err(Error::Format(format!(
                "unexpected schema {:?}",
                header["schema"]
            )));
        }
        if header["version"] != TASKSET_VERSION {
            return Err(Error::Format(format!(
                "unsupported task file version {:?}",
                header["version"]
            )));
        }
        let seed = header["seed"].as_u64().unwrap_or(0);
        let mut tasks = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            tasks.push(serde_json::from_str::<Task>(&line)?);
        }
        TaskSet::from_tasks(tasks, seed)
    }
}

/// Deterministically generate `count` tasks of one family (or `mixed`).
pub fn generate_tasks(family: &str, count: usize, seed: u64) -> Result<TaskSet> {
    let families: Vec<TemplateFamily> = if family == "mixed" {
        TemplateFamily::ALL.to_vec()
    } else {
        vec![family.parse()?]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7461_736b_7365_7464);
    let mut tasks = Vec::with_capacity(count);
    for i in 0..count {
        let fam = families[i % families.len()];
        let template = sample_template(fam, &mut rng);
        let id = format!("{}-{}-{}", fam.as_str(), seed, i);
        tasks.push(build_task(id, template, i as f64, &mut rng)?);
    }
    TaskSet::from_tasks(tasks, seed)
}

/// Resample the seed task's template parameters within the same family,
/// keeping its context features. The result differs from the seed in
/// parameters and has its truth recomputed.
pub fn synthesize_in_context(seed_task: &Task, rng: &mut impl Rng) -> Result<Task> {
    let family = seed_task.family;
    let mut template = sample_template(family, rng);
    let mut guard = 0;
    while template.parameters == seed_task.parameters {
        template = sample_template(family, rng);
        guard += 1;
        if guard > 1000 {
            return Err(Error::invalid(format!(
                "could not perturb parameters of task {}",
                seed_task.id
            )));
        }
    }
    let suffix: u32 = rng.gen();
    let id = format!("{}:ic{:08x}", seed_task.id, suffix);
    let feature0 = seed_task.features.first().copied().unwrap_or(0.0);
    build_task(id, template, feature0, rng)
}

/// Relative weights over template families used by direct synthesis.
#[derive(Debug, Clone)]
pub struct DirectSynthOptions {
    pub weights: [f64; 3],
}

impl Default for DirectSynthOptions {
    fn default() -> Self {
        DirectSynthOptions {
            weights: [1.0, 1.0, 1.0],
        }
    }
}

/// Generate a fresh task from a bare feature vector: pick a family from the
/// configured distribution and instantiate new parameters. The question type
/// may change family (numeric vs multiple choice) relative to whatever
/// produced the features.
pub fn synthesize_direct(
    features: &[f64],
    rng: &mut impl Rng,
    options: &DirectSynthOptions,
) -> Result<Task> {
    let total: f64 = options.weights.iter().sum();
    if !total.is_finite() || total <= 0.0 || options.weights.iter().any(|w| *w < 0.0) {
        return Err(Error::invalid(
            "family weights must be nonnegative, not all zero",
        ));
    }
    // Fold the feature vector into the stream so distinct features give
    // distinct tasks under the same generator state.
    let mut fh = 0u64;
    for f in features {
        fh = fnv1a64(&[fh.to_le_bytes(), f.to_bits().to_le_bytes()].concat());
    }
    let mut sub = ChaCha8Rng::seed_from_u64(rng.gen::<u64>() ^ fh);
    let u: f64 = sub.gen::<f64>() * total;
    let mut cum = 0.0;
    let mut family = TemplateFamily::Modular;
    for (i, w) in options.weights.iter().enumerate() {
        cum += w;
        if u < cum {
            family = TemplateFamily::ALL[i];
            break;
        }
    }
    let template = sample_template(family, &mut sub);
    let suffix: u32 = sub.gen();
    let id = format!("direct:{}:{:08x}", family.as_str(), suffix);
    let feature0 = features.first().copied().unwrap_or(0.0);
    build_task(id, template, feature0, &mut sub)
}

fn sample_template(family: TemplateFamily, rng: &mut impl Rng) -> Template {
    let parameters = match family {
        TemplateFamily::Modular => {
            let m = rng.gen_range(5..30i64);
            vec![
                rng.gen_range(1..m),
                rng.gen_range(1..m),
                rng.gen_range(1..m),
                m,
            ]
        }
        TemplateFamily::LineIntersection => {
            let a1 = rng.gen_range(-5..=5i64);
            let mut a2 = rng.gen_range(-5..=5i64);
            while a2 == a1 {
                a2 = rng.gen_range(-5..=5i64);
            }
            vec![a1, rng.gen_range(-9..=9i64), a2, rng.gen_range(-9..=9i64)]
        }
        TemplateFamily::ChoicePattern => {
            vec![
                rng.gen_range(0..20i64),
                rng.gen_range(1..6i64),
                rng.gen_range(3..8i64),
                ANSWERS_PER_TASK as i64,
            ]
        }
    };
    Template { family, parameters }
}

fn build_task(id: String, template: Template, feature0: f64, rng: &mut impl Rng) -> Result<Task> {
    let truth = template.derive_truth()?;
    let answer_space = build_answer_space(&template, &truth, rng)?;
    let features = vec![
        feature0,
        template.family.id() as f64,
        template.parameters.first().copied().unwrap_or(0) as f64,
        template.parameters.get(1).copied().unwrap_or(0) as f64,
    ];
    Task::from_parts(id, template, features, answer_space, truth)
}

/// Candidate answers: the truth plus distinct distractors in the same
/// format, shuffled so the truth's position carries no signal.
fn build_answer_space(
    template: &Template,
    truth: &ExtractedAnswer,
    rng: &mut impl Rng,
) -> Result<Vec<ExtractedAnswer>> {
    let mut answers: Vec<ExtractedAnswer> = match template.family {
        TemplateFamily::Modular => {
            let m = template.parameters[3];
            let truth_val =
                template.parameters[0] * template.parameters[1] + template.parameters[2];
            let truth_res = truth_val.rem_euclid(m);
            let mut picked = vec![truth.clone()];
            let mut offset_pool: Vec<i64> = (1..m).collect();
            // Deterministic distinct residue offsets.
            while picked.len() < ANSWERS_PER_TASK.min(m as usize) {
                let k = rng.gen_range(0..offset_pool.len());
                let off = offset_pool.swap_remove(k);
                picked.push(ExtractedAnswer::integer((truth_res + off).rem_euclid(m)));
            }
            picked
        }
        TemplateFamily::LineIntersection => {
            let [a1, b1, a2, b2]: [i64; 4] = template.parameters.as_slice().try_into().unwrap();
            let denom = a1 - a2;
            let mut picked = vec![truth.clone()];
            let mut delta = 1i64;
            while picked.len() < ANSWERS_PER_TASK {
                for sign in [1i64, -1] {
                    if picked.len() >= ANSWERS_PER_TASK {
                        break;
                    }
                    let numer = b2 - b1 + sign * delta;
                    picked.push(ExtractedAnswer::numeric(BigRational::new(
                        BigInt::from(numer),
                        BigInt::from(denom),
                    )));
                }
                delta += 1;
            }
            picked
        }
        TemplateFamily::ChoicePattern => {
            let k = template.parameters[3] as usize;
            return Ok((0..k)
                .map(|i| ExtractedAnswer::choice((b'A' + i as u8) as char))
                .collect());
        }
    };
    // Shuffle so the truth is not always first.
    for i in (1..answers.len()).rev() {
        let j = rng.gen_range(0..=i);
        answers.swap(i, j);
    }
    Ok(answers)
}
