//! Verified observe-then-infer exemplars and prompt assembly.
//!
//! Exemplars come from an external vision-language model that is shown a
//! sample together with its gold label and asked to first describe what it
//! sees and then reason toward the label. Replies must carry an
//! `Observation:` section followed by an `Inference:` section. An exemplar is
//! verified when its inference names the gold label; only verified exemplars
//! are ever selected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruction_builder::{
    media_tag, read_jsonl, residual_placeholders, write_jsonl, InstructionRecord, TaskKind,
    TaskSpec,
};
use crate::text::contains_phrase;

/// Pool size past which more exemplars stop paying off.
pub const DEFAULT_POOL_TARGET: usize = 600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptExemplar {
    pub task_id: String,
    pub data_ref: String,
    pub observation: String,
    pub inference: String,
    pub label: String,
    pub verified: bool,
}

/// A generation request, as written by request-only mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarRequest {
    pub task: String,
    pub data_ref: String,
    pub gold: String,
    pub request: String,
}

/// Request text asking the external model to observe first and then reason
/// toward `gold`. Only the sample's own label appears in it.
pub fn build_generation_request(data_ref: &str, gold: &str, spec: &TaskSpec) -> Result<String> {
    let gold = spec.canonical_label(gold).ok_or_else(|| {
        Error::Parameter(format!(
            "gold label '{gold}' not in the label set of '{}'",
            spec.task_id
        ))
    })?;
    let media = media_tag(data_ref);
    let answer_line = match spec.kind {
        TaskKind::Binary => {
            let question = spec
                .question_bases
                .first()
                .map(String::as_str)
                .unwrap_or("Does the given data show the property in question?");
            format!("Question: {question}\nCorrect answer: {gold}")
        }
        _ => format!("Task: {}\nCorrect answer: {gold}", spec.task_id),
    };
    Ok(format!(
        "You are given {media} ({data_ref}) and the correct answer for it.\n\
         {answer_line}\n\n\
         Write a short reasoning chain in two parts.\n\
         First, describe only the objective content of the data: people, facial \
         expressions, body language, actions, objects, text and the overall scene. \
         Do not state the answer yet.\n\
         Then, starting from that description, explain step by step why the correct \
         answer is {gold}, and finish by stating the answer.\n\n\
         Reply with exactly two sections:\n\
         Observation: <objective description>\n\
         Inference: <reasoning that ends with the answer>\n"
    ))
}

fn heading(line: &str) -> Option<(&'static str, &str)> {
    let trimmed = line.trim_start_matches(|c: char| c.is_whitespace() || c == '#' || c == '*');
    for name in ["observation", "inference"] {
        if trimmed.len() >= name.len() && trimmed[..name.len()].eq_ignore_ascii_case(name) {
            let rest = trimmed[name.len()..].trim_start_matches('*');
            if let Some(body) = rest.strip_prefix(':') {
                return Some((name, body.trim_start_matches('*')));
            }
        }
    }
    None
}

/// Splits a reply into its observation and inference sections.
pub fn parse_response(raw: &str) -> Result<(String, String)> {
    let mut observation: Option<Vec<&str>> = None;
    let mut inference: Option<Vec<&str>> = None;
    for line in raw.lines() {
        match heading(line) {
            Some(("observation", body)) => {
                if observation.is_some() || inference.is_some() {
                    return Err(Error::UnparseableResponse(
                        "observation section repeated or after inference".into(),
                    ));
                }
                observation = Some(vec![body]);
            }
            Some((_, body)) => {
                if observation.is_none() {
                    return Err(Error::UnparseableResponse(
                        "inference section precedes observation".into(),
                    ));
                }
                if inference.is_some() {
                    return Err(Error::UnparseableResponse(
                        "inference section repeated".into(),
                    ));
                }
                inference = Some(vec![body]);
            }
            None => {
                if let Some(section) = inference.as_mut().or(observation.as_mut()) {
                    section.push(line);
                }
            }
        }
    }
    let join = |s: Option<Vec<&str>>, name: &str| -> Result<String> {
        let text = s
            .ok_or_else(|| Error::UnparseableResponse(format!("missing {name} section")))?
            .join("\n")
            .trim()
            .to_owned();
        if text.is_empty() {
            return Err(Error::UnparseableResponse(format!("empty {name} section")));
        }
        Ok(text)
    };
    Ok((
        join(observation, "observation")?,
        join(inference, "inference")?,
    ))
}

/// Parses a reply into an exemplar, verified iff the inference names `gold`.
pub fn ingest_exemplar(
    raw: &str,
    data_ref: &str,
    gold: &str,
    spec: &TaskSpec,
) -> Result<PromptExemplar> {
    let label = spec
        .canonical_label(gold)
        .ok_or_else(|| {
            Error::Parameter(format!(
                "gold label '{gold}' not in the label set of '{}'",
                spec.task_id
            ))
        })?
        .to_owned();
    let (observation, inference) = parse_response(raw)?;
    let verified = contains_phrase(&inference, &label);
    Ok(PromptExemplar {
        task_id: spec.task_id.clone(),
        data_ref: data_ref.to_owned(),
        observation,
        inference,
        label,
        verified,
    })
}

/// Exemplars grouped by task, in ingestion order.
#[derive(Debug, Clone, Default)]
pub struct ExemplarStore {
    by_task: BTreeMap<String, Vec<PromptExemplar>>,
    path: Option<PathBuf>,
}

impl PartialEq for ExemplarStore {
    fn eq(&self, other: &Self) -> bool {
        self.by_task == other.by_task
    }
}

impl ExemplarStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_path(path: impl Into<PathBuf>) -> Self {
        Self {
            by_task: BTreeMap::new(),
            path: Some(path.into()),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn insert(&mut self, exemplar: PromptExemplar) {
        self.by_task
            .entry(exemplar.task_id.clone())
            .or_default()
            .push(exemplar);
    }

    pub fn all(&self, task_id: &str) -> &[PromptExemplar] {
        self.by_task.get(task_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn verified(&self, task_id: &str) -> Vec<&PromptExemplar> {
        self.all(task_id).iter().filter(|e| e.verified).collect()
    }

    pub fn len(&self) -> usize {
        self.by_task.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tasks(&self) -> impl Iterator<Item = &str> {
        self.by_task.keys().map(String::as_str)
    }

    /// Verified exemplars still needed to reach `target` for a task.
    pub fn shortfall(&self, task_id: &str, target: usize) -> usize {
        target.saturating_sub(self.verified(task_id).len())
    }

    /// Uniform choice among the verified exemplars of a task, fixed by `seed`.
    pub fn select(&self, task_id: &str, seed: u64) -> Result<&PromptExemplar> {
        self.select_with(task_id, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn select_with<R: Rng + ?Sized>(
        &self,
        task_id: &str,
        rng: &mut R,
    ) -> Result<&PromptExemplar> {
        let pool = self.verified(task_id);
        if pool.is_empty() {
            return Err(Error::EmptyPool(task_id.to_owned()));
        }
        Ok(pool[rng.gen_range(0..pool.len())])
    }

    /// Writes one exemplar per line, tasks in name order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let all: Vec<&PromptExemplar> = self.by_task.values().flatten().collect();
        write_jsonl(&all, path)
    }

    pub fn save_to_own_path(&self) -> Result<()> {
        let path = self
            .path
            .as_ref()
            .ok_or_else(|| Error::Config("exemplar store has no path".into()))?;
        self.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut store = Self::with_path(path);
        for exemplar in read_jsonl::<PromptExemplar>(path)? {
            store.insert(exemplar);
        }
        Ok(store)
    }

    /// Loads `path` if it exists, otherwise starts empty.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::with_path(path))
        }
    }
}

pub const PROMPT_LEAD: &str = "Here is a worked example for this task.";
pub const PROMPT_INSTRUCTION: &str = "Now answer the question below the same way: first describe \
the objective content of the data, then reason about the task from what you observed.";

/// Exemplar observation, exemplar inference, then the query question.
pub fn assemble_prompt(query: &InstructionRecord, exemplar: &PromptExemplar) -> Result<String> {
    if query.task != exemplar.task_id {
        return Err(Error::TaskMismatch {
            expected: query.task.clone(),
            found: exemplar.task_id.clone(),
        });
    }
    if !exemplar.verified {
        return Err(Error::Parameter(format!(
            "exemplar for {} is not verified",
            exemplar.data_ref
        )));
    }
    let residual = residual_placeholders(&query.question);
    if !residual.is_empty() {
        return Err(Error::UnknownPlaceholder(residual));
    }
    Ok(format!(
        "{PROMPT_LEAD}\nObservation: {}\nInference: {}\n\n{PROMPT_INSTRUCTION}\n{}",
        exemplar.observation, exemplar.inference, query.question
    ))
}

/// Assembled prompt in record form, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub task: String,
    pub data_ref: String,
    pub prompt: String,
    pub answer: String,
}

/// Text in, text out interface to the external exemplar generator.
pub trait ExemplarClient {
    fn complete(&self, request: &str, timeout: Duration) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientPolicy {
    pub timeout: Duration,
    pub retries: u32,
}

impl Default for ClientPolicy {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            retries: 2,
        }
    }
}

/// Requests an exemplar, retrying on client failures and unparseable replies.
pub fn generate_exemplar<C: ExemplarClient + ?Sized>(
    client: &C,
    policy: ClientPolicy,
    data_ref: &str,
    gold: &str,
    spec: &TaskSpec,
) -> Result<PromptExemplar> {
    let request = build_generation_request(data_ref, gold, spec)?;
    let mut last = None;
    for _ in 0..=policy.retries {
        match client
            .complete(&request, policy.timeout)
            .and_then(|reply| ingest_exemplar(&reply, data_ref, gold, spec))
        {
            Ok(exemplar) => return Ok(exemplar),
            Err(e @ (Error::Client(_) | Error::UnparseableResponse(_))) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Client("no attempts made".into())))
}
