//! Benchmark instruction records built from a dataset manifest.
//!
//! A question template is a base stem plus placeholders:
//! `[LABEL_SET]` becomes the task's label list and `<DATA>` marks where the
//! media sample goes. Records are emitted as JSON lines with the fields
//! `task`, `question`, `data_ref`, `answer`, `split`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};
use crate::token_model::write_atomic;

pub const LABEL_SET: &str = "[LABEL_SET]";
pub const LABEL: &str = "[LABEL]";
pub const DATA: &str = "<DATA>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Pick one label from the listed set.
    Classification,
    /// Name the category without being shown the set.
    Open,
    /// Answer Yes or No.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub kind: TaskKind,
    pub label_set: Vec<String>,
    pub question_bases: Vec<String>,
}

impl TaskSpec {
    pub fn new(
        task_id: impl Into<String>,
        kind: TaskKind,
        label_set: Vec<String>,
        question_bases: Vec<String>,
    ) -> Result<Self> {
        let spec = Self {
            task_id: task_id.into(),
            kind,
            label_set,
            question_bases,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.task_id.trim().is_empty() {
            return Err(Error::Config("task_id must not be empty".into()));
        }
        match self.kind {
            TaskKind::Binary => {
                if self.label_set != ["Yes", "No"] {
                    return Err(Error::Config(format!(
                        "binary task '{}' must have labels [Yes, No]",
                        self.task_id
                    )));
                }
            }
            _ => {
                if self.label_set.len() < 2 {
                    return Err(Error::Config(format!(
                        "task '{}' needs at least two labels",
                        self.task_id
                    )));
                }
            }
        }
        if self.question_bases.iter().any(|b| b.trim().is_empty()) {
            return Err(Error::Config(format!(
                "task '{}' has an empty question base",
                self.task_id
            )));
        }
        Ok(())
    }

    /// Canonical spelling of `label` if it belongs to the set
    /// (case-insensitive).
    pub fn canonical_label(&self, label: &str) -> Option<&str> {
        let label = label.trim();
        self.label_set
            .iter()
            .find(|l| l.eq_ignore_ascii_case(label))
            .map(String::as_str)
    }

    /// Text that replaces `[LABEL_SET]`.
    pub fn render_label_set(&self) -> String {
        match self.kind {
            TaskKind::Binary => self.label_set.join(" or "),
            _ => format!("[{}]", self.label_set.join(", ")),
        }
    }

    /// Completes a bare question base into the full question template:
    /// `base [LABEL_SET]. <DATA>` for classification,
    /// `base Please answer [LABEL_SET]. <DATA>` for binary tasks and
    /// `base <DATA>` for open-set tasks. Placeholders already present in the
    /// base are left where they are.
    pub fn question_template(&self, base: &str) -> String {
        let mut t = base.trim().to_owned();
        if !t.contains(LABEL_SET) {
            match self.kind {
                TaskKind::Classification => t.push_str(&format!(" {LABEL_SET}.")),
                TaskKind::Binary => t.push_str(&format!(" Please answer {LABEL_SET}.")),
                TaskKind::Open => {}
            }
        }
        if !t.contains(DATA) {
            t.push(' ');
            t.push_str(DATA);
        }
        t
    }
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| (*s).to_owned()).collect()
}

pub const EMOTION_LABELS: [&str; 6] = ["anger", "disgust", "fear", "joy", "sadness", "surprise"];

/// Bundled task catalog: closed- and open-set emotion, intention, and the
/// three binary application tasks.
pub fn builtin_tasks() -> Vec<TaskSpec> {
    let binary = |id: &str, what: &str| TaskSpec {
        task_id: id.into(),
        kind: TaskKind::Binary,
        label_set: strings(&["Yes", "No"]),
        question_bases: vec![
            format!("Does the given multi-modal data contain {what}?"),
            format!("Is there any {what} in the given multi-modal data?"),
        ],
    };
    vec![
        TaskSpec {
            task_id: "emo-c".into(),
            kind: TaskKind::Classification,
            label_set: strings(&EMOTION_LABELS),
            question_bases: strings(&[
                "Identify the only emotion depicted in the given image from the following options",
                "Which single emotion best describes the given data? Choose from the following options",
                "Select the emotion expressed in the given data from the following options",
            ]),
        },
        TaskSpec {
            task_id: "emo-o".into(),
            kind: TaskKind::Open,
            label_set: strings(&EMOTION_LABELS),
            question_bases: strings(&[
                "What emotion is depicted in the given data? Answer with one word.",
                "Describe the main emotion expressed in the given data in one word.",
            ]),
        },
        TaskSpec {
            task_id: "intention".into(),
            kind: TaskKind::Classification,
            label_set: strings(&[
                "complain", "praise", "apologise", "thank", "criticize", "agree", "taunt",
                "flaunt", "joke", "oppose", "comfort", "care", "inform", "advise", "arrange",
                "introduce", "leave", "prevent", "greet", "ask for help",
            ]),
            question_bases: strings(&[
                "Identify the intention of the speaker in the given data from the following options",
            ]),
        },
        binary("hate", "hateful content"),
        binary("humor", "humor"),
        binary("sarcasm", "sarcasm"),
    ]
}

pub fn find_task<'a>(tasks: &'a [TaskSpec], task_id: &str) -> Result<&'a TaskSpec> {
    tasks
        .iter()
        .find(|t| t.task_id == task_id)
        .ok_or_else(|| Error::Config(format!("unknown task '{task_id}'")))
}

/// Reads a JSON array of task specs.
pub fn read_tasks(path: impl AsRef<Path>) -> Result<Vec<TaskSpec>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tasks: Vec<TaskSpec> = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for t in &tasks {
        t.validate()?;
    }
    Ok(tasks)
}

/// Every `[UPPER_CASE]` or `<UPPER_CASE>` token in `text`.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut found = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let close = match bytes[i] {
            b'[' => b']',
            b'<' => b'>',
            _ => {
                i += 1;
                continue;
            }
        };
        let body_len = bytes[i + 1..]
            .iter()
            .take_while(|b| b.is_ascii_uppercase() || **b == b'_')
            .count();
        let end = i + 1 + body_len;
        if body_len > 0 && bytes.get(end) == Some(&close) {
            found.push(text[i..=end].to_owned());
            i = end + 1;
        } else {
            i += 1;
        }
    }
    found
}

/// Substitutes `[LABEL_SET]` and keeps `<DATA>` for media binding. Any other
/// placeholder is an error.
pub fn expand_template(base: &str, spec: &TaskSpec) -> Result<String> {
    if base.trim().is_empty() {
        return Err(Error::Parameter("empty question base".into()));
    }
    let mut unknown: Vec<String> = placeholders(base)
        .into_iter()
        .filter(|p| p != LABEL_SET && p != DATA)
        .collect();
    if !unknown.is_empty() {
        unknown.dedup();
        return Err(Error::UnknownPlaceholder(unknown));
    }
    Ok(base.replace(LABEL_SET, &spec.render_label_set()))
}

/// Media token used in place of `<DATA>`, picked from the file extension.
pub fn media_tag(data_ref: &str) -> &'static str {
    let ext = Path::new(data_ref)
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "jpg" | "jpeg" | "png" | "bmp" | "gif" | "webp" => "<image>",
        "mp4" | "avi" | "mkv" | "mov" | "webm" => "<video>",
        "wav" | "mp3" | "flac" | "ogg" => "<audio>",
        _ => "<media>",
    }
}

pub fn bind_media(question: &str, data_ref: &str) -> String {
    question.replace(DATA, media_tag(data_ref))
}

/// Residual placeholders that must never appear in an emitted question.
pub fn residual_placeholders(question: &str) -> Vec<String> {
    placeholders(question)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" | "dev" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split '{other}'"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One manifest line. `split` stays a string until validation so a bad value
/// is reported per row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub data_ref: String,
    pub label: String,
    pub split: String,
}

impl ManifestRow {
    pub fn new(data_ref: &str, label: &str, split: &str) -> Self {
        Self {
            data_ref: data_ref.into(),
            label: label.into(),
            split: split.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub task: String,
    pub question: String,
    pub data_ref: String,
    pub answer: String,
    pub split: Split,
}

/// One record per manifest row, in input order. The question base for row `i`
/// is `bases[(offset + i) % n]` with `offset` drawn from `seed`. Every invalid
/// row is reported; none are dropped.
pub fn build_records(
    manifest: &[ManifestRow],
    spec: &TaskSpec,
    seed: u64,
) -> Result<Vec<InstructionRecord>> {
    spec.validate()?;
    if spec.question_bases.is_empty() {
        return Err(Error::Config(format!(
            "task '{}' has no question bases",
            spec.task_id
        )));
    }
    let templates = spec
        .question_bases
        .iter()
        .map(|b| expand_template(&spec.question_template(b), spec))
        .collect::<Result<Vec<_>>>()?;
    let offset = ChaCha8Rng::seed_from_u64(seed).gen_range(0..templates.len());

    let mut errors = Vec::new();
    let mut records = Vec::with_capacity(manifest.len());
    for (index, row) in manifest.iter().enumerate() {
        let label = spec.canonical_label(&row.label);
        let split = row.split.parse::<Split>();
        match (label, split) {
            (Some(label), Ok(split)) if !row.data_ref.trim().is_empty() => {
                let template = &templates[(offset + index) % templates.len()];
                records.push(InstructionRecord {
                    task: spec.task_id.clone(),
                    question: bind_media(template, &row.data_ref),
                    data_ref: row.data_ref.clone(),
                    answer: label.to_owned(),
                    split,
                });
            }
            (label, split) => {
                let reason = if row.data_ref.trim().is_empty() {
                    "empty data_ref".to_owned()
                } else if label.is_none() {
                    format!(
                        "label '{}' not in the label set of '{}'",
                        row.label, spec.task_id
                    )
                } else {
                    split.err().map(|e| e.to_string()).unwrap_or_default()
                };
                errors.push(RowError { index, reason });
            }
        }
    }
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(Error::InvalidRows(errors))
    }
}

/// Reads a manifest as JSON lines (`.jsonl`/`.json`) or as CSV with a
/// `data_ref,label,split` header.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let is_json = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("jsonl") || e.eq_ignore_ascii_case("json"));
    if is_json {
        return read_jsonl(path);
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Parse(format!("{} row {i}: {e}", path.display()))))
        .collect()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Parse(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| Error::Parse(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), to_jsonl(items)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emotion() -> TaskSpec {
        builtin_tasks().into_iter().next().unwrap()
    }

    fn sarcasm() -> TaskSpec {
        find_task(&builtin_tasks(), "sarcasm").unwrap().clone()
    }

    #[test]
    fn emotion_template_lists_labels_in_order() {
        let spec = emotion();
        let q = expand_template(&spec.question_template(&spec.question_bases[0]), &spec).unwrap();
        assert_eq!(
            q,
            "Identify the only emotion depicted in the given image from the following options \
             [anger, disgust, fear, joy, sadness, surprise]. <DATA>"
        );
    }

    #[test]
    fn sarcasm_template_asks_yes_or_no() {
        let spec = sarcasm();
        let q = expand_template(&spec.question_template(&spec.question_bases[0]), &spec).unwrap();
        assert!(
            q.starts_with(
                "Does the given multi-modal data contain sarcasm? Please answer Yes or No"
            ),
            "{q}"
        );
    }

    #[test]
    fn plain_base_is_unchanged() {
        let base = "What is going on here?";
        assert_eq!(expand_template(base, &emotion()).unwrap(), base);
    }

    #[test]
    fn unknown_placeholders_are_listed() {
        match expand_template("Pick [LABEL] from [LABEL_SET] <DATA> <AUDIO>", &emotion()) {
            Err(Error::UnknownPlaceholder(p)) => assert_eq!(p, vec!["[LABEL]", "<AUDIO>"]),
            other => panic!("{other:?}"),
        }
        assert!(expand_template("  ", &emotion()).is_err());
    }

    #[test]
    fn placeholder_scanner_ignores_media_tags() {
        assert_eq!(
            placeholders("a <image> b [x] <DATA> [LABEL_SET]"),
            vec!["<DATA>", "[LABEL_SET]"]
        );
    }

    #[test]
    fn records_rotate_bases_deterministically() {
        let spec = emotion();
        let manifest = vec![
            ManifestRow::new("a.jpg", "joy", "train"),
            ManifestRow::new("b.mp4", "Fear", "val"),
            ManifestRow::new("c.png", "anger", "test"),
        ];
        let r1 = build_records(&manifest, &spec, 9).unwrap();
        let r2 = build_records(&manifest, &spec, 9).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1[1].answer, "fear");
        assert_eq!(r1[1].split, Split::Val);
        assert!(r1[1].question.ends_with("<video>"));
        let distinct: std::collections::HashSet<_> = r1.iter().map(|r| &r.question).collect();
        assert_eq!(distinct.len(), 3);
        for r in &r1 {
            assert!(residual_placeholders(&r.question).is_empty());
        }
    }

    #[test]
    fn out_of_set_label_is_reported_with_index() {
        let manifest = vec![
            ManifestRow::new("a.jpg", "joy", "train"),
            ManifestRow::new("b.jpg", "ecstatic", "train"),
            ManifestRow::new("c.jpg", "joy", "holdout"),
        ];
        match build_records(&manifest, &emotion(), 0) {
            Err(Error::InvalidRows(rows)) => {
                assert_eq!(rows.iter().map(|r| r.index).collect::<Vec<_>>(), vec![1, 2]);
                assert!(rows[0].reason.contains("ecstatic"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn task_validation() {
        assert!(TaskSpec::new("x", TaskKind::Classification, strings(&["a"]), vec![]).is_err());
        assert!(TaskSpec::new("x", TaskKind::Binary, strings(&["No", "Yes"]), vec![]).is_err());
        for t in builtin_tasks() {
            t.validate().unwrap();
        }
    }

    #[test]
    fn manifest_csv_and_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("m.csv");
        fs::write(
            &csv_path,
            "data_ref,label,split\na.jpg, joy ,train\nb.jpg,fear,test\n",
        )
        .unwrap();
        let rows = read_manifest(&csv_path).unwrap();
        assert_eq!(rows[0], ManifestRow::new("a.jpg", "joy", "train"));
        let jl = dir.path().join("m.jsonl");
        write_jsonl(&rows, &jl).unwrap();
        assert_eq!(read_manifest(&jl).unwrap(), rows);
    }
}
