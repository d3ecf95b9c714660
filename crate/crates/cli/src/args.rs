use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use emoproj::projection_pipeline::{StageConfig, STAGE_COUNT};
use emoproj::{Error, Result};

/// τ values swept when `--values` is not given.
pub const DEFAULT_SWEEP: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Parser, Debug)]
#[command(
    name = "emoproj",
    version,
    about = "Token clustering, graph projection and instruction tooling"
)]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (0 = one per core). Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// JSON object whose keys name long flags of the subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw projection parameters from --seed and save them with a manifest.
    InitParams(InitParamsArgs),
    /// DPC-KNN on one token file; writes the cluster means.
    Cluster(ClusterArgs),
    /// Project one token file, or every .tok file of a directory.
    ProjectImage(ProjectImageArgs),
    /// Event-cluster a video and project the expanded tokens.
    ProjectVideo(ProjectVideoArgs),
    /// Turn a labelled manifest into instruction records.
    BuildInstructions(TaskInputArgs),
    /// Write exemplar-generation requests for a labelled manifest.
    ExemplarRequest(TaskInputArgs),
    /// Parse generated replies and add them to an exemplar store.
    ExemplarIngest(ExemplarIngestArgs),
    /// Prefix each instruction with a verified exemplar.
    AssemblePrompt(AssemblePromptArgs),
    /// Score predictions against instruction records.
    Score(ScoreArgs),
    /// Project one input once per τ value.
    SweepTau(SweepTauArgs),
}

/// Overrides applied on top of a parameter manifest, validated before any
/// input is read.
#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Adjacency threshold in [0, 1].
    #[arg(long)]
    pub tau: Option<f64>,

    /// Weight of the content path in the fused output.
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Three stages as `C:K` (or bare `C`, K = 5), comma separated.
    #[arg(long, value_parser = parse_stages)]
    pub stages: Option<StageList>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageList(pub [StageConfig; STAGE_COUNT]);

pub fn parse_stages(text: &str) -> std::result::Result<StageList, String> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != STAGE_COUNT {
        return Err(format!(
            "expected {STAGE_COUNT} stages, got {}",
            parts.len()
        ));
    }
    let mut stages = [StageConfig {
        center_count: 1,
        k: 1,
    }; STAGE_COUNT];
    for (slot, part) in stages.iter_mut().zip(parts) {
        let (c, k) = part.split_once(':').unwrap_or((part, "5"));
        slot.center_count = c
            .trim()
            .parse()
            .map_err(|_| format!("bad center count '{c}'"))?;
        slot.k = k
            .trim()
            .parse()
            .map_err(|_| format!("bad neighbour count '{k}'"))?;
    }
    Ok(StageList(stages))
}

#[derive(Args, Debug)]
pub struct InitParamsArgs {
    /// Projection config (JSON); missing fields take defaults.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub d_in: Option<usize>,
    #[arg(long)]
    pub d_h: Option<usize>,
    /// Skip the audio MLP.
    #[arg(long)]
    pub no_audio: bool,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Output directory for the manifest and tensors.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Neighbours used for the density estimate.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Number of cluster centers.
    #[arg(long)]
    pub centers: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write ρ, δ, centers and assignment as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProjectImageArgs {
    /// Token file, or a directory of `.tok` files.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Parameter manifest (or its directory).
    #[arg(long)]
    pub params: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Output file, or output directory in batch mode.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProjectVideoArgs {
    /// Directory of `frame_*` files or one `[M, L, d]` file.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the event partition as JSON.
    #[arg(long)]
    pub events: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TaskSelection {
    /// Task id, e.g. emo-c, emo-o, intention, hate, humor, sarcasm.
    #[arg(long)]
    pub task: String,
    /// Task catalog (JSON list) replacing the bundled one.
    #[arg(long)]
    pub tasks: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TaskInputArgs {
    /// CSV with a data_ref,label,split header, or JSON lines.
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub task: TaskSelection,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExemplarIngestArgs {
    /// JSON lines with task, data_ref, gold and response fields.
    #[arg(long)]
    pub responses: PathBuf,
    /// Store file; created when missing.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Verified pool size reported as the goal per task.
    #[arg(long, default_value_t = emoproj::emoprompt_store::DEFAULT_POOL_TARGET)]
    pub target: usize,
}

#[derive(Args, Debug)]
pub struct AssemblePromptArgs {
    /// Instruction records (JSON lines).
    #[arg(long)]
    pub instructions: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Predictions (JSON lines: task, data_ref, prediction).
    #[arg(long)]
    pub pred: PathBuf,
    /// Instruction records holding the gold answers.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Label to synonyms map (JSON) for open-set tasks.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
    /// Plain-text table; printed to stdout either way.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepTauArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    /// Comma-separated τ values.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP)]
    pub values: Vec<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = parse_stages)]
    pub stages: Option<StageList>,
    /// Directory receiving one output per τ plus sweep.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

const GLOBAL_VALUE_FLAGS: [&str; 3] = ["--seed", "--threads", "--config"];

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn subcommand_index(argv: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let s = argv[i].to_string_lossy();
        if GLOBAL_VALUE_FLAGS.contains(&s.as_ref()) {
            i += 2;
            continue;
        }
        if !s.starts_with('-') {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn given_on_command_line(argv: &[OsString], flag: &str) -> bool {
    let eq = format!("{flag}=");
    argv.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&eq)
    })
}

fn flag_value(key: &str, value: &serde_json::Value) -> Result<Option<String>> {
    use serde_json::Value;
    Ok(match value {
        Value::Null | Value::Bool(false) => None,
        Value::Bool(true) => Some(String::new()),
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Array(items) => Some(
            items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    Value::Number(n) => Ok(n.to_string()),
                    _ => Err(Error::Config(format!(
                        "'{key}': list items must be strings or numbers"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?
                .join(","),
        ),
        Value::Object(_) => {
            return Err(Error::Config(format!(
                "'{key}': nested objects are not flags"
            )))
        }
    })
}

/// Splices flags from the `--config` file in right after the subcommand name,
/// skipping any flag the command line already sets.
pub fn merge_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let object: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut extra = Vec::new();
    for (key, value) in &object {
        let flag = format!("--{}", key.replace('_', "-"));
        if given_on_command_line(&argv, &flag) {
            continue;
        }
        match flag_value(key, value)? {
            Some(v) if v.is_empty() => extra.push(OsString::from(flag)),
            Some(v) => extra.push(OsString::from(format!("{flag}={v}"))),
            None => {}
        }
    }
    let mut argv = argv;
    // without a subcommand clap reports the problem
    if let Some(i) = subcommand_index(&argv) {
        argv.splice(i + 1..i + 1, extra);
    }
    Ok(argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(args: &[&str]) -> Vec<OsString> {
        args.iter().map(OsString::from).collect()
    }

    #[test]
    fn stages_parse_with_and_without_k() {
        let s = parse_stages("64:5, 32,16:3").unwrap().0;
        assert_eq!(
            s.map(|c| (c.center_count, c.k)),
            [(64, 5), (32, 5), (16, 3)]
        );
        assert!(parse_stages("64,32").is_err());
        assert!(parse_stages("a,b,c").is_err());
    }

    #[test]
    fn config_flags_land_after_subcommand_and_yield_to_argv() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(
            &cfg,
            r#"{"tau": 0.3, "alpha": 2, "values": [0.1, 0.2], "no_audio": true}"#,
        )
        .unwrap();
        let cfg_s = cfg.to_string_lossy().into_owned();
        let merged = merge_config(os(&[
            "emoproj",
            "--seed",
            "4",
            "--config",
            &cfg_s,
            "sweep-tau",
            "--tau",
            "0.5",
        ]))
        .unwrap();
        let merged: Vec<String> = merged
            .iter()
            .map(|s| s.to_string_lossy().into_owned())
            .collect();
        let at = merged.iter().position(|s| s == "sweep-tau").unwrap();
        assert!(merged[at + 1..].contains(&"--alpha=2".to_owned()));
        assert!(merged.contains(&"--values=0.1,0.2".to_owned()));
        assert!(merged.contains(&"--no-audio".to_owned()));
        assert!(!merged.iter().any(|s| s.starts_with("--tau=")));
    }
}
