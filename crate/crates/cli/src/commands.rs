use std::fs;
use std::path::{Path, PathBuf};

use emoproj::density_peaks::{cluster_tokens, KnnConfig};
use emoproj::emoprompt_store::{
    assemble_prompt, build_generation_request, ingest_exemplar, ExemplarRequest, ExemplarStore,
    PromptRecord,
};
use emoproj::eval_harness::{aggregate, render_table, score_predictions, Lexicon, PredictionRow};
use emoproj::instruction_builder::{
    build_records, builtin_tasks, find_task, read_jsonl, read_manifest, read_tasks, write_jsonl,
    InstructionRecord, TaskSpec,
};
use emoproj::projection_pipeline::{
    expand_video, init_params, load_params, project_image, save_params, ProjectionConfig,
    ProjectionParams,
};
use emoproj::token_model::{read_token_file, read_video, write_atomic, write_token_file};
use emoproj::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::*;

pub const OUT_DIR_ENV: &str = "EMOPROJ_OUT_DIR";

pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let seed = cli.seed;
    pool.install(|| match cli.command {
        Command::InitParams(a) => init(a, seed),
        Command::Cluster(a) => cluster(a),
        Command::ProjectImage(a) => image(a),
        Command::ProjectVideo(a) => video(a),
        Command::BuildInstructions(a) => instructions(a, seed),
        Command::ExemplarRequest(a) => requests(a),
        Command::ExemplarIngest(a) => ingest(a),
        Command::AssemblePrompt(a) => prompts(a, seed),
        Command::Score(a) => score(a),
        Command::SweepTau(a) => sweep(a),
    })
}

/// Where an output actually goes: unchanged, or moved under `$EMOPROJ_OUT_DIR`
/// keeping its last path component.
fn out_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => match path.file_name() {
            Some(name) => PathBuf::from(dir).join(name),
            None => PathBuf::from(dir),
        },
        _ => path.to_path_buf(),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(format!("serializing {}: {e}", path.display())))?;
    ensure_parent(path)?;
    write_atomic(path, format!("{text}\n").as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn params_with(path: &Path, o: &Overrides) -> Result<ProjectionParams> {
    load_params(path)?.with_overrides(o.tau, o.alpha, o.stages.map(|s| s.0))
}

fn task_catalog(path: Option<&Path>) -> Result<Vec<TaskSpec>> {
    match path {
        Some(p) => read_tasks(p),
        None => Ok(builtin_tasks()),
    }
}

fn init(a: InitParamsArgs, seed: u64) -> Result<()> {
    let mut config: ProjectionConfig = match &a.model {
        Some(p) => read_json(p)?,
        None => ProjectionConfig::default(),
    };
    if let Some(d) = a.d_in {
        config.d_in = d;
    }
    if let Some(d) = a.d_h {
        config.d_h = d;
    }
    if a.no_audio {
        config.audio = None;
    }
    config.validate()?;
    let params = init_params(&config, seed)?.with_overrides(
        a.overrides.tau,
        a.overrides.alpha,
        a.overrides.stages.map(|s| s.0),
    )?;
    let manifest = save_params(&params, out_path(&a.out))?;
    println!("{}", manifest.display());
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let cfg = KnnConfig::new(a.k, a.centers);
    let tokens = read_token_file(&a.input)?;
    let result = cluster_tokens(&tokens, cfg)?;
    let out = out_path(&a.out);
    ensure_parent(&out)?;
    write_token_file(&result.means, &out)?;
    if let Some(report) = &a.report {
        let report_value = json!({
            "input": a.input,
            "k": a.k,
            "centers": result.centers,
            "assignment": result.assignment,
            "rho": result.rho,
            "delta": result.delta,
        });
        write_json(&report_value, &out_path(report))?;
    }
    println!("{} centers -> {}", result.centers.len(), out.display());
    Ok(())
}

fn token_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "tok"))
        .collect();
    files.sort();
    Ok(files)
}

fn image(a: ProjectImageArgs) -> Result<()> {
    let params = params_with(&a.params, &a.overrides)?;
    let out = out_path(&a.out);
    if !a.input.is_dir() {
        let tokens = read_token_file(&a.input)?;
        let reps = project_image(&tokens, &params)?;
        ensure_parent(&out)?;
        write_token_file(&reps.fused, &out)?;
        println!("{:?} -> {}", reps.fused.shape(), out.display());
        return Ok(());
    }
    let files = token_files(&a.input)?;
    if files.is_empty() {
        return Err(Error::Parameter(format!(
            "no .tok files in {}",
            a.input.display()
        )));
    }
    ensure_dir(&out)?;
    let outputs = files
        .par_iter()
        .map(|f| {
            let fused = project_image(&read_token_file(f)?, &params)?.fused;
            let target = out.join(f.file_name().expect("listed files have names"));
            write_token_file(&fused, &target)?;
            Ok(target)
        })
        .collect::<Result<Vec<_>>>()?;
    println!("{} images -> {}", outputs.len(), out.display());
    Ok(())
}

fn video(a: ProjectVideoArgs) -> Result<()> {
    let params = params_with(&a.params, &a.overrides)?;
    let frames = read_video(&a.input)?;
    // same composition as project_video, keeping the partition for --events
    let (partition, tokens) = expand_video(&frames, &params)?;
    let reps = project_image(&tokens, &params)?;
    let out = out_path(&a.out);
    ensure_parent(&out)?;
    write_token_file(&reps.fused, &out)?;
    if let Some(events) = &a.events {
        write_json(&json!({ "events": partition.events() }), &out_path(events))?;
    }
    println!(
        "{} frames {:?} -> {}",
        frames.frame_count(),
        reps.fused.shape(),
        out.display()
    );
    Ok(())
}

fn instructions(a: TaskInputArgs, seed: u64) -> Result<()> {
    let tasks = task_catalog(a.task.tasks.as_deref())?;
    let spec = find_task(&tasks, &a.task.task)?;
    let manifest = read_manifest(&a.manifest)?;
    let records = build_records(&manifest, spec, seed)?;
    let out = out_path(&a.out);
    ensure_parent(&out)?;
    write_jsonl(&records, &out)?;
    println!("{} records -> {}", records.len(), out.display());
    Ok(())
}

fn requests(a: TaskInputArgs) -> Result<()> {
    let tasks = task_catalog(a.task.tasks.as_deref())?;
    let spec = find_task(&tasks, &a.task.task)?;
    let manifest = read_manifest(&a.manifest)?;
    let requests = manifest
        .iter()
        .map(|row| {
            Ok(ExemplarRequest {
                task: spec.task_id.clone(),
                data_ref: row.data_ref.clone(),
                gold: row.label.clone(),
                request: build_generation_request(&row.data_ref, &row.label, spec)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = out_path(&a.out);
    ensure_parent(&out)?;
    write_jsonl(&requests, &out)?;
    println!("{} requests -> {}", requests.len(), out.display());
    Ok(())
}

/// One generated reply, as collected offline for a request.
#[derive(Debug, Deserialize)]
struct ExemplarResponse {
    task: String,
    data_ref: String,
    gold: String,
    response: String,
}

fn ingest(a: ExemplarIngestArgs) -> Result<()> {
    let tasks = task_catalog(a.tasks.as_deref())?;
    let replies: Vec<ExemplarResponse> = read_jsonl(&a.responses)?;
    let mut parsed = Vec::with_capacity(replies.len());
    let mut failures = Vec::new();
    for (i, r) in replies.iter().enumerate() {
        let outcome = find_task(&tasks, &r.task)
            .and_then(|spec| ingest_exemplar(&r.response, &r.data_ref, &r.gold, spec));
        match outcome {
            Ok(e) => parsed.push(e),
            Err(e @ Error::UnparseableResponse(_)) => failures.push(format!("line {}: {e}", i + 1)),
            Err(e) => return Err(e),
        }
    }
    if !failures.is_empty() {
        return Err(Error::UnparseableResponse(failures.join("; ")));
    }
    let store_path = out_path(&a.store);
    let mut store = ExemplarStore::open(&store_path)?;
    let verified = parsed.iter().filter(|e| e.verified).count();
    let added = parsed.len();
    for e in parsed {
        store.insert(e);
    }
    ensure_parent(&store_path)?;
    store.save_to_own_path()?;
    println!(
        "ingested {added} ({verified} verified) -> {}",
        store_path.display()
    );
    for task in store.tasks() {
        println!(
            "  {task}: {} verified, {} short of {}",
            store.verified(task).len(),
            store.shortfall(task, a.target),
            a.target
        );
    }
    Ok(())
}

fn prompts(a: AssemblePromptArgs, seed: u64) -> Result<()> {
    let store = ExemplarStore::load(&a.store)?;
    let queries: Vec<InstructionRecord> = read_jsonl(&a.instructions)?;
    // one stream, consumed in input order
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = queries
        .iter()
        .map(|q| {
            let exemplar = store.select_with(&q.task, &mut rng)?;
            Ok(PromptRecord {
                task: q.task.clone(),
                data_ref: q.data_ref.clone(),
                prompt: assemble_prompt(q, exemplar)?,
                answer: q.answer.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = out_path(&a.out);
    ensure_parent(&out)?;
    write_jsonl(&records, &out)?;
    println!("{} prompts -> {}", records.len(), out.display());
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let tasks = task_catalog(a.tasks.as_deref())?;
    let lexicon = match &a.lexicon {
        Some(p) => Lexicon::new(read_json(p)?),
        None => Lexicon::default_emotions(),
    };
    let gold: Vec<InstructionRecord> = read_jsonl(&a.gold)?;
    let preds: Vec<PredictionRow> = read_jsonl(&a.pred)?;
    let run = score_predictions(&gold, &preds, &tasks, &lexicon)?;
    let metrics = aggregate(&run.records)?;
    let table = render_table(&metrics);
    let report = json!({
        "metrics": metrics,
        "missing": run.missing,
        "unmatched": run.unmatched,
        "records": run.records,
    });
    write_json(&report, &out_path(&a.out))?;
    if let Some(t) = &a.table {
        let t = out_path(t);
        ensure_parent(&t)?;
        write_atomic(&t, table.as_bytes())?;
    }
    print!("{table}");
    if run.missing > 0 || run.unmatched > 0 {
        eprintln!(
            "{} gold items without prediction, {} predictions without gold",
            run.missing, run.unmatched
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRun {
    tau: f64,
    output: String,
    rows: usize,
    cols: usize,
}

fn sweep(a: SweepTauArgs) -> Result<()> {
    if a.values.is_empty() {
        return Err(Error::Parameter("no τ values given".into()));
    }
    let base = load_params(&a.params)?;
    let variants = a
        .values
        .iter()
        .map(|&tau| {
            base.clone()
                .with_overrides(Some(tau), a.alpha, a.stages.map(|s| s.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let tokens = read_token_file(&a.input)?;
    let dir = out_path(&a.out_dir);
    ensure_dir(&dir)?;
    let mut runs = Vec::with_capacity(variants.len());
    for (tau, params) in a.values.iter().zip(&variants) {
        let fused = project_image(&tokens, params)?.fused;
        let name = format!("tau_{tau}.tok");
        write_token_file(&fused, dir.join(&name))?;
        runs.push(SweepRun {
            tau: *tau,
            output: name,
            rows: fused.rows(),
            cols: fused.cols(),
        });
    }
    let manifest = json!({
        "input": a.input,
        "params": a.params,
        "alpha": variants[0].config.alpha,
        "runs": runs,
    });
    write_json(&manifest, &dir.join("sweep.json"))?;
    println!("{} runs -> {}", runs.len(), dir.display());
    Ok(())
}
