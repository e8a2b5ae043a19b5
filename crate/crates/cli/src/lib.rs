//! Command implementations for the `progsynth` binary and the HTTP server.

use anyhow::{anyhow, Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use progsynth::datagen::{build_dataset, Dataset, GenConfig};
use progsynth::dsl::parse_text;
use progsynth::harness::api::ApiState;
use progsynth::harness::{
    export_latents, file_hash, ground_truth_programs, interpolation_csv, run_generalize, run_interpolate,
    run_reconstruct, run_solve, run_unseen_config, Corpus, ExperimentConfig, ResultTable, RunManifest,
    GENERALIZE_TASKS,
};
use progsynth::model::{load_checkpoint, save_checkpoint, train, LogRow, Model, TrainConfig};
use progsynth::{Program, TaskKind};

#[derive(Parser, Debug)]
#[command(name = "progsynth", version, about = "Latent-space program synthesis for Karel")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON object or `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override one config field, e.g. `--set cem.sigma=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a program dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Start from the full-size split configuration.
        #[arg(long)]
        full: bool,
    },
    /// Train the embedding model on a dataset directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Start from the full-size model configuration.
        #[arg(long)]
        full: bool,
    },
    /// Search for the four reference programs' behavior.
    Reconstruct(ExperimentArgs),
    /// Search for programs that solve the Karel tasks.
    Solve(ExperimentArgs),
    /// Score programs on default-size and enlarged grids.
    Generalize {
        #[command(flatten)]
        common: Common,
        /// Results CSV from `solve`; ground-truth programs when omitted.
        #[arg(long)]
        programs: Option<PathBuf>,
    },
    /// Search on a fraction of the task configurations.
    UnseenConfig(ExperimentArgs),
    /// Decode points on the segment between two programs' latents.
    Interpolate {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Corpus name or program text.
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
    /// Write latent means of a dataset split as CSV.
    ExportLatents {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn set_path(root: &mut Value, key: &str, raw: &str) {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        if !cur.is_object() {
            *cur = json!({});
        }
        let obj = cur.as_object_mut().expect("just made an object");
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), value);
            return;
        }
        cur = obj.entry(p.to_string()).or_insert(json!({}));
    }
}

/// Parses a config file: a JSON object, or `key = value` lines where values
/// are JSON when they parse as such and strings otherwise.
pub fn parse_config_text(text: &str) -> Result<Value> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).context("config is not valid JSON");
    }
    let mut v = json!({});
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, val) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key = value", n + 1))?;
        set_path(&mut v, k.trim(), val.trim());
    }
    Ok(v)
}

/// Defaults, then the config file, then `--set` overrides, then `--seed`.
pub fn load_config<T>(base: T, common: &Common) -> Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut v = serde_json::to_value(base)?;
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        merge(&mut v, parse_config_text(&text)?);
    }
    for s in &common.sets {
        let (k, val) = s.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {s}"))?;
        set_path(&mut v, k.trim(), val.trim());
    }
    if let Some(seed) = common.seed {
        set_path(&mut v, "seed", &seed.to_string());
    }
    serde_json::from_value(v).context("invalid configuration")
}

fn write(dir: &Path, name: &str, contents: &str, outputs: &mut Vec<String>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents).with_context(|| format!("writing {name}"))?;
    outputs.push(name.to_string());
    Ok(())
}

fn write_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(m)? + "\n")?;
    Ok(())
}

fn load_model(path: Option<&Path>) -> Result<(Model, Option<String>)> {
    let path = path.ok_or_else(|| anyhow!("a checkpoint is required (--checkpoint or `checkpoint` in the config)"))?;
    let (model, _) = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok((model, Some(file_hash(path)?)))
}

fn experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = load_config(ExperimentConfig::default(), &args.common)?;
    if let Some(c) = &args.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if let Some(o) = &args.common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn resolve_program(arg: &str) -> Result<Program> {
    if let Ok(p) = Corpus::builtin().get(arg) {
        return Ok(p.clone());
    }
    parse_text(arg).map_err(|e| anyhow!("`{arg}` is neither a corpus name nor a program: {e}"))
}

fn finish_table(
    command: &str,
    cfg: &ExperimentConfig,
    hash: Option<String>,
    table: &ResultTable,
    extra: Value,
    t0: Instant,
) -> Result<()> {
    let mut outputs = Vec::new();
    write(&cfg.out_dir, "results.csv", &table.to_csv(), &mut outputs)?;
    write(&cfg.out_dir, "summary.csv", &table.summary_csv(), &mut outputs)?;
    let mut summary = json!({ "table": table.summary() });
    merge(&mut summary, extra);
    write_manifest(
        &cfg.out_dir,
        &RunManifest {
            command: command.into(),
            seed: cfg.seed,
            config: serde_json::to_value(cfg)?,
            checkpoint_sha256: hash,
            outputs,
            summary,
            seconds: t0.elapsed().as_secs_f64(),
        },
    )?;
    print!("{}", table.summary_csv());
    Ok(())
}

/// Programs listed in a results CSV, keyed by task name in `target`.
pub fn read_result_programs(path: &Path) -> Result<Vec<(TaskKind, String, Program)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("{} has no `{name}` column", path.display()))
    };
    let (m, t, s, p) = (col("method")?, col("target")?, col("seed")?, col("program")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let task: TaskKind = rec[t].parse()?;
        let program = parse_text(&rec[p]).map_err(|e| anyhow!("row program: {e}"))?;
        out.push((task, format!("{}-seed{}", &rec[m], &rec[s]), program));
    }
    Ok(out)
}

pub fn run(cli: Cli) -> Result<()> {
    let t0 = Instant::now();
    match cli.command {
        Command::GenData { common, full } => {
            let base = if full { GenConfig::full() } else { GenConfig::default() };
            let mut v = serde_json::to_value(&base)?;
            set_path(&mut v, "seed", "0");
            let mut wrapped: Value = load_config(v, &common)?;
            let seed = wrapped
                .as_object_mut()
                .and_then(|o| o.remove("seed"))
                .and_then(|s| s.as_u64())
                .unwrap_or(0);
            let cfg: GenConfig = serde_json::from_value(wrapped)?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("data"));
            let (ds, mut manifest) = build_dataset(&cfg, seed)?;
            ds.save(&out, &mut manifest)?;
            println!(
                "wrote {} train / {} val / {} test programs to {}",
                ds.train.len(),
                ds.val.len(),
                ds.test.len(),
                out.display()
            );
        }
        Command::Train { common, data, full } => {
            let base = if full { TrainConfig::full() } else { TrainConfig::desk() };
            let cfg: TrainConfig = load_config(base, &common)?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("run"));
            let (ds, _) = Dataset::load(&data).with_context(|| format!("loading dataset {}", data.display()))?;
            fs::create_dir_all(&out)?;
            let mut log = String::from(LogRow::CSV_HEADER);
            log.push('\n');
            let series = out.join("checkpoints");
            fs::create_dir_all(&series)?;
            let mut io_err = None;
            let res = train(&cfg, &ds.train, &ds.val, |r, model| {
                eprintln!("{}", r.to_csv());
                log.push_str(&r.to_csv());
                log.push('\n');
                let snap = series.join(format!("r{}-{}.bin", r.round, r.phase));
                let written = fs::write(out.join("train_log.csv"), &log)
                    .map_err(anyhow::Error::from)
                    .and_then(|_| Ok(save_checkpoint(&snap, model, &cfg.hash(), json!({ "round": r.round, "phase": r.phase }))?));
                if let Err(e) = written {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(e.context("writing training outputs"));
            }
            let extra = json!({ "best_round": res.best_round, "best_phase": res.best_phase, "metrics": res.best_metrics });
            save_checkpoint(&out.join("checkpoint.bin"), &res.best, &cfg.hash(), extra.clone())?;
            save_checkpoint(&out.join("last.bin"), &res.last, &cfg.hash(), json!({}))?;
            write_manifest(
                &out,
                &RunManifest {
                    command: "train".into(),
                    seed: cfg.seed,
                    config: serde_json::to_value(&cfg)?,
                    checkpoint_sha256: Some(file_hash(&out.join("checkpoint.bin"))?),
                    outputs: vec![
                        "checkpoint.bin".into(),
                        "last.bin".into(),
                        "train_log.csv".into(),
                        "checkpoints/".into(),
                    ],
                    summary: extra,
                    seconds: t0.elapsed().as_secs_f64(),
                },
            )?;
            println!("best round {} ({}): {:?}", res.best_round, res.best_phase, res.best_metrics);
        }
        Command::Reconstruct(args) => {
            let cfg = experiment_config(&args)?;
            let (model, hash) = load_model(cfg.checkpoint.as_deref())?;
            let table = run_reconstruct(&model, &cfg)?;
            finish_table("reconstruct", &cfg, hash, &table, json!({}), t0)?;
        }
        Command::Solve(args) => {
            let cfg = experiment_config(&args)?;
            let (model, hash) = load_model(cfg.checkpoint.as_deref())?;
            let table = run_solve(&model, &cfg)?;
            finish_table("solve", &cfg, hash, &table, json!({}), t0)?;
        }
        Command::Generalize { common, programs } => {
            let cfg = experiment_config(&ExperimentArgs { common, checkpoint: None })?;
            let progs = match programs {
                Some(p) => read_result_programs(&p)?,
                None => {
                    let tasks: Vec<TaskKind> =
                        GENERALIZE_TASKS.iter().copied().filter(|t| cfg.tasks.contains(t)).collect();
                    ground_truth_programs(&tasks)?
                }
            };
            let table = run_generalize(&progs, &cfg)?;
            finish_table("generalize", &cfg, None, &table, json!({}), t0)?;
        }
        Command::UnseenConfig(args) => {
            let cfg = experiment_config(&args)?;
            let (model, hash) = load_model(cfg.checkpoint.as_deref())?;
            let (table, sums) = run_unseen_config(&model, &cfg)?;
            let mut csv = String::from("fraction,mean,std,pct_change\n");
            for s in &sums {
                csv.push_str(&format!("{},{:.4},{:.4},{:.2}\n", s.fraction, s.mean, s.std, s.pct_change));
            }
            let mut outputs = Vec::new();
            write(&cfg.out_dir, "unseen.csv", &csv, &mut outputs)?;
            finish_table("unseen-config", &cfg, hash, &table, json!({ "fractions": sums }), t0)?;
            print!("{csv}");
        }
        Command::Interpolate { exp, a, b } => {
            let cfg = experiment_config(&exp)?;
            let (model, hash) = load_model(cfg.checkpoint.as_deref())?;
            let (pa, pb) = (resolve_program(&a)?, resolve_program(&b)?);
            let rows = run_interpolate(&model, &pa, &pb, cfg.steps);
            let csv = interpolation_csv(&rows);
            let mut outputs = Vec::new();
            write(&cfg.out_dir, "interpolation.csv", &csv, &mut outputs)?;
            write_manifest(
                &cfg.out_dir,
                &RunManifest {
                    command: "interpolate".into(),
                    seed: cfg.seed,
                    config: serde_json::to_value(&cfg)?,
                    checkpoint_sha256: hash,
                    outputs,
                    summary: json!({ "a": pa.to_text(), "b": pb.to_text() }),
                    seconds: t0.elapsed().as_secs_f64(),
                },
            )?;
            print!("{csv}");
        }
        Command::ExportLatents { exp, data } => {
            let cfg = experiment_config(&exp)?;
            let (model, hash) = load_model(cfg.checkpoint.as_deref())?;
            let dir = data
                .or_else(|| cfg.dataset.clone())
                .ok_or_else(|| anyhow!("a dataset directory is required (--data)"))?;
            let (ds, _) = Dataset::load(&dir)?;
            let records = ds.split(cfg.split);
            let mut outputs = Vec::new();
            write(&cfg.out_dir, "latents.csv", &export_latents(&model, records), &mut outputs)?;
            write_manifest(
                &cfg.out_dir,
                &RunManifest {
                    command: "export-latents".into(),
                    seed: cfg.seed,
                    config: serde_json::to_value(&cfg)?,
                    checkpoint_sha256: hash,
                    outputs,
                    summary: json!({ "rows": records.len(), "dim": model.latent_dim() }),
                    seconds: t0.elapsed().as_secs_f64(),
                },
            )?;
            println!("wrote {} latent rows", records.len());
        }
        Command::Serve { checkpoint, host, port } => {
            let model = match checkpoint {
                Some(p) => Some(load_model(Some(&p))?.0),
                None => None,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(Arc::new(ApiState::new(model)), &format!("{host}:{port}")))?;
        }
    }
    Ok(())
}

pub fn router(api: Arc<ApiState>) -> Router {
    Router::new().fallback(dispatch).with_state(api)
}

async fn dispatch(State(api): State<Arc<ApiState>>, method: Method, uri: Uri, body: Bytes) -> Response {
    let cors = [
        (header::ACCESS_CONTROL_ALLOW_ORIGIN, "*"),
        (header::ACCESS_CONTROL_ALLOW_HEADERS, "content-type"),
        (header::ACCESS_CONTROL_ALLOW_METHODS, "GET, POST, OPTIONS"),
    ];
    if method == Method::OPTIONS {
        return (StatusCode::NO_CONTENT, cors).into_response();
    }
    let path = uri.path().to_string();
    let result = tokio::task::spawn_blocking(move || api.handle(method.as_str(), &path, &body)).await;
    match result {
        Ok(r) => {
            let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, cors, [(header::CONTENT_TYPE, "application/json")], r.body.to_string()).into_response()
        }
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, cors, format!("{{\"error\":\"{e}\"}}")).into_response(),
    }
}

pub async fn serve(api: Arc<ApiState>, addr: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(api)).await?;
    Ok(())
}
