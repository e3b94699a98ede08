use std::fmt::Debug;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use rdl_core::features::{analyze, FeatureConfig};
use rdl_core::flatten::flatten_target;
use rdl_core::graph::{build_graph, degree_profile, write_snapshot, DanglingPolicy, GraphOptions, HeteroGraph};
use rdl_core::ingest::{check_referential_integrity, load_csv_dataset, load_sqlite, write_csv_dataset, RelationalInstance, SCHEMA_FILE};
use rdl_core::models::Variant;
use rdl_core::sampler::{batch_rng, relations, sample, Direction, SamplerConfig, Seed};
use rdl_core::synth::{generate, SynthSpec};
use rdl_core::task::{build_task, Split, TaskSpec, TrainingTable};
use rdl_core::trainer::{evaluate, prepare, train, RunConfig};

#[derive(Parser)]
#[command(name = "rdl", version, about = "Relational deep learning over relational databases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Dataset directory (schema.json plus CSVs) or SQLite file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides every seed in the configuration and task.
    #[arg(long)]
    seed: Option<u64>,
    /// Treat dangling foreign keys as errors.
    #[arg(long)]
    strict: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset, infer semantic types and check referential integrity.
    Ingest(Common),
    /// Database, schema, graph and optional task features.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<PathBuf>,
    },
    /// Compile the relational entity graph.
    Graphify(Common),
    /// Build a training table from a task file.
    MakeTask {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: PathBuf,
    },
    /// Dump one sampled subgraph.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<PathBuf>,
        /// Seed table when no task is given (defaults to the first table).
        #[arg(long)]
        table: Option<String>,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Comma-separated per-hop caps.
        #[arg(long, value_delimiter = ',')]
        fanouts: Option<Vec<usize>>,
    },
    /// Train over the configured grid and write a checkpoint and report.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: PathBuf,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Join-flatten the target table to this depth before training.
        #[arg(long)]
        flatten: Option<usize>,
    },
    /// Recompute split metrics from a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        flatten: Option<usize>,
    },
    /// Generate a synthetic database.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    LinearSage,
    ResnetSage,
    TabularOnly,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::LinearSage => Variant::LinearSage,
            VariantArg::ResnetSage => Variant::ResnetSage,
            VariantArg::TabularOnly => Variant::TabularOnly,
        }
    }
}

#[derive(Debug)]
struct CliError {
    code: String,
    message: String,
}

impl CliError {
    fn new(code: &str, message: impl ToString) -> CliError {
        CliError {
            code: code.to_string(),
            message: message.to_string(),
        }
    }

    /// `<module>.<variant>`, the variant taken from the error's debug name.
    fn from_module<E: Debug + std::fmt::Display>(module: &str, e: E) -> CliError {
        let dbg = format!("{e:?}");
        let name: String = dbg.chars().take_while(|c| c.is_alphanumeric()).collect();
        let mut snake = String::new();
        for (i, ch) in name.chars().enumerate() {
            if ch.is_uppercase() && i > 0 {
                snake.push('_');
            }
            snake.push(ch.to_ascii_lowercase());
        }
        CliError::new(&format!("{module}.{snake}"), e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::new("io", format!("{}: {e}", path.display()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Config {
    run: RunConfig,
    graph: GraphSection,
    features: Option<FeatureConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GraphSection {
    strict: bool,
    time_columns: std::collections::BTreeMap<String, String>,
}

/// A task spec plus, optionally, the dataset it refers to (relative paths
/// resolve against the task file).
#[derive(Debug, Deserialize, Serialize)]
struct TaskFile {
    #[serde(default)]
    dataset: Option<PathBuf>,
    #[serde(flatten)]
    spec: TaskSpec,
}

fn parse_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    if is_toml {
        toml::from_str(&text).map_err(|e| CliError::new("config.parse", format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::new("config.parse", format!("{}: {e}", path.display())))
    }
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg: Config = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            toml::from_str(&text).map_err(|e| CliError::new("config.parse", format!("{}: {e}", p.display())))?
        }
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    cfg.graph.strict |= common.strict;
    Ok(cfg)
}

fn graph_options(cfg: &Config) -> GraphOptions {
    GraphOptions {
        dangling: if cfg.graph.strict { DanglingPolicy::Error } else { DanglingPolicy::Skip },
        time_columns: cfg.graph.time_columns.clone(),
    }
}

fn load_task(path: &Path, common: &Common) -> Result<(TaskSpec, Option<PathBuf>)> {
    let tf: TaskFile = parse_file(path)?;
    let mut spec = tf.spec;
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    Ok((spec, tf.dataset.map(|d| if d.is_absolute() { d } else { base.join(d) })))
}

fn load_dataset(path: Option<&Path>) -> Result<RelationalInstance> {
    let path = path.ok_or_else(|| CliError::new("usage", "--dataset is required"))?;
    let inst = if path.is_dir() {
        load_csv_dataset(path, &path.join(SCHEMA_FILE))
    } else {
        load_sqlite(path, None)
    };
    inst.map_err(|e| CliError::from_module("ingest", e))
}

fn dataset_for(common: &Common, task_dataset: Option<PathBuf>) -> Result<RelationalInstance> {
    load_dataset(common.dataset.as_deref().or(task_dataset.as_deref()))
}

fn graph(inst: &RelationalInstance, cfg: &Config) -> Result<HeteroGraph> {
    build_graph(inst, &graph_options(cfg)).map_err(|e| CliError::from_module("graph", e))
}

fn make_task(inst: &RelationalInstance, spec: &TaskSpec) -> Result<(RelationalInstance, TrainingTable, Value)> {
    let (ti, tt, warnings) = build_task(inst, spec).map_err(|e| CliError::from_module("task", e))?;
    Ok((ti, tt, serde_json::to_value(warnings).expect("warnings serialize")))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, serde_json::to_string_pretty(v).expect("json") + "\n").map_err(io_err(path))
}

fn out_dir(common: &Common) -> Result<Option<&Path>> {
    match &common.out {
        Some(d) => {
            fs::create_dir_all(d).map_err(io_err(d))?;
            Ok(Some(d))
        }
        None => Ok(None),
    }
}

fn split_counts(tt: &TrainingTable) -> Value {
    json!({
        "train": tt.rows_in(Split::Train).len(),
        "val": tt.rows_in(Split::Val).len(),
        "test": tt.rows_in(Split::Test).len(),
    })
}

fn cmd_ingest(common: &Common) -> Result<Value> {
    let cfg = load_config(common)?;
    let inst = load_dataset(common.dataset.as_deref())?;
    let report = check_referential_integrity(&inst);
    if cfg.graph.strict && !report.is_clean() {
        return Err(CliError::new(
            "integrity.violation",
            format!("{} dangling foreign keys, {} tables with key violations", report.total_dangling(), report.primary_keys.len()),
        ));
    }
    let tables: Vec<Value> = inst
        .schema
        .tables
        .iter()
        .zip(&inst.tables)
        .map(|(d, t)| {
            json!({
                "name": d.name,
                "rows": t.len(),
                "primary_key": d.primary_key,
                "columns": d.columns.iter().map(|c| json!({
                    "name": c.name,
                    "declared_type": c.declared_type,
                    "semantic_type": c.semantic().name(),
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let out = json!({
        "tables": tables,
        "foreign_keys": inst.schema.foreign_keys.iter().map(|f| f.label()).collect::<Vec<_>>(),
        "integrity": report,
        "total_dangling": report.total_dangling(),
        "warnings": inst.warnings,
    });
    if let Some(dir) = out_dir(common)? {
        write_csv_dataset(&inst, dir).map_err(|e| CliError::from_module("ingest", e))?;
        write_json(&dir.join("ingest.json"), &out)?;
    }
    Ok(out)
}

fn cmd_analyze(common: &Common, task: Option<&Path>) -> Result<Value> {
    let cfg = load_config(common)?;
    let (spec, ds) = match task {
        Some(t) => {
            let (s, d) = load_task(t, common)?;
            (Some(s), d)
        }
        None => (None, None),
    };
    let inst = dataset_for(common, ds)?;
    let g = graph(&inst, &cfg)?;
    let fcfg = cfg.features.unwrap_or_default();
    let report = match &spec {
        Some(s) => {
            let (_, tt, _) = make_task(&inst, s)?;
            analyze(&inst, Some(&g), Some((s, &tt)), &fcfg)
        }
        None => analyze(&inst, Some(&g), None, &fcfg),
    };
    let v = serde_json::to_value(&report).expect("report serializes");
    if let Some(p) = &common.out {
        write_json(p, &v)?;
    }
    Ok(v)
}

fn cmd_graphify(common: &Common) -> Result<Value> {
    let cfg = load_config(common)?;
    let inst = load_dataset(common.dataset.as_deref())?;
    let g = graph(&inst, &cfg)?;
    let out = json!({
        "num_nodes": g.num_nodes(),
        "num_edges": g.num_edges(),
        "temporal": g.is_temporal(),
        "node_types": g.node_types.iter().map(|n| json!({
            "name": n.name,
            "num_nodes": n.num_nodes,
            "temporal": n.time.is_some(),
        })).collect::<Vec<_>>(),
        "edge_types": g.edge_types.iter().map(|e| json!({
            "label": e.label,
            "edges": e.edges.len(),
            "null_skipped": e.null_skipped,
            "dangling_skipped": e.dangling_skipped,
        })).collect::<Vec<_>>(),
        "degrees": degree_profile(&g),
    });
    if let Some(dir) = out_dir(common)? {
        let path = dir.join("graph.bin");
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        write_snapshot(&g, &mut f).map_err(io_err(&path))?;
        write_json(&dir.join("graph.json"), &out)?;
    }
    Ok(out)
}

fn cmd_make_task(common: &Common, task: &Path) -> Result<Value> {
    let (spec, ds) = load_task(task, common)?;
    let inst = dataset_for(common, ds)?;
    let (_, tt, warnings) = make_task(&inst, &spec)?;
    let out = json!({
        "task": spec,
        "rows": tt.len(),
        "n_classes": tt.n_classes(),
        "splits": split_counts(&tt),
        "warnings": warnings,
    });
    if let Some(dir) = out_dir(common)? {
        let def = inst.table(&spec.target_table).expect("task built").0;
        let path = dir.join("training_table.csv");
        tt.write_csv(&path, def).map_err(|e| CliError::new("io", e))?;
        write_json(&dir.join("task.json"), &out)?;
    }
    Ok(out)
}

fn cmd_sample(common: &Common, task: Option<&Path>, table: Option<&str>, count: usize, fanouts: Option<Vec<usize>>) -> Result<Value> {
    let cfg = load_config(common)?;
    let scfg = SamplerConfig {
        fanouts: fanouts.unwrap_or_else(|| cfg.run.model.fanouts()),
        disjoint: cfg.run.disjoint,
        strict: cfg.run.strict,
    };
    let (inst, seeds, times) = match task {
        Some(t) => {
            let (spec, ds) = load_task(t, common)?;
            let raw = dataset_for(common, ds)?;
            let (inst, tt, _) = make_task(&raw, &spec)?;
            let ty = inst.schema.table_index(&tt.target_table).expect("task built");
            let idx: Vec<usize> = tt.rows_in(Split::Train).into_iter().take(count).collect();
            let seeds: Vec<Seed> = idx.iter().map(|&i| Seed { node_type: ty, node: tt.entity_rows[i] }).collect();
            let times = tt.timestamps.as_ref().map(|ts| idx.iter().map(|&i| ts[i]).collect::<Vec<_>>());
            (inst, seeds, times)
        }
        None => {
            let inst = load_dataset(common.dataset.as_deref())?;
            let ty = match table {
                Some(name) => inst.schema.table_index(name).ok_or_else(|| CliError::new("usage", format!("unknown table {name}")))?,
                None => 0,
            };
            let n = inst.tables.get(ty).map_or(0, |t| t.len());
            let seeds = (0..n.min(count)).map(|node| Seed { node_type: ty, node }).collect();
            (inst, seeds, None)
        }
    };
    let g = graph(&inst, &cfg)?;
    let sub = sample(&g, &seeds, times.as_deref(), &scfg, &mut batch_rng(cfg.run.seed, 0)).map_err(|e| CliError::from_module("sample", e))?;
    let rels = relations(&g);
    let mut edges = serde_json::Map::new();
    for (r, rel) in rels.iter().enumerate() {
        if sub.edges[r].is_empty() {
            continue;
        }
        let dir = match rel.direction {
            Direction::Forward => "fwd",
            Direction::Reverse => "rev",
        };
        let pairs: Vec<[u32; 2]> = sub.edges[r]
            .iter()
            .map(|&(s, d)| [sub.nodes[rel.src_type][s as usize], sub.nodes[rel.dst_type][d as usize]])
            .collect();
        edges.insert(format!("{}:{dir}", g.edge_types[rel.edge_type].label), json!(pairs));
    }
    let nodes: serde_json::Map<String, Value> = g
        .node_types
        .iter()
        .zip(&sub.nodes)
        .filter(|(_, ns)| !ns.is_empty())
        .map(|(n, ns)| (n.name.clone(), json!(ns)))
        .collect();
    let v = json!({
        "seeds": seeds.iter().map(|s| json!([g.node_types[s.node_type].name, s.node])).collect::<Vec<_>>(),
        "seed_times": times,
        "fanouts": scfg.fanouts.iter().map(|&f| if f == usize::MAX { Value::Null } else { json!(f) }).collect::<Vec<_>>(),
        "num_nodes": sub.num_nodes(),
        "num_edges": sub.num_edges(),
        "nodes": nodes,
        "edges": edges,
        "causality_violations": sub.causality_violations(&g, scfg.strict).len(),
    });
    if let Some(p) = &common.out {
        write_json(p, &v)?;
    }
    Ok(v)
}

/// Task instance and training table, flattened when requested.
fn training_inputs(common: &Common, task: &Path, flatten: Option<usize>) -> Result<(RelationalInstance, TrainingTable)> {
    let (spec, ds) = load_task(task, common)?;
    let raw = dataset_for(common, ds)?;
    let (inst, tt, _) = make_task(&raw, &spec)?;
    let inst = match flatten {
        Some(depth) => flatten_target(&inst, &tt.target_table, depth)
            .and_then(|f| f.into_instance(&inst))
            .map_err(|e| CliError::from_module("flatten", e))?,
        None => inst,
    };
    Ok((inst, tt))
}

fn cmd_train(common: &Common, task: &Path, variant: Option<VariantArg>, flatten: Option<usize>) -> Result<Value> {
    let mut cfg = load_config(common)?;
    if let Some(v) = variant {
        cfg.run.model.variant = v.into();
    }
    let (inst, tt) = training_inputs(common, task, flatten)?;
    let prep = prepare(&inst, &tt, cfg.run.model.d0, &graph_options(&cfg)).map_err(|e| CliError::from_module("train", e))?;
    let outcome = train(&prep, &cfg.run).map_err(|e| CliError::from_module("train", e))?;
    let v = serde_json::to_value(&outcome.report).expect("report serializes");
    if let Some(dir) = out_dir(common)? {
        let path = dir.join("model.ckpt");
        fs::write(&path, &outcome.checkpoint).map_err(io_err(&path))?;
        write_json(&dir.join("report.json"), &v)?;
    }
    Ok(v)
}

fn cmd_evaluate(common: &Common, task: &Path, checkpoint: &Path, flatten: Option<usize>) -> Result<Value> {
    let cfg = load_config(common)?;
    let (inst, tt) = training_inputs(common, task, flatten)?;
    let bytes = fs::read(checkpoint).map_err(io_err(checkpoint))?;
    let report = evaluate(&bytes, &inst, &tt, &graph_options(&cfg)).map_err(|e| CliError::from_module("evaluate", e))?;
    let v = serde_json::to_value(&report).expect("report serializes");
    if let Some(p) = &common.out {
        write_json(p, &v)?;
    }
    Ok(v)
}

fn cmd_synth(common: &Common, spec: Option<&Path>) -> Result<Value> {
    let mut s: SynthSpec = match spec {
        Some(p) => parse_file(p)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    let (inst, ledger) = generate(&s).map_err(|e| CliError::from_module("synth", e))?;
    let v = serde_json::to_value(&ledger).expect("ledger serializes");
    if let Some(dir) = out_dir(common)? {
        write_csv_dataset(&inst, dir).map_err(|e| CliError::from_module("ingest", e))?;
        write_json(&dir.join("ledger.json"), &v)?;
    }
    Ok(v)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("REDELEX_THREADS") {
        let n: usize = v.parse().map_err(|_| CliError::new("config.invalid", format!("REDELEX_THREADS={v} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::new("config.invalid", e))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Value> {
    configure_threads()?;
    match cli.command {
        Command::Ingest(c) => cmd_ingest(&c),
        Command::Analyze { common, task } => cmd_analyze(&common, task.as_deref()),
        Command::Graphify(c) => cmd_graphify(&c),
        Command::MakeTask { common, task } => cmd_make_task(&common, &task),
        Command::Sample {
            common,
            task,
            table,
            count,
            fanouts,
        } => cmd_sample(&common, task.as_deref(), table.as_deref(), count, fanouts),
        Command::Train {
            common,
            task,
            variant,
            flatten,
        } => cmd_train(&common, &task, variant, flatten),
        Command::Evaluate {
            common,
            task,
            checkpoint,
            flatten,
        } => cmd_evaluate(&common, &task, &checkpoint, flatten),
        Command::Synth { common, spec } => cmd_synth(&common, spec.as_deref()),
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(v) => {
            emit(&serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            emit(&json!({"error": {"code": e.code, "message": e.message}}).to_string());
            ExitCode::FAILURE
        }
    }
}
