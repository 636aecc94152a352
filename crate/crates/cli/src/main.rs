use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hashbridge::metrics::{ndcg_sorted_ideal, nfr, nmi_labelings, pearson, Labeling};
use hashbridge::pipeline::{execute, write_outputs, PipelineConfig, PipelineError, Stage};
use hashbridge::synth::{generate_corpus, write_fixture, PlantedSpec};

/// Hashtag-centric organization of multi-source search results.
#[derive(Parser)]
#[command(name = "hashbridge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write hierarchy.json, report.html and run_log.
    Run(RunArgs),
    /// Compute an evaluation metric from label or list files.
    #[command(subcommand)]
    Eval(Eval),
    /// Generate a planted corpus, its ground truth and a matching pipeline.toml.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sets both the topic and co-clustering seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides any config key, e.g. `--set cocluster.restarts=16`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Eval {
    /// NMI between two labelings (CSV `element,label` or a JSON object).
    Nmi {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Normalized footrule between two rankings, one element per line.
    Nfr {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// NDCG@k of graded relevances in ranked order, one per line.
    Ndcg {
        #[arg(long)]
        ranked: PathBuf,
        #[arg(long)]
        k: usize,
    },
    /// Pearson correlation of two equally long columns of numbers.
    Pearson {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    subtopics: usize,
    /// Hashtags per subtopic on each source.
    #[arg(long, default_value_t = 2)]
    tags: usize,
    /// Items per hashtag.
    #[arg(long, default_value_t = 10)]
    items: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "planted")]
    query: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => run(&args),
        Command::Eval(e) => {
            println!("{:.6}", eval(&e)?);
            Ok(())
        }
        Command::Synth(args) => synth(&args),
    }
}

fn config_error(message: String) -> PipelineError {
    PipelineError {
        stage: Stage::Config,
        message,
    }
}

/// Sets `a.b.c = value` in a parsed config, creating tables as needed.
fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), PipelineError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_error(format!("override {assignment:?} is not KEY=VALUE")))?;
    // Bare words that are not valid TOML values are taken as strings.
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let path: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = path.split_last().expect("split yields one part");
    let mut table = doc;
    for part in parents {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_error(format!("override {key}: {part} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn load_config(args: &RunArgs) -> Result<PipelineConfig, PipelineError> {
    let text = fs::read_to_string(&args.config).map_err(|e| config_error(format!("{}: {e}", args.config.display())))?;
    let mut doc: toml::Table = toml::from_str(&text).map_err(|e| config_error(e.to_string()))?;
    for o in &args.overrides {
        apply_override(&mut doc, o)?;
    }
    let mut cfg = PipelineConfig::from_toml(&toml::to_string(&doc).map_err(|e| config_error(e.to_string()))?)?;
    cfg.resolve_paths(args.config.parent().unwrap_or(Path::new(".")));
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let result = execute(&cfg)?;
    write_outputs(&result, &cfg, &cfg.output)?;
    log::info!("wrote {}", cfg.output.display());
    Ok(())
}

fn eval(e: &Eval) -> Result<f64> {
    Ok(match e {
        Eval::Nmi { truth, pred } => nmi_labelings(&read_labels(truth)?, &read_labels(pred)?)?,
        Eval::Nfr { a, b } => nfr(&read_lines(a)?, &read_lines(b)?)?,
        Eval::Ndcg { ranked, k } => ndcg_sorted_ideal(&read_numbers(ranked)?, *k)?,
        Eval::Pearson { x, y } => pearson(&read_numbers(x)?, &read_numbers(y)?)?,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Non-empty trimmed lines.
fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn read_numbers(path: &Path) -> Result<Vec<f64>> {
    read_lines(path)?
        .iter()
        .map(|l| l.parse().with_context(|| format!("{}: {l:?} is not a number", path.display())))
        .collect()
}

/// A JSON object of element to label, or CSV with an `element,label` header.
fn read_labels(path: &Path) -> Result<Labeling> {
    let text = read_text(path)?;
    if text.trim_start().starts_with('{') {
        let map: BTreeMap<String, serde_json::Value> =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        return map
            .into_iter()
            .map(|(k, v)| match v {
                serde_json::Value::String(s) => Ok((k, s)),
                serde_json::Value::Number(n) => Ok((k, n.to_string())),
                other => bail!("{}: label of {k} is {other}, expected a string or number", path.display()),
            })
            .collect();
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().with_context(|| format!("parsing {}", path.display()))?.clone();
    if headers.len() != 2 || &headers[0] != "element" || &headers[1] != "label" {
        bail!("{}: expected header element,label", path.display());
    }
    let mut labels = Labeling::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("parsing {}", path.display()))?;
        if labels.get(&record[0]).is_some() {
            bail!("{}: element {} labeled twice", path.display(), &record[0]);
        }
        labels.insert(&record[0], &record[1]);
    }
    Ok(labels)
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = PlantedSpec {
        n_subtopics: args.subtopics,
        tags_per_subtopic: args.tags,
        items_per_tag: args.items,
        noise: args.noise,
        seed: args.seed,
        query: args.query.clone(),
        ..PlantedSpec::default()
    };
    let corpus = generate_corpus(&spec)?;
    let paths = write_fixture(&args.out, &corpus).with_context(|| format!("writing {}", args.out.display()))?;
    let name = |p: &Path| p.file_name().expect("fixture file").to_string_lossy().into_owned();
    // Topic and co-occurrence weights sized for planted corpora; see README.
    let config = format!(
        "input = {:?}\noutput = \"out\"\n\n[hlda]\nseed = {seed}\n\n[walk]\nsimilarity = {:?}\n\n\
         [cocluster]\nrow_clusters = {k}\ncol_clusters = {k}\nlambda_topic = 100.0\nlambda_cooccur = 0.01\nseed = {seed}\n",
        name(&paths.corpus),
        name(&paths.similarity),
        seed = args.seed,
        k = args.subtopics,
    );
    fs::write(args.out.join("pipeline.toml"), config).context("writing pipeline.toml")?;
    println!("{}", paths.corpus.display());
    Ok(())
}
