use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use seqcritic::corpus::{
    generate_synthetic, load_coco_json, CocoConfig, Dataset, Split, SyntheticConfig,
};
use seqcritic::metrics::RewardIdf;
use seqcritic::par::{with_threads, Exec};
use seqcritic::policy::Policy;
use seqcritic::rlcore::{
    advantage_stats, advstats_table, trend_summary, AdvStatsConfig, Estimator, NStep,
};
use seqcritic::table::CsvTable;
use seqcritic::trainer::{
    config_hash, evaluate, load_pretrained, train_rl, train_xent, RunRecord, TrainConfig,
    TrainPolicy,
};

mod compare;
mod config;

use config::{build_train_config, read_config, Assignments};

const OUT_ENV: &str = "SEQCRITIC_OUT";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser)]
#[command(
    name = "seqcritic",
    version,
    about = "Self-critical n-step training for sequence decoders"
)]
struct Cli {
    /// Worker threads for batch parallelism (0 uses every core)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Output root for default paths [env: SEQCRITIC_OUT, default: runs]
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic captioning corpus
    Gen(GenArgs),
    /// Build a corpus from a COCO-style caption file
    Ingest(IngestArgs),
    /// Run cross-entropy and/or RL training
    Train(TrainArgs),
    /// Greedy-decode a split and report CIDEr and BLEU-1..4
    Eval(EvalArgs),
    /// Per-timestep mean and variance of n-step advantages
    Advstats(AdvStatsArgs),
    /// Pair validation curves of baseline and candidate runs
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 2000)]
    examples: usize,
    #[arg(long, default_value_t = 6)]
    attrs: usize,
    #[arg(long, default_value_t = 5)]
    refs: usize,
    #[arg(long, default_value_t = 32)]
    context_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory [default: <out>/data]
    #[arg(long)]
    dir: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    coco: PathBuf,
    #[arg(long, default_value_t = 5)]
    min_count: usize,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    #[arg(long, default_value_t = 32)]
    context_dim: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    dir: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PhaseArg {
    Xent,
    Rl,
    Both,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (or `data` in the config file)
    #[arg(long)]
    data: Option<PathBuf>,
    /// key = value experiment file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rerun the experiment recorded in a manifest
    #[arg(long, conflicts_with_all = ["config", "preset", "set", "estimator", "k", "n_schedule", "seed"])]
    manifest: Option<PathBuf>,
    #[arg(long, value_parser = ["desk", "paper"])]
    preset: Option<String>,
    #[arg(long, value_enum)]
    phase: Option<PhaseArg>,
    /// XENT checkpoint to start RL from [default: <run-dir>/xent_best.ckpt]
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long, value_parser = ["maxpro", "krollout"])]
    estimator: Option<String>,
    /// Rollouts per boundary for krollout
    #[arg(long = "K", id = "k")]
    k: Option<usize>,
    /// n:epoch-end pairs, e.g. "1:5,2:10,2:15"
    #[arg(long)]
    n_schedule: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra key=value assignments, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory [default: <out>/run-<config hash>]
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "val")]
    split: String,
    /// Evaluate only the first N examples (0 = all)
    #[arg(long, default_value_t = 0)]
    limit: usize,
    /// Also write the report as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AdvStatsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    /// Number of examples taken from the start of the split
    #[arg(long, default_value_t = 500)]
    examples: usize,
    #[arg(long, value_delimiter = ',', default_value = "maxpro,krollout")]
    estimators: Vec<String>,
    #[arg(long = "K", default_value_t = 5)]
    k: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,T")]
    ns: Vec<String>,
    /// Sampled trajectories per example
    #[arg(long, default_value_t = 100)]
    rollouts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV path [default: <out>/advstats.csv]
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    baseline: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    candidate: Vec<PathBuf>,
    /// CSV path [default: <out>/compare.csv]
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Everything needed to rerun a training command, written before the first update.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct ExperimentManifest {
    config_path: Option<PathBuf>,
    config: TrainConfig,
    config_hash: String,
    phase: PhaseArg,
    data: PathBuf,
    pretrained: Option<PathBuf>,
    output_dir: PathBuf,
    build_id: String,
    seed: u64,
}

impl std::fmt::Debug for PhaseArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PhaseArg::Xent => "xent",
            PhaseArg::Rl => "rl",
            PhaseArg::Both => "both",
        })
    }
}

fn build_id() -> String {
    format!(
        "seqcritic {} ({})",
        env!("CARGO_PKG_VERSION"),
        option_env!("SEQCRITIC_BUILD_ID").unwrap_or("dev")
    )
}

fn out_root(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| seqcritic::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_gen(a: &GenArgs, root: &Path) -> Result<()> {
    let cfg = SyntheticConfig {
        num_examples: a.examples,
        num_attributes: a.attrs,
        refs_per_example: a.refs,
        context_dim: a.context_dim,
        context_noise: a.noise,
        max_len: a.max_len,
        seed: a.seed,
        ..SyntheticConfig::default()
    };
    let data = generate_synthetic(&cfg)?;
    let dir = a.dir.clone().unwrap_or_else(|| root.join("data"));
    data.save(&dir)?;
    eprintln!(
        "wrote {} examples, vocabulary {} to {}",
        data.examples.len(),
        data.vocab.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_ingest(a: &IngestArgs, root: &Path) -> Result<()> {
    let cfg = CocoConfig {
        min_word_count: a.min_count,
        max_len: a.max_len,
        context_dim: a.context_dim,
        seed: a.seed,
        ..CocoConfig::default()
    };
    let data = load_coco_json(&a.coco, &cfg)?;
    let dir = a.dir.clone().unwrap_or_else(|| root.join("data"));
    data.save(&dir)?;
    eprintln!(
        "wrote {} images, vocabulary {} to {}",
        data.examples.len(),
        data.vocab.len(),
        dir.display()
    );
    Ok(())
}

fn resolve_manifest(a: &TrainArgs, root: &Path) -> Result<ExperimentManifest> {
    if let Some(path) = &a.manifest {
        let text = std::fs::read_to_string(path).map_err(|e| seqcritic::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let mut m: ExperimentManifest =
            serde_json::from_str(&text).map_err(|e| seqcritic::Error::Parse {
                path: path.clone(),
                offset: 0,
                message: e.to_string(),
            })?;
        if let Some(dir) = &a.run_dir {
            m.output_dir = dir.clone();
        }
        if let Some(p) = &a.pretrained {
            m.pretrained = Some(p.clone());
        }
        m.build_id = build_id();
        return Ok(m);
    }

    let mut asg = match &a.config {
        Some(p) => read_config(p)?,
        None => Assignments::default(),
    };
    if let Some(p) = &a.preset {
        // a preset flag replaces the file's preset but keeps its other settings
        asg.entries.retain(|(k, _)| k != "preset");
        asg.entries.insert(0, ("preset".into(), p.clone()));
    }
    for (key, v) in [
        ("estimator", a.estimator.clone()),
        ("k", a.k.map(|k| k.to_string())),
        ("n_schedule", a.n_schedule.clone()),
        ("seed", a.seed.map(|s| s.to_string())),
    ] {
        if let Some(v) = v {
            asg.push(key, &v);
        }
    }
    for s in &a.set {
        let (k, v) = s.split_once('=').ok_or_else(|| {
            seqcritic::Error::Usage(format!("--set expects KEY=VALUE, got `{s}`"))
        })?;
        asg.push(k.trim(), v.trim());
    }
    let (config, warnings) = build_train_config(&asg)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let data = a
        .data
        .clone()
        .or_else(|| asg.get("data").map(PathBuf::from))
        .ok_or_else(|| {
            seqcritic::Error::Usage("no dataset given (--data or `data` in the config)".into())
        })?;
    let phase = match (a.phase, asg.get("phase")) {
        (Some(p), _) => p,
        (None, Some(p)) => PhaseArg::from_str(p, true)
            .map_err(|_| seqcritic::Error::Usage(format!("invalid phase `{p}`")))?,
        (None, None) => PhaseArg::Both,
    };
    let pretrained = a
        .pretrained
        .clone()
        .or_else(|| asg.get("pretrained").map(PathBuf::from));
    let hash = config.hash();
    let output_dir = a
        .run_dir
        .clone()
        .unwrap_or_else(|| root.join(format!("run-{hash}")));
    Ok(ExperimentManifest {
        config_path: a.config.clone(),
        seed: config.seed,
        config_hash: hash,
        config,
        phase,
        data,
        pretrained,
        output_dir,
        build_id: build_id(),
    })
}

fn save_policy(p: &TrainPolicy, path: &Path, m: &ExperimentManifest, phase: &str) -> Result<()> {
    let mut meta = BTreeMap::new();
    meta.insert("config_hash".to_string(), m.config_hash.clone());
    meta.insert("phase".to_string(), phase.to_string());
    meta.insert("build_id".to_string(), m.build_id.clone());
    p.save(path, meta)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    output_dir: PathBuf,
    config_hash: String,
    xent_best_val_cider: Option<f64>,
    rl_start_val_cider: Option<f64>,
    rl_final_val_cider: Option<f64>,
    rl_final_val_bleu4: Option<f64>,
}

fn cmd_train(a: &TrainArgs, root: &Path) -> Result<()> {
    let m = resolve_manifest(a, root)?;
    let data = Dataset::load(&m.data)?;
    let cfg = &m.config;
    let dir = &m.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| seqcritic::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    write_json(&dir.join(MANIFEST_FILE), &m)?;

    let mut record = RunRecord::default();
    let mut summary = TrainSummary {
        output_dir: dir.clone(),
        config_hash: m.config_hash.clone(),
        xent_best_val_cider: None,
        rl_start_val_cider: None,
        rl_final_val_cider: None,
        rl_final_val_bleu4: None,
    };
    let mut init: Option<TrainPolicy> = None;
    if matches!(m.phase, PhaseArg::Xent | PhaseArg::Both) {
        let out = train_xent(cfg, &data)?;
        save_policy(&out.best, &dir.join("xent_best.ckpt"), &m, "xent")?;
        save_policy(&out.last, &dir.join("xent_last.ckpt"), &m, "xent")?;
        summary.xent_best_val_cider = Some(out.best_val_cider);
        record.extend(out.record);
        init = Some(out.best);
    }
    if matches!(m.phase, PhaseArg::Rl | PhaseArg::Both) {
        let start = match init.take() {
            Some(p) if m.pretrained.is_none() => p,
            _ => {
                let path = m
                    .pretrained
                    .clone()
                    .unwrap_or_else(|| dir.join("xent_best.ckpt"));
                load_pretrained(&path)?
            }
        };
        let out = train_rl(cfg, &data, &start, None)?;
        save_policy(&out.policy, &dir.join("rl_final.ckpt"), &m, "rl")?;
        summary.rl_start_val_cider = out.record.rows.first().map(|r| r.val_cider);
        if let Some(last) = out.record.rows.last() {
            summary.rl_final_val_cider = Some(last.val_cider);
            summary.rl_final_val_bleu4 = Some(last.val_bleu4);
        }
        record.extend(out.record);
    }
    record
        .table(&m.config_hash)
        .write(&dir.join(compare::RUN_CSV))?;
    record
        .steps_table(&m.config_hash)
        .write(&dir.join("steps.csv"))?;
    write_json(&dir.join("summary.json"), &summary)?;
    print_json(&summary)
}

fn load_checkpoint(path: &Path, data: &Dataset) -> Result<TrainPolicy> {
    let (p, _) = Policy::<f32>::load(path)?;
    if p.config.vocab_size != data.vocab.len() || p.config.context_dim != data.context_dim() {
        return Err(seqcritic::Error::Config(format!(
            "checkpoint {} expects vocabulary {} and context {}, dataset has {} and {}",
            path.display(),
            p.config.vocab_size,
            p.config.context_dim,
            data.vocab.len(),
            data.context_dim()
        ))
        .into());
    }
    Ok(p)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let split: Split = a.split.parse()?;
    let data = Dataset::load(&a.data)?;
    let policy = load_checkpoint(&a.checkpoint, &data)?;
    let report = evaluate(&policy, &data, split, a.limit, Exec::Parallel)?;
    if let Some(path) = &a.csv {
        let hash = config_hash(&format!(
            "{}|{}|{}",
            a.checkpoint.display(),
            a.split,
            a.limit
        ));
        let mut t = CsvTable::new(
            hash,
            &[
                "split",
                "num_examples",
                "cider",
                "bleu1",
                "bleu2",
                "bleu3",
                "bleu4",
            ],
        );
        let mut row = vec![
            split.to_string(),
            report.num_examples.to_string(),
            report.cider.to_string(),
        ];
        row.extend(report.bleu.iter().map(|b| b.to_string()));
        t.push(row);
        t.write(path)?;
    }
    print_json(&report)
}

#[derive(Serialize)]
struct TrendReport {
    estimator: String,
    timesteps: usize,
    mean_nondecreasing_fraction: f64,
    variance_nonincreasing_fraction: f64,
}

fn cmd_advstats(a: &AdvStatsArgs, root: &Path) -> Result<()> {
    let split: Split = a.split.parse()?;
    let data = Dataset::load(&a.data)?;
    let policy = load_checkpoint(&a.checkpoint, &data)?;
    let estimators = a
        .estimators
        .iter()
        .map(|e| Estimator::parse(e.trim(), a.k))
        .collect::<seqcritic::Result<Vec<_>>>()?;
    let ns =
        a.ns.iter()
            .map(|n| n.parse::<NStep>())
            .collect::<seqcritic::Result<Vec<_>>>()?;
    let mut examples = data.split(split);
    examples.truncate(a.examples);
    if examples.is_empty() {
        return Err(seqcritic::Error::Config(format!("split `{split}` has no examples")).into());
    }
    // Same reward as RL training: document frequencies from the training references.
    let train_refs: Vec<_> = data
        .split(Split::Train)
        .iter()
        .map(|e| e.references.clone())
        .collect();
    let ridf = RewardIdf::fit(&train_refs)?;
    let rewards: Vec<_> = examples
        .iter()
        .map(|e| ridf.reward(&e.references))
        .collect();
    let contexts: Vec<&[f64]> = examples.iter().map(|e| e.context.as_slice()).collect();

    let mut cfg = AdvStatsConfig::new(estimators.clone(), data.max_len, a.seed);
    cfg.ns = ns.clone();
    cfg.num_rollouts = a.rollouts;
    let rows = advantage_stats(&policy, &contexts, &rewards, &cfg)?;
    let hash = config_hash(&format!(
        "{}|{}|{}|{:?}|{:?}|{}|{}",
        a.checkpoint.display(),
        a.split,
        a.examples,
        estimators,
        ns,
        a.rollouts,
        a.seed
    ));
    let path = a.csv.clone().unwrap_or_else(|| root.join("advstats.csv"));
    advstats_table(&rows, &hash).write(&path)?;
    let trends: Vec<TrendReport> = estimators
        .iter()
        .map(|&e| {
            let t = trend_summary(&rows, e, &ns);
            TrendReport {
                estimator: e.to_string(),
                timesteps: t.timesteps,
                mean_nondecreasing_fraction: t.mean_fraction(),
                variance_nonincreasing_fraction: t.variance_fraction(),
            }
        })
        .collect();
    print_json(&trends)
}

fn cmd_compare(a: &CompareArgs, root: &Path) -> Result<()> {
    let hash = config_hash(&format!("{:?}|{:?}", a.baseline, a.candidate));
    let (table, summary, warnings) = compare::compare(&a.baseline, &a.candidate, &hash)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let path = a.csv.clone().unwrap_or_else(|| root.join("compare.csv"));
    table.write(&path)?;
    print_json(&summary)
}

fn run(cli: &Cli) -> Result<()> {
    let root = out_root(&cli.out);
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, &root),
        Command::Ingest(a) => cmd_ingest(a, &root),
        Command::Train(a) => cmd_train(a, &root),
        Command::Eval(a) => cmd_eval(a),
        Command::Advstats(a) => cmd_advstats(a, &root),
        Command::Compare(a) => cmd_compare(a, &root),
    }
}

/// 2 for bad input or unreadable files, 1 for failures during a run.
fn exit_code(err: &anyhow::Error) -> u8 {
    use seqcritic::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Config(_) | E::Usage(_) | E::Parse { .. } | E::Schema { .. } | E::Io { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_threads(cli.threads, || run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already embed their source in the message
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
