use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use cofedrec::dataset::{build_splits, load_ratings, InteractionDataset};
use cofedrec::eval::{evaluate, Split};
use cofedrec::federation::{diagnose_client_kmeans, eval_candidates, RunReport, Simulation};
use cofedrec::io::{self, NdjsonWriter, OutputTag};
use cofedrec::{Error, ExperimentConfig, Parallelism};

#[derive(Parser)]
#[command(
    name = "cofedrec",
    version,
    about = "Co-clustering federated recommendation simulator"
)]
struct Cli {
    /// Worker threads for the parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run every parallel section on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the federated protocol and write logs, metrics and the best-round checkpoint.
    Run(ConfigArgs),
    /// Run once per value of one parameter and tabulate the best-round test metrics.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// One of: lambda, tau, item_clusters.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// K-Means on flattened client models from a checkpoint.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "clusters", short = 'k')]
        k: usize,
        /// Output directory (default: the checkpoint directory).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Load, filter and split a ratings file; write index maps and splits.
    Prepare(ConfigArgs),
    /// Re-evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Override the evaluation protocol stored in the checkpoint config.
        #[arg(long)]
        eval_mode: Option<String>,
    },
}

/// Config file plus per-field overrides. Every flag maps to the config key
/// of the same name with dashes replaced by underscores.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generic override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    output: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    #[arg(long)]
    participant_fraction: Option<String>,
    #[arg(long)]
    item_clusters: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    scl_variant: Option<String>,
    #[arg(long)]
    scl_max_items: Option<String>,
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    virtual_ratio: Option<String>,
    #[arg(long)]
    embedding_dim: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    local_epochs: Option<String>,
    #[arg(long)]
    negatives: Option<String>,
    #[arg(long)]
    eval_mode: Option<String>,
    #[arg(long)]
    eval_cadence: Option<String>,
    #[arg(long)]
    early_stop_patience: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            None => ExperimentConfig::default(),
        };
        let flags = [
            ("data", &self.data),
            ("format", &self.format),
            ("output", &self.output),
            ("seed", &self.seed),
            ("rounds", &self.rounds),
            ("participant_fraction", &self.participant_fraction),
            ("item_clusters", &self.item_clusters),
            ("lambda", &self.lambda),
            ("tau", &self.tau),
            ("scl_variant", &self.scl_variant),
            ("scl_max_items", &self.scl_max_items),
            ("ablation", &self.ablation),
            ("virtual_ratio", &self.virtual_ratio),
            ("embedding_dim", &self.embedding_dim),
            ("learning_rate", &self.learning_rate),
            ("batch_size", &self.batch_size),
            ("local_epochs", &self.local_epochs),
            ("negatives", &self.negatives),
            ("eval_mode", &self.eval_mode),
            ("eval_cadence", &self.eval_cadence),
            ("early_stop_patience", &self.early_stop_patience),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {pair:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn config_error(e: impl std::fmt::Display) -> Failure {
    Failure::Config(anyhow!("{e}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let mode = if cli.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::default()
    };
    match dispatch(cli.command, mode) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command, mode: Parallelism) -> CliResult<()> {
    match command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let dataset = load_dataset(&cfg)?;
            let report = run_experiment(&cfg, &dataset, mode, &cfg.output, true)?;
            print_summary(&cfg, &report);
            Ok(())
        }
        Command::Sweep {
            config,
            param,
            values,
        } => sweep(&config, &param, &values, mode),
        Command::Diagnose {
            checkpoint,
            k,
            output,
        } => diagnose(&checkpoint, k, output, mode),
        Command::Prepare(args) => {
            let cfg = args.resolve()?;
            prepare(&cfg)
        }
        Command::Eval {
            checkpoint,
            eval_mode,
        } => eval_checkpoint(&checkpoint, eval_mode, mode),
    }
}

fn load_dataset(cfg: &ExperimentConfig) -> CliResult<InteractionDataset> {
    let log = load_ratings(&cfg.data, cfg.format, cfg.max_malformed)
        .with_context(|| format!("loading {}", cfg.data.display()))?;
    if !log.malformed_lines.is_empty() {
        log::warn!("{} malformed line(s) skipped", log.malformed_lines.len());
    }
    let (dataset, report) = build_splits(&log.ratings, cfg.min_interactions)?;
    log::info!(
        "{} users, {} items, {} train interactions ({} users filtered, {} duplicates)",
        dataset.num_users,
        dataset.num_items,
        dataset.num_train_interactions(),
        report.filtered_users.len() + report.dropped_users.len(),
        report.duplicate_records
    );
    Ok(dataset)
}

fn tag_of(cfg: &ExperimentConfig) -> OutputTag {
    OutputTag {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
}

/// Runs one experiment and writes its artifacts into `out`.
fn run_experiment(
    cfg: &ExperimentConfig,
    dataset: &InteractionDataset,
    mode: Parallelism,
    out: &Path,
    checkpoint: bool,
) -> CliResult<RunReport> {
    let round_cfg = cfg.round_config(mode);
    round_cfg.validate(dataset).map_err(config_error)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    cfg.save(out.join("config.cfg"))?;
    let tag = tag_of(cfg);
    let mut rounds_log = NdjsonWriter::create(&out.join("rounds.ndjson"), tag.clone())?;
    let started = Instant::now();
    let sim = Simulation::new(dataset, round_cfg, cfg.seed)?.keep_best_snapshot(checkpoint);
    let mut write_error = None;
    let (report, _) = sim.run_with(|record| {
        if let Some(m) = &record.metrics {
            log::info!(
                "round {:>3}: loss {:.4} val HR {:.4} test HR {:.4} NDCG {:.4} |D_s| {} ({:.0}s)",
                record.round,
                record.mean_train_loss,
                m.validation_hr,
                m.test_hr,
                m.test_ndcg,
                record.receivers,
                started.elapsed().as_secs_f64()
            );
        }
        if write_error.is_none() {
            write_error = rounds_log.write("round", record).err();
        }
    })?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    rounds_log.flush()?;

    let mut metrics = NdjsonWriter::create(&out.join("metrics.ndjson"), tag.clone())?;
    for m in &report.history {
        metrics.write("metrics", m)?;
    }
    metrics.write("best", &report.best)?;
    metrics.flush()?;

    let mut participation = tag.csv_comment();
    participation.push_str("user_index,participation_count,similar_group_count\n");
    for (u, (p, s)) in report
        .participation
        .iter()
        .zip(&report.similar_counts)
        .enumerate()
    {
        participation.push_str(&format!("{u},{p},{s}\n"));
    }
    io::write_text(&out.join("participation.csv"), &participation)?;

    let b = &report.best;
    let summary = format!(
        "{}best_round,test_hr,test_ndcg,validation_hr,validation_ndcg,k,mode\n{},{},{},{},{},{},{}\n",
        tag.csv_comment(),
        b.round,
        b.test_hr,
        b.test_ndcg,
        b.validation_hr,
        b.validation_ndcg,
        b.k,
        b.mode
    );
    io::write_text(&out.join("summary.csv"), &summary)?;
    if let Some(snapshot) = &report.snapshot {
        io::save_checkpoint(&out.join("checkpoint"), snapshot, &tag, &cfg.to_text())?;
    }
    Ok(report)
}

fn print_summary(cfg: &ExperimentConfig, report: &RunReport) {
    let b = &report.best;
    println!(
        "config {} seed {} ablation {}",
        cfg.short_hash(),
        cfg.seed,
        cfg.ablation
    );
    println!("best round {}", b.round);
    println!("test HR@{}   {:.4}", b.k, b.test_hr);
    println!("test NDCG@{} {:.4}", b.k, b.test_ndcg);
    println!(
        "bytes up {} down {}; output {}",
        report.bytes_up,
        report.bytes_down,
        cfg.output.display()
    );
}

fn sweep(args: &ConfigArgs, param: &str, values: &[String], mode: Parallelism) -> CliResult<()> {
    if !matches!(param, "lambda" | "tau" | "item_clusters") {
        return Err(config_error(format!(
            "unknown sweep parameter {param:?} (expected lambda, tau or item_clusters)"
        )));
    }
    let base = args.resolve()?;
    let mut configs = Vec::with_capacity(values.len());
    for value in values {
        let mut cfg = base.clone();
        cfg.set(param, value)?;
        cfg.output = base.output.join(format!("{param}-{}", value.trim()));
        configs.push(cfg);
    }
    let dataset = load_dataset(&base)?;
    let tag = tag_of(&base);
    let mut table = tag.csv_comment();
    table.push_str(&format!(
        "{param},best_round,test_hr,test_ndcg,config_hash\n"
    ));
    for cfg in &configs {
        let report = run_experiment(cfg, &dataset, mode, &cfg.output, false)?;
        let b = &report.best;
        let value = cfg.get(param)?;
        println!(
            "{param}={value}: best round {} HR {:.4} NDCG {:.4}",
            b.round, b.test_hr, b.test_ndcg
        );
        table.push_str(&format!(
            "{value},{},{},{},{}\n",
            b.round,
            b.test_hr,
            b.test_ndcg,
            cfg.hash()
        ));
    }
    let path = base.output.join(format!("sweep-{param}.csv"));
    io::write_text(&path, &table)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn diagnose(
    checkpoint: &Path,
    k: usize,
    output: Option<PathBuf>,
    mode: Parallelism,
) -> CliResult<()> {
    if !checkpoint.join(io::MANIFEST).exists() {
        return Err(anyhow!("no checkpoint at {}", checkpoint.display()).into());
    }
    let ckpt = io::load_checkpoint(checkpoint)?;
    let cfg = ExperimentConfig::parse(&ckpt.manifest.config)?;
    let tag = OutputTag {
        config_hash: ckpt.manifest.config_hash.clone(),
        seed: ckpt.manifest.seed,
    };
    let models: Vec<_> = ckpt.models.iter().collect();
    let params = cfg.round_config(mode).kmeans;
    let sizes = diagnose_client_kmeans(&models, k, ckpt.manifest.seed, params, mode)?;
    let out = output.unwrap_or_else(|| checkpoint.to_path_buf());
    let mut csv = tag.csv_comment();
    csv.push_str("cluster,size\n");
    for (c, s) in sizes.iter().enumerate() {
        csv.push_str(&format!("{c},{s}\n"));
    }
    let hist = io::tagged_path(&out, &format!("kmeans-k{k}"), &tag, "csv");
    io::write_text(&hist, &csv)?;
    let flat = io::tagged_path(&out, "flattened", &tag, "bin");
    let (items, dim) = ckpt.group_model.shape();
    io::write_dump_rows(
        &flat,
        models.len(),
        items * dim,
        models.iter().map(|m| m.as_slice()),
    )?;
    let singletons = sizes.iter().filter(|&&s| s == 1).count();
    println!("K={k} cluster sizes: {sizes:?}");
    println!(
        "max share {:.4}, singleton clusters {singletons}",
        sizes[0] as f64 / models.len() as f64
    );
    println!("wrote {} and {}", hist.display(), flat.display());
    Ok(())
}

fn prepare(cfg: &ExperimentConfig) -> CliResult<()> {
    let dataset = load_dataset(cfg)?;
    let out = &cfg.output;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    dataset.write_index_maps(&out.join("users.csv"), &out.join("items.csv"))?;
    dataset.write_splits(&out.join("splits.csv"))?;
    println!(
        "{} users, {} items, {} train interactions; wrote {}",
        dataset.num_users,
        dataset.num_items,
        dataset.num_train_interactions(),
        out.display()
    );
    Ok(())
}

fn eval_checkpoint(
    checkpoint: &Path,
    eval_mode: Option<String>,
    mode: Parallelism,
) -> CliResult<()> {
    if !checkpoint.join(io::MANIFEST).exists() {
        return Err(anyhow!("no checkpoint at {}", checkpoint.display()).into());
    }
    let ckpt = io::load_checkpoint(checkpoint)?;
    let mut cfg = ExperimentConfig::parse(&ckpt.manifest.config)?;
    if let Some(m) = eval_mode {
        cfg.set("eval_mode", &m)?;
    }
    let dataset = load_dataset(&cfg)?;
    if dataset.num_users != ckpt.models.len() || dataset.num_items != ckpt.group_model.rows() {
        return Err(anyhow!("checkpoint shape does not match {}", cfg.data.display()).into());
    }
    let round_cfg = cfg.round_config(mode);
    // Same candidate stream as the run, so sampled results reproduce it.
    let candidates = eval_candidates(&dataset, round_cfg.eval_mode, cfg.seed);
    let model_of = |u: usize| (&ckpt.models[u], &ckpt.thetas[u]);
    let k = round_cfg.eval_k;
    let val = evaluate(&dataset, &candidates, Split::Validation, k, model_of, mode)?;
    let test = evaluate(&dataset, &candidates, Split::Test, k, model_of, mode)?;
    println!(
        "checkpoint round {} ({} protocol)",
        ckpt.manifest.round, cfg.eval_mode
    );
    println!(
        "validation HR@{k} {:.4} NDCG@{k} {:.4}",
        val.hr(),
        val.ndcg()
    );
    println!(
        "test       HR@{k} {:.4} NDCG@{k} {:.4}",
        test.hr(),
        test.ndcg()
    );
    Ok(())
}
