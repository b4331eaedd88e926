use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use datn_cli::ablate::run_ablation_suite;
use datn_cli::config::RunConfig;
use datn_cli::evaluate::evaluate;
use datn_cli::export::export_attention;
use datn_cli::trainer::train;
use datn_cli::TrainedState;
use datn_metrics::Taxonomy;
use datn_world::{generate_dataset, Dataset, WorldConfig};

#[derive(Parser)]
#[command(
    name = "datn",
    about = "Dual-attention vision-to-language trainer on a synthetic scene world"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train/test splits, vocabulary).
    GenData(GenDataArgs),
    /// Train the concept predictor, then the task head.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Train and evaluate every ablation variant over a seed list.
    Ablate(AblateArgs),
    /// Export attention maps for one sample.
    ExportAttn(ExportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    train: usize,
    #[arg(long, default_value_t = 64)]
    test: usize,
    #[arg(long, default_value_t = 16)]
    canvas_side: usize,
    #[arg(long, default_value_t = 4)]
    max_objects: usize,
    #[arg(long, default_value_t = 2)]
    questions_per_sample: usize,
    /// Comma-separated object,number,color,location shares.
    #[arg(long, default_value = "0.25,0.25,0.25,0.25")]
    proportions: String,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    #[arg(long, default_value_t = 24)]
    concepts: usize,
}

#[derive(Args, Clone)]
struct ConfigFlags {
    /// UTF-8 key=value config file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    canvas_side: Option<usize>,
    #[arg(long)]
    feature_width: Option<usize>,
    #[arg(long)]
    concepts: Option<usize>,
    #[arg(long)]
    attention_width: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    question_hidden: Option<usize>,
    #[arg(long)]
    multimodal_width: Option<usize>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    adam_epsilon: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    concept_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    concept_threshold: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    raw_ratio_weights: Option<bool>,
}

impl ConfigFlags {
    fn build(&self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load_file(path)?,
            None => RunConfig::default(),
        };
        let mut overlay = String::new();
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                overlay.push_str(&format!("{key} = {v}\n"));
            }
        };
        push("task", self.task.clone());
        push("ablation", self.ablation.clone());
        push("canvas-side", self.canvas_side.map(|v| v.to_string()));
        push("feature-width", self.feature_width.map(|v| v.to_string()));
        push("concepts", self.concepts.map(|v| v.to_string()));
        push("attention-width", self.attention_width.map(|v| v.to_string()));
        push("hidden", self.hidden.map(|v| v.to_string()));
        push("question-hidden", self.question_hidden.map(|v| v.to_string()));
        push("multimodal-width", self.multimodal_width.map(|v| v.to_string()));
        push("optimizer", self.optimizer.clone());
        push("lr", self.lr.map(|v| format!("{v:e}")));
        push("beta1", self.beta1.map(|v| v.to_string()));
        push("beta2", self.beta2.map(|v| v.to_string()));
        push("rho", self.rho.map(|v| v.to_string()));
        push("adam-epsilon", self.adam_epsilon.map(|v| format!("{v:e}")));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("concept-epochs", self.concept_epochs.map(|v| v.to_string()));
        push("batch-size", self.batch_size.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push(
            "concept-threshold",
            self.concept_threshold.map(|v| v.to_string()),
        );
        push("max-len", self.max_len.map(|v| v.to_string()));
        push("beam", self.beam.map(|v| v.to_string()));
        push(
            "raw-ratio-weights",
            self.raw_ratio_weights.map(|v| v.to_string()),
        );
        config.apply_text(&overlay, "command line")?;
        Ok(config)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory from gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Loss log output path (text table of step and loss).
    #[arg(long)]
    loss_log: Option<PathBuf>,
    /// Continue from an existing checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many global optimizer steps.
    #[arg(long)]
    stop_after_steps: Option<u64>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Which split to score.
    #[arg(long, default_value = "test")]
    split: String,
    /// Taxonomy file for WUPS (vqa checkpoints).
    #[arg(long, default_value = "data/taxonomy.txt")]
    taxonomy: PathBuf,
    /// Machine-readable report destination.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated seed list.
    #[arg(long, default_value = "1,2,3,4,5")]
    seeds: String,
    /// Table output path (also printed).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "data/taxonomy.txt")]
    taxonomy: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Sample index within the split.
    #[arg(long, default_value_t = 0)]
    sample: usize,
    #[arg(long)]
    out: PathBuf,
}

fn split_samples<'a>(dataset: &'a Dataset, split: &str) -> anyhow::Result<&'a [datn_world::Sample]> {
    match split {
        "train" => Ok(&dataset.train),
        "test" => Ok(&dataset.test),
        other => bail!("unknown split '{other}' (train or test)"),
    }
}

fn load_taxonomy(path: &PathBuf) -> anyhow::Result<Taxonomy> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading taxonomy {}", path.display()))?;
    Ok(Taxonomy::parse(&text, &path.display().to_string())?)
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenData(args) => {
            let proportions: Vec<f64> = args
                .proportions
                .split(',')
                .map(|p| p.trim().parse::<f64>().context("parsing proportions"))
                .collect::<anyhow::Result<_>>()?;
            if proportions.len() != 4 {
                bail!("proportions must list four shares (object,number,color,location)");
            }
            let config = WorldConfig {
                canvas_side: args.canvas_side,
                max_objects: args.max_objects,
                questions_per_sample: args.questions_per_sample,
                type_proportions: [
                    proportions[0],
                    proportions[1],
                    proportions[2],
                    proportions[3],
                ],
                min_count: args.min_count,
                concept_count: args.concepts,
            };
            let dataset = generate_dataset(args.seed, args.train, args.test, &config)?;
            dataset.save(&args.out)?;
            println!(
                "wrote {} train / {} test samples, vocabulary of {} tokens to {}",
                dataset.train.len(),
                dataset.test.len(),
                dataset.vocab.size(),
                args.out.display()
            );
        }
        Command::Train(args) => {
            let dataset = Dataset::load(&args.data)?;
            let config = args.flags.build()?;
            let resume = match &args.resume {
                Some(path) => Some(TrainedState::load(path)?),
                None => None,
            };
            let (state, log) = train(&config, &dataset, resume, args.stop_after_steps)?;
            state.save(&args.out)?;
            if let Some(path) = &args.loss_log {
                std::fs::write(path, log.to_text())
                    .with_context(|| format!("writing loss log {}", path.display()))?;
            }
            let last = log.entries.last().map(|&(_, s, l)| (s, l));
            match last {
                Some((step, loss)) => println!(
                    "trained to step {} (last loss {loss:.6}); checkpoint at {}",
                    step + 1,
                    args.out.display()
                ),
                None => println!("nothing to do; checkpoint at {}", args.out.display()),
            }
        }
        Command::Eval(args) => {
            let dataset = Dataset::load(&args.data)?;
            let state = TrainedState::load(&args.checkpoint)?;
            state.config.validate_for(&dataset)?;
            let samples = split_samples(&dataset, &args.split)?;
            let taxonomy = load_taxonomy(&args.taxonomy).ok();
            let report = evaluate(&state, samples, &dataset.vocab, taxonomy.as_ref())?;
            print!("{}", report.to_table());
            if let Some(path) = &args.json {
                let mut text = report.to_json().to_string();
                text.push('\n');
                std::fs::write(path, text)
                    .with_context(|| format!("writing report {}", path.display()))?;
            }
        }
        Command::Ablate(args) => {
            let dataset = Dataset::load(&args.data)?;
            let config = args.flags.build()?;
            let seeds: Vec<u64> = args
                .seeds
                .split(',')
                .map(|s| s.trim().parse::<u64>().context("parsing seeds"))
                .collect::<anyhow::Result<_>>()?;
            if seeds.is_empty() {
                bail!("at least one seed required");
            }
            let taxonomy = load_taxonomy(&args.taxonomy).ok();
            let table = run_ablation_suite(&config, &dataset, &seeds, taxonomy.as_ref())?;
            print!("{}", table.to_text());
            if let Some(path) = &args.out {
                std::fs::write(path, table.to_text())
                    .with_context(|| format!("writing table {}", path.display()))?;
            }
        }
        Command::ExportAttn(args) => {
            let dataset = Dataset::load(&args.data)?;
            let state = TrainedState::load(&args.checkpoint)?;
            let samples = split_samples(&dataset, &args.split)?;
            let Some(sample) = samples.get(args.sample) else {
                bail!("sample index {} outside split of {}", args.sample, samples.len());
            };
            let files = export_attention(&state, sample, &dataset.vocab, &args.out)?;
            println!("wrote {} file(s) under {}", files.len(), args.out.display());
        }
    }
    Ok(())
}
