use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use radlabel::{generate_synthetic, label_corpus, run_pipeline, run_stage, PipelineConfig, RunManifest, Stage, StageStatus, SynthOptions};

#[derive(Parser)]
#[command(name = "radlabel", version, about = "Cluster DICOM instances from tags, images and diagnoses")]
struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the per-file and per-row stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the corpus and apply the admission rules.
    Ingest,
    /// Window accepted files to PNG and split the cohort by exam.
    ExportImages,
    /// Filter, impute and encode the tags.
    PrepTags,
    /// Build the diagnosis vocabulary and vectorize.
    PrepText,
    /// Fit PCA on the exported images.
    Extract,
    /// Cluster every available representation over the κ grid.
    Cluster,
    /// Build the fused representations.
    Fuse,
    /// Score every clustering on the evaluation split.
    Evaluate,
    /// Composition reports at the selected κ.
    Report,
    /// Apply the frozen pipeline to a new corpus.
    Label {
        /// Corpus root holding `dicom/` and `diagnoses.csv`.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus with known classes.
    Synth(SynthArgs),
    /// Every stage from ingest to report.
    Run,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    /// Comma-separated instance counts per class, for unbalanced corpora.
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    instances_per_exam: usize,
    #[arg(long)]
    missingness: Option<f64>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    image_noise: Option<f64>,
    #[arg(long)]
    image_confusion: Option<f64>,
    #[arg(long)]
    text_confusion: Option<f64>,
    #[arg(long)]
    tag_confusion: Option<f64>,
}

impl SynthArgs {
    fn options(&self, seed: u64) -> SynthOptions {
        let d = SynthOptions::default();
        SynthOptions {
            classes: self.classes,
            per_class: self.per_class,
            counts: self.counts.clone(),
            instances_per_exam: self.instances_per_exam,
            missingness: self.missingness.unwrap_or(d.missingness),
            image_size: self.image_size.unwrap_or(d.image_size),
            image_noise: self.image_noise.unwrap_or(d.image_noise),
            image_confusion: self.image_confusion.unwrap_or(d.image_confusion),
            text_confusion: self.text_confusion.unwrap_or(d.text_confusion),
            tag_confusion: self.tag_confusion.unwrap_or(d.tag_confusion),
            seed,
        }
    }
}

fn load_config(cli: &Cli) -> radlabel::Result<PipelineConfig> {
    let path = cli.config.as_ref().ok_or_else(|| radlabel::PipelineError::Config("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print_manifest(m: &RunManifest) {
    for s in &m.stages {
        let status = match s.status {
            StageStatus::Ok => "ok",
            StageStatus::Partial => "partial",
            StageStatus::Failed => "FAILED",
            StageStatus::Skipped => "skipped",
        };
        println!("{:<14} {:<8} {:>8.2}s", s.name.as_str(), status, s.seconds);
        if let Some(msg) = &s.message {
            println!("    {msg}");
        }
        for f in &s.outcome.failures {
            println!("    failed: {f}");
        }
    }
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: &Cli) -> radlabel::Result<bool> {
    let stage = match &cli.command {
        Command::Synth(args) => {
            let opts = args.options(cli.seed.unwrap_or(0));
            let s = generate_synthetic(&args.out, &opts)?;
            println!("wrote {} files in {} exams to {}", s.files, s.exams, args.out.display());
            return Ok(true);
        }
        Command::Label { corpus, out } => {
            let cfg = load_config(cli)?;
            let s = label_corpus(&cfg, corpus, out)?;
            println!("labeled {} of {} files with {} ({}, κ = {})", s.labeled, s.files, s.set, s.spec, s.k);
            for (reason, n) in &s.skipped {
                println!("    skipped {n}: {reason}");
            }
            return Ok(true);
        }
        Command::Run => {
            let m = run_pipeline(&load_config(cli)?)?;
            print_manifest(&m);
            return Ok(m.succeeded());
        }
        Command::Ingest => Stage::Ingest,
        Command::ExportImages => Stage::ExportImages,
        Command::PrepTags => Stage::PrepTags,
        Command::PrepText => Stage::PrepText,
        Command::Extract => Stage::Extract,
        Command::Cluster => Stage::Cluster,
        Command::Fuse => Stage::Fuse,
        Command::Evaluate => Stage::Evaluate,
        Command::Report => Stage::Report,
    };
    let m = run_stage(&load_config(cli)?, stage)?;
    let rec = m.stage(stage).expect("stage recorded");
    print_manifest(&RunManifest { stages: vec![rec.clone()], warnings: Vec::new(), ..m.clone() });
    Ok(rec.status == StageStatus::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ radlabel::PipelineError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
