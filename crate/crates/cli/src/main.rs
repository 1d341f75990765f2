//! `storyxai`: generate data, train teachers, distill the student, explain
//! it, render stories and evaluate, all under one output root.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use storyxai::distill::Task;
use storyxai::interpret::Provenance;
use storyxai::pipeline::{self, Layout, OutputLock, RunConfig};
use storyxai::story::Audience;
use storyxai::{Error, Real, Result};

#[derive(Parser, Debug)]
#[command(name = "storyxai", version, about = "Multi-task distillation with explanation stories")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed of the synthetic dataset.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root.
    #[arg(long, global = true, env = "DISTILL_STORY_OUT", default_value = "storyxai-out")]
    out: PathBuf,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset.
    GenData {
        #[arg(long)]
        n_samples: Option<usize>,
    },
    /// Train the report, abnormality and segmentation teachers.
    TrainTeachers {
        /// Train a single teacher: report, abnormality or segmentation.
        #[arg(long)]
        only: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Distill the teachers into the multi-head student, one phase per task.
    Distill {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write heatmaps and LIME fits for the student.
    Explain {
        /// Comma-separated: gradcam, gradcampp, lime, attention.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        /// Comma-separated sample indices.
        #[arg(long, value_delimiter = ',')]
        samples: Vec<usize>,
    },
    /// Render explanation stories.
    Story {
        /// Comma-separated: domain_expert, ml_practitioner.
        #[arg(long, value_delimiter = ',')]
        audiences: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        samples: Vec<usize>,
    },
    /// Test-split metrics of student and teachers.
    Evaluate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainTeachers { .. } => "train-teachers",
            Command::Distill { .. } => "distill",
            Command::Explain { .. } => "explain",
            Command::Story { .. } => "story",
            Command::Evaluate => "evaluate",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.output_root = cli.out.clone();
    match &cli.command {
        Command::GenData { n_samples } => {
            if let Some(n) = n_samples {
                cfg.dataset.n_samples = *n;
            }
        }
        Command::TrainTeachers { epochs, .. } => {
            if let Some(e) = epochs {
                cfg.teacher.epochs = *e;
            }
        }
        Command::Distill { alpha, temperature, epochs } => {
            if let Some(a) = alpha {
                cfg.distill.alpha = *a;
            }
            if let Some(t) = temperature {
                cfg.distill.temperature = *t;
            }
            if let Some(e) = epochs {
                cfg.distill.epochs = *e;
            }
        }
        Command::Explain { methods, samples } => {
            if !methods.is_empty() {
                cfg.explain.methods = methods.iter().map(|m| Provenance::parse(m.trim())).collect::<Result<_>>()?;
            }
            if !samples.is_empty() {
                cfg.explain.samples = samples.clone();
            }
        }
        Command::Story { audiences, samples } => {
            if !audiences.is_empty() {
                cfg.story.audiences = audiences.iter().map(|a| Audience::parse(a.trim())).collect::<Result<_>>()?;
            }
            if !samples.is_empty() {
                cfg.explain.samples = samples.clone();
            }
        }
        Command::Evaluate => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    let only = match &cli.command {
        Command::TrainTeachers { only: Some(name), .. } => {
            Some(Task::parse(name).map_err(|_| {
                Error::config("only", format!("unknown task {name:?}; valid tasks are report, abnormality, segmentation"))
            })?)
        }
        _ => None,
    };
    let layout = Layout::new(&cli.out);
    let _lock = OutputLock::acquire(&layout)?;
    pipeline::record_start(&layout, cli.command.name(), &cfg)?;
    let say = |line: String| {
        if !cli.quiet {
            println!("{line}");
        }
    };
    match &cli.command {
        Command::GenData { .. } => {
            let s = pipeline::gen_data(&cfg, &layout)?;
            say(format!("generated {} samples in {}", s.n_samples, layout.data().display()));
            say(format!("manifest sha256 {}", s.manifest_sha256));
        }
        Command::TrainTeachers { .. } => {
            let result = pipeline::train_teachers::<Real>(&cfg, &layout, only);
            if let Ok(summaries) = &result {
                for s in summaries {
                    say(format!("teacher {}: validation {} {:.4} (floor {:.2})", s.task, s.metric, s.value, s.floor));
                }
            }
            result?;
        }
        Command::Distill { .. } => {
            let s = pipeline::distill::<Real>(&cfg, &layout)?;
            for (task, v) in &s.final_agreement {
                say(format!("student {task}: validation agreement {v:.4} (phase end {:.4})", s.phase_end[task]));
            }
            say(format!("frozen heads constant within every phase: {}", s.frozen_heads_constant));
        }
        Command::Explain { .. } => {
            for set in pipeline::explain::<Real>(&cfg, &layout, &[])? {
                say(format!(
                    "sample {}: {} class(es), {} attention map(s) in {}",
                    set.sample,
                    set.classes.len(),
                    set.attention.len(),
                    layout.explain(set.sample).display()
                ));
            }
        }
        Command::Story { .. } => {
            for dir in pipeline::story::<Real>(&cfg, &layout, &[])? {
                say(format!("story {}", dir.display()));
            }
        }
        Command::Evaluate => {
            let r = pipeline::evaluate::<Real>(&cfg, &layout)?;
            for m in &r.tasks {
                say(format!(
                    "{}: student {} {:.4}, teacher {:.4}, agreement {:.4}",
                    m.task, m.metric, m.student, m.teacher, m.agreement
                ));
            }
            say(format!("classification retention {:.4}", r.abnormality_retention));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                e.exit();
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
