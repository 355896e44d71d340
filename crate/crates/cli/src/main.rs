use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tall_core::config::{Component, RunConfig};
use tall_core::eval::param_report::{param_report, Preset};
use tall_core::eval::Approach;
use tall_core::pipeline::SamplerConfig;
use tall_core::runs::{
    self, load_backbones, train_baseline, train_tall_run, Artifacts, BackbonePaths, Baseline, Context, EvalPaths,
    TallOptions,
};
use tall_core::world::Dataset;
use tall_core::{CheckpointError, Error};

#[derive(Parser)]
#[command(name = "tall", version, about = "Train and evaluate a frozen-backbone LR→HR→LR pipeline on a toy bilingual world")]
struct Cli {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory; overrides `paths.dir`.
    #[arg(long, global = true)]
    dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one of the frozen backbones.
    Pretrain {
        #[arg(value_enum)]
        component: ComponentArg,
        /// Initialization and shuffling seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the adapters and bridges between the frozen backbones.
    TrainTall(TrainTallArgs),
    /// Train one of the baselines that needs training.
    TrainBaseline {
        #[arg(value_enum)]
        baseline: BaselineArg,
        #[arg(long)]
        seed: Option<u64>,
        /// LLM checkpoint to start from.
        #[arg(long)]
        llm: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score approaches on the missing-final-word task.
    Eval(EvalArgs),
    /// Module-wise parameter counts.
    ParamReport {
        #[arg(long, value_enum)]
        preset: PresetArg,
        /// Fail unless every number matches the reference tables.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct TrainTallArgs {
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    resume: bool,
    /// Stop after this many optimizer steps in total (resume later).
    #[arg(long)]
    stop_at: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr2hr: Option<PathBuf>,
    #[arg(long)]
    llm: Option<PathBuf>,
    #[arg(long)]
    hr2lr: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum, required_unless_present = "all", conflicts_with = "all")]
    approach: Vec<ApproachArg>,
    #[arg(long)]
    all: bool,
    #[arg(long, value_enum, default_value = "all")]
    dataset: DatasetArg,
    /// Sampler seed; per-example seeds derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Argmax decoding instead of the configured sampler.
    #[arg(long)]
    greedy: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ComponentArg {
    TranslatorLr2hr,
    TranslatorHr2lr,
    Llm,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    #[value(alias = "soft_prompt")]
    SoftPrompt,
    #[value(alias = "finetuned")]
    Finetune,
    #[value(alias = "from-scratch", alias = "from_scratch")]
    Scratch,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ApproachArg {
    Direct,
    Naive,
    #[value(alias = "soft_prompt")]
    SoftPrompt,
    #[value(alias = "finetuned")]
    Finetune,
    #[value(alias = "from-scratch", alias = "from_scratch")]
    Scratch,
    Tall,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Heldout,
    Shifted,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Bloomz,
    Qwen,
    Toy,
}

/// 2 configuration, 3 checkpoint, 4 numerical failure, 1 anything else.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Stage { .. } | Error::UnknownPrefix(_) => 2,
        Error::Checkpoint(_) => 3,
        Error::NonFinite(_) => 4,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.dir {
        cfg.paths.dir = d.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Cmd::ParamReport { preset, check, json } = &cli.cmd {
        let cfg = load_config(&cli)?;
        let preset = match preset {
            PresetArg::Bloomz => Preset::Bloomz,
            PresetArg::Qwen => Preset::Qwen,
            PresetArg::Toy => Preset::Toy,
        };
        let report = param_report(preset, &cfg.tall_config())?;
        if *json {
            println!("{}", report.to_json());
        } else {
            print!("{}", report.to_text());
        }
        if *check {
            let bad = report.check();
            if !bad.is_empty() {
                for b in &bad {
                    eprintln!("mismatch: {b}");
                }
                return Err(Error::Config(format!("{} number(s) differ from the expected tables", bad.len())));
            }
            eprintln!("check passed");
        }
        return Ok(());
    }

    let mut cfg = load_config(&cli)?;
    let art = Artifacts::new(cfg.paths.dir.clone());
    match cli.cmd {
        Cmd::Pretrain { component, seed, out } => {
            let c = match component {
                ComponentArg::TranslatorLr2hr => Component::Lr2hr,
                ComponentArg::TranslatorHr2lr => Component::Hr2lr,
                ComponentArg::Llm => Component::Llm,
            };
            if let Some(s) = seed {
                match c {
                    Component::Llm => cfg.train.llm.seed = s,
                    _ => cfg.train.translator.seed = s,
                }
            }
            let ctx = Context::new(cfg)?;
            let out = out.unwrap_or_else(|| art.checkpoint(c.name()));
            eprintln!("pretraining {} (config {})", c.name(), &ctx.hash[..12]);
            let s = runs::pretrain(&ctx, c, &out)?;
            println!(
                "{}: {} steps, held-out {} {:.4}, wrote {}",
                s.kind,
                s.steps,
                if c == Component::Llm { "perplexity" } else { "exact match" },
                s.heldout_score,
                s.path.display()
            );
        }
        Cmd::TrainTall(a) => {
            if let Some(s) = a.seed {
                cfg.train.tall.seed = s;
            }
            let ctx = Context::new(cfg)?;
            let d = art.backbones();
            let paths = BackbonePaths {
                lr2hr: a.lr2hr.unwrap_or(d.lr2hr),
                llm: a.llm.unwrap_or(d.llm),
                hr2lr: a.hr2lr.unwrap_or(d.hr2lr),
            };
            let bb = load_backbones(&ctx, &paths)?;
            let out = a.out.unwrap_or_else(|| art.checkpoint(runs::TALL));
            let opts = TallOptions {
                dry_run: a.dry_run,
                resume: a.resume,
                stop_at: a.stop_at,
            };
            let s = train_tall_run(&ctx, &bb, &out, &opts)?;
            if a.dry_run {
                for (stage, shape) in &s.stage_shapes {
                    println!("stage {stage}: {shape:?}");
                }
                println!("dry run ok: {} optimizer steps planned", s.total_steps);
            } else {
                if let Some(r) = s.resumed_from {
                    eprintln!("resumed at step {r}");
                }
                println!(
                    "tall: step {}/{}, best dev loss {:.4} at step {}, wrote {}",
                    s.step,
                    s.total_steps,
                    s.best_loss,
                    s.best_step,
                    out.display()
                );
            }
        }
        Cmd::TrainBaseline { baseline, seed, llm, out } => {
            let b = match baseline {
                BaselineArg::SoftPrompt => Baseline::SoftPrompt,
                BaselineArg::Finetune => Baseline::Finetuned,
                BaselineArg::Scratch => Baseline::FromScratch,
            };
            if let Some(s) = seed {
                match b {
                    Baseline::SoftPrompt => cfg.train.soft_prompt.seed = s,
                    Baseline::Finetuned => cfg.train.finetune.seed = s,
                    Baseline::FromScratch => cfg.train.from_scratch.seed = s,
                }
            }
            let ctx = Context::new(cfg)?;
            let llm = llm.unwrap_or_else(|| art.backbones().llm);
            let out = out.unwrap_or_else(|| art.checkpoint(b.kind()));
            let s = train_baseline(&ctx, b, &llm, &out)?;
            println!("{}: {} steps, best dev loss {:.4}, wrote {}", s.kind, s.steps, s.best_loss, out.display());
        }
        Cmd::Eval(a) => {
            if let Some(s) = a.seed {
                cfg.sampler.seed = s;
            }
            if a.greedy {
                cfg.sampler = SamplerConfig {
                    seed: cfg.sampler.seed,
                    ..SamplerConfig::greedy()
                };
            }
            let approaches: Vec<Approach> = if a.all {
                Approach::ALL.to_vec()
            } else {
                a.approach
                    .iter()
                    .map(|x| match x {
                        ApproachArg::Direct => Approach::Direct,
                        ApproachArg::Naive => Approach::Naive,
                        ApproachArg::SoftPrompt => Approach::SoftPrompt,
                        ApproachArg::Finetune => Approach::Finetuned,
                        ApproachArg::Scratch => Approach::FromScratch,
                        ApproachArg::Tall => Approach::Tall,
                    })
                    .collect()
            };
            let datasets = match a.dataset {
                DatasetArg::Heldout => vec![Dataset::Heldout],
                DatasetArg::Shifted => vec![Dataset::Shifted],
                DatasetArg::All => Dataset::ALL.to_vec(),
            };
            let seed = cfg.sampler.seed;
            let ctx = Context::new(cfg)?;
            let table = runs::evaluate(&ctx, &EvalPaths::in_dir(&art), &approaches, &datasets)?;
            art.ensure()?;
            let (json, text) = art.results(seed);
            runs::write_results(&table, &json, &text)?;
            print!("{}", table.to_text());
            eprintln!("wrote {}", json.display());
        }
        Cmd::ParamReport { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Checkpoint(CheckpointError::NotFound(_)) = e {
                eprintln!("hint: produce it with `tall pretrain`, `tall train-tall` or `tall train-baseline`");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
