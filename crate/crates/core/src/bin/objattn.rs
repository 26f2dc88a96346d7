use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use objattn::artifact::{load_artifact, save_artifact, Artifact};
use objattn::attention::{finetune_attention, train_attention, AttentionModel};
use objattn::experiments::{
    evaluate_policy, first_frame_crops, render_report, run_experiment, ExperimentReport,
    ExperimentSpec,
};
use objattn::metaattention::FeatureBank;
use objattn::policy::{behavior_clone, train_rl, Policy, RlConfig, RolloutContext};
use objattn::simworld::collect_demonstrations;
use objattn::types::Demonstration;
use objattn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "objattn",
    version,
    about = "Object-centric attention learned from demonstrations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct Common {
    /// Master seed; overrides the spec's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiment spec supplying bank, proposer, task and learning configs.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect expert demonstrations into a directory (plus the feature bank).
    GenDemos {
        #[command(flatten)]
        common: Common,
    },
    /// Learn attention from a demonstration directory.
    TrainAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        demos: PathBuf,
    },
    /// Continue training an attention model on new demonstrations.
    FinetuneAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        demos: PathBuf,
        /// Earlier demonstrations, mixed in when the finetune config asks for it.
        #[arg(long)]
        prior: Option<PathBuf>,
    },
    /// Clone and/or search a policy on top of a frozen attention model.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        attention: PathBuf,
        #[arg(long)]
        demos: PathBuf,
        /// Ignore the attended boxes.
        #[arg(long)]
        no_vision: bool,
    },
    /// Roll a policy out on the spec's evaluation conditions.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        attention: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Run a full experiment and write its report.
    Experiment {
        /// Spec file (alternatively `--config`).
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Record wall-clock time in the report (reruns then differ).
        #[arg(long)]
        timed: bool,
    },
    /// Print a report as a text table (to `--out` if given). `--seed` and
    /// `--config` are accepted for uniformity and ignored.
    Report {
        report: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load_spec(common: &Common, positional: Option<&Path>) -> Result<ExperimentSpec> {
    let path = positional
        .or(common.config.as_deref())
        .ok_or_else(|| Error::invalid("an experiment spec is required (--config <spec.json>)"))?;
    let mut spec: ExperimentSpec = load_artifact(path)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn out_path(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::invalid("--out is required"))
}

/// The bank of repetition 0, as an experiment run would build it.
fn bank_for(spec: &ExperimentSpec) -> Result<FeatureBank> {
    spec.bank.build(spec.repetition_seeds(0)["bank"])
}

fn load_demos(dir: &Path) -> Result<Vec<Demonstration>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("demo_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!(
            "no demo_*.json files in {}",
            dir.display()
        )));
    }
    paths.iter().map(load_artifact).collect()
}

fn save<T: Artifact>(path: &Path, value: &T) -> Result<()> {
    save_artifact(path, value)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDemos { common } => {
            let spec = load_spec(&common, None)?;
            let out = out_path(&common)?;
            let bank = bank_for(&spec)?;
            let demos = collect_demonstrations(
                &spec.task,
                spec.demos.count,
                &spec.train_seeds.seeds(),
                &bank,
                &spec.proposer,
                spec.demos.target_convention,
                spec.demos.action_noise,
            )?;
            save(&out.join("bank.json"), &bank)?;
            for (i, d) in demos.iter().enumerate() {
                save_artifact(out.join(format!("demo_{i:03}.json")), d)?;
            }
            eprintln!("wrote {} demonstrations to {}", demos.len(), out.display());
        }
        Command::TrainAttention { common, demos } => {
            let spec = load_spec(&common, None)?;
            let out = out_path(&common)?;
            let demos = load_demos(&demos)?;
            let mut config = spec.attention.train.clone();
            config.seed = spec.repetition_seeds(0)["attention"];
            let crops = first_frame_crops(&demos, &spec.attention.crop_classes)?;
            let model = train_attention(&demos, &config, crops.as_deref(), spec.attention.rows)?;
            if let Some(last) = model.training_log.last() {
                eprintln!("final loss {:.6e} (mse {:.6e})", last.loss, last.mse);
            }
            save(out, &model)?;
        }
        Command::FinetuneAttention {
            common,
            model,
            demos,
            prior,
        } => {
            let spec = load_spec(&common, None)?;
            let out = out_path(&common)?;
            let ft = spec
                .finetune
                .as_ref()
                .ok_or_else(|| Error::invalid("the spec has no finetune block"))?;
            let model: AttentionModel = load_artifact(&model)?;
            let new = load_demos(&demos)?;
            let prior = prior
                .as_deref()
                .map(load_demos)
                .transpose()?
                .unwrap_or_default();
            let mut config = ft.train.clone();
            config.seed = spec.repetition_seeds(0)["finetune"];
            save(out, &finetune_attention(&model, &new, &prior, &config)?)?;
        }
        Command::TrainPolicy {
            common,
            attention,
            demos,
            no_vision,
        } => {
            let spec = load_spec(&common, None)?;
            let out = out_path(&common)?;
            let p = spec
                .policy
                .as_ref()
                .ok_or_else(|| Error::invalid("the spec has no policy block"))?;
            let attention: AttentionModel = load_artifact(&attention)?;
            let demos = load_demos(&demos)?;
            let seeds = spec.repetition_seeds(0);
            let vision = !no_vision;
            let mut policy: Option<Policy> = None;
            if let Some(bc) = &p.bc {
                let mut bc = bc.clone();
                bc.seed = seeds["bc"];
                policy = Some(behavior_clone(&demos, &attention, &p.arch, vision, &bc)?);
            }
            if let Some(rl) = &p.rl {
                let bank = bank_for(&spec)?;
                let ctx = RolloutContext {
                    task: &spec.task,
                    attention: &attention,
                    bank: &bank,
                    proposer: &spec.proposer,
                };
                let rl = RlConfig {
                    seed: seeds["rl"],
                    ..rl.clone()
                };
                policy = Some(train_rl(
                    &ctx,
                    &rl,
                    &p.arch,
                    vision,
                    &spec.train_seeds.seeds(),
                    policy.as_ref(),
                )?);
            }
            save(
                out,
                &policy.ok_or_else(|| Error::invalid("policy block has neither bc nor rl"))?,
            )?;
        }
        Command::Eval {
            common,
            attention,
            policy,
        } => {
            let spec = load_spec(&common, None)?;
            let attention: AttentionModel = load_artifact(&attention)?;
            let policy: Policy = load_artifact(&policy)?;
            let group = evaluate_policy(&spec, &bank_for(&spec)?, &attention, &policy)?;
            let success = group.success.expect("policy rollouts carry success");
            println!(
                "{}: success {:.1}% ({}/{})",
                group.name,
                100.0 * success.rate,
                success.hits,
                success.count
            );
            if let Some(out) = &common.out {
                let text = serde_json::to_string_pretty(&group)? + "\n";
                if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                fs::write(out, text).map_err(|e| Error::io(out, e))?;
            }
        }
        Command::Experiment {
            spec,
            common,
            timed,
        } => {
            let spec = load_spec(&common, spec.as_deref())?;
            let report = run_experiment(&spec, timed)?;
            print!("{}", render_report(&report));
            if let Some(out) = &common.out {
                save(out, &report)?;
            }
        }
        Command::Report { report, common } => {
            let report: ExperimentReport = load_artifact(&report)?;
            let table = render_report(&report);
            match &common.out {
                Some(out) => fs::write(out, table).map_err(|e| Error::io(out, e))?,
                None => print!("{table}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
