//! `seeood`: train, evaluate and compare Wasserstein-score OoD detectors.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime and
//! numeric failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use seeood::detection::score_heatmap;
use seeood::experiment::{
    evaluate_discriminator, replication_dataset, write_heatmap, write_training_outputs, CONFIG_KEYS,
};
use seeood::training::train_with_cost;
use seeood::{
    compare_rejection_regions, parse_config, run_experiment, ExperimentConfig, ExperimentReport,
    Mlp, Preset,
};

#[derive(Parser)]
#[command(name = "seeood", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset of one replication and write dataset.csv.
    GenData(Common),
    /// Train one model and write history.csv and the weight files.
    Train(Common),
    /// Score a trained discriminator on the test split; writes evaluation.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding discriminator.txt [default: the output directory]
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score a trained discriminator over the grid; writes heatmap.csv/.pgm.
    Heatmap {
        #[command(flatten)]
        common: Common,
        /// Directory holding discriminator.txt [default: the output directory]
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run every Monte Carlo replication and write the full report.
    Replicate(Common),
    /// Compare rejection-region areas of two `replicate` output directories.
    Compare {
        #[command(flatten)]
        common: Common,
        /// First report directory
        #[arg(long)]
        a: PathBuf,
        /// Second report directory
        #[arg(long)]
        b: PathBuf,
        /// TNR level [default: the first configured target]
        #[arg(long)]
        tnr: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// INI config file
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named hyperparameter set used when no config file is given
    #[arg(long, value_parser = ["setting1", "setting2", "wood2d"])]
    preset: Option<String>,
    /// Output directory (overrides eval.output_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides train.seed)
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut config = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                parse_config(&text).with_context(|| format!("in {}", path.display()))?
            }
            (None, Some(name)) => ExperimentConfig::from_preset(name.parse::<Preset>()?),
            (None, None) => ExperimentConfig::from_preset(Preset::Setting1),
        };
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            config.train.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

fn keys_help() -> String {
    let mut out = String::from("Config keys (INI sections [method], [train], [data], [eval]):\n");
    for (section, key, doc) in CONFIG_KEYS {
        out.push_str(&format!("  {:<26} {doc}\n", format!("{section}.{key}")));
    }
    out.push_str("\nExit codes: 0 success, 2 configuration error, 3 runtime error.");
    out
}

fn main() -> ExitCode {
    let help = keys_help();
    let command = Cli::command()
        .after_long_help(help.clone())
        .mut_subcommands(|sub| sub.after_long_help(help.clone()));
    let matches = command.get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };

    let common = match &cli.command {
        Command::GenData(c) | Command::Train(c) | Command::Replicate(c) => c,
        Command::Evaluate { common, .. }
        | Command::Heatmap { common, .. }
        | Command::Compare { common, .. } => common,
    };
    let config = match common.load() {
        Ok(config) => config,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(&cli.command, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_model(dir: &Path) -> anyhow::Result<Mlp> {
    let path = dir.join("discriminator.txt");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Mlp::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(command: &Command, config: &ExperimentConfig) -> anyhow::Result<()> {
    let out = &config.output_dir;
    let seed = config.train.seed;
    match command {
        Command::GenData(_) => {
            let (data, _) = replication_dataset(config, None, seed)?;
            create_dir(out)?;
            let path = out.join("dataset.csv");
            fs::write(&path, data.to_csv())
                .with_context(|| format!("writing {}", path.display()))?;
            println!(
                "wrote {} ({} InD train, {} InD test, {} OoD train, {} OoD test)",
                path.display(),
                data.ind_train.len(),
                data.ind_test.len(),
                data.ood_train.len(),
                data.ood_test.len()
            );
        }
        Command::Train(_) => {
            let (data, mut rng) = replication_dataset(config, None, seed)?;
            let cost = config.cost(data.num_classes)?;
            let history = train_with_cost(config.method, &config.train, &data, &cost, &mut rng)?;
            let files = write_training_outputs(out, &history)?;
            if let Some(last) = history.records.last() {
                println!("final loss {:.6}, cross-entropy {:.6}", last.loss, last.ce);
            }
            println!("wrote {} into {}", files.join(", "), out.display());
        }
        Command::Evaluate { model, .. } => {
            let disc = load_model(model.as_deref().unwrap_or(out))?;
            let (data, _) = replication_dataset(config, None, seed)?;
            let cost = config.cost(data.num_classes)?;
            let eval = evaluate_discriminator(&disc, &data, &config.tnr_targets, &cost)?;
            let mut csv = String::from("metric,value\n");
            csv.push_str(&format!("accuracy,{}\n", eval.accuracy));
            csv.push_str(&format!("mean_ind_score,{}\n", eval.mean_ind_score));
            csv.push_str(&format!("mean_ood_score,{}\n", eval.mean_ood_score));
            for (i, t) in config.tnr_targets.iter().enumerate() {
                csv.push_str(&format!("tpr@{t},{}\n", eval.tpr[i]));
                csv.push_str(&format!("eta@{t},{}\n", eval.thresholds[i].eta));
            }
            create_dir(out)?;
            let path = out.join("evaluation.csv");
            fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
            print!("{csv}");
        }
        Command::Heatmap { model, .. } => {
            let disc = load_model(model.as_deref().unwrap_or(out))?;
            let cost = config.cost(disc.output_dim())?;
            let heatmap = score_heatmap(&disc, &config.grid, &cost)?;
            let files = write_heatmap(out, &heatmap, &cost)?;
            println!("wrote {} into {}", files.join(", "), out.display());
        }
        Command::Replicate(_) => {
            let report = run_experiment(config)?;
            print!("{}", report.summary(config));
            println!(
                "\n{} files written under {}",
                report.files.len(),
                out.display()
            );
        }
        Command::Compare { a, b, tnr, .. } => {
            let tnr = tnr.unwrap_or(config.tnr_targets[0]);
            if !(tnr > 0.0 && tnr <= 1.0) {
                bail!("--tnr {tnr} outside (0, 1]");
            }
            let ra =
                ExperimentReport::load(a).with_context(|| format!("loading {}", a.display()))?;
            let rb =
                ExperimentReport::load(b).with_context(|| format!("loading {}", b.display()))?;
            let cmp = compare_rejection_regions(&ra, &rb, tnr)?;
            create_dir(out)?;
            let path = out.join("comparison.csv");
            fs::write(&path, cmp.to_csv())
                .with_context(|| format!("writing {}", path.display()))?;
            print!("{}", cmp.to_csv());
            println!(
                "mean difference {:.6}; a larger in {} of {} replications",
                cmp.mean_difference,
                cmp.a_larger,
                cmp.differences.len()
            );
        }
    }
    Ok(())
}
