use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cxl_tiering::config::{Config, Scenario};
use cxl_tiering::estimator::{Feature, ModelCoefficients};
use cxl_tiering::harness::{cmd_fit, cmd_oracle, cmd_sweep, cmd_tune, parse_ratio_list, Overrides};
use cxl_tiering::report::{fmt_sig, CsvTable};

#[derive(Parser)]
#[command(name = "cxl-tiering", version, about = "DDR/CXL page-interleave simulator and tuner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Noise-free throughput and counters at each ratio.
    Sweep(Common),
    /// Brute-force best ratio over 0..=100.
    Oracle(Common),
    /// Fit the throughput estimator on a noisy calibration sweep.
    Fit(Common),
    /// Run the online tuner and compare with static placements.
    Tune(Common),
    /// List devices, workloads and scenarios in the config.
    Profiles {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Config file (TOML). Defaults to the built-in profiles.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma list and/or start:end[:step] ranges, in percent.
    #[arg(long)]
    ratios: Option<String>,
    /// Output CSV path. Defaults to stdout (tune: the scenario's output).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    intervals: Option<usize>,
    #[arg(long)]
    start_ratio: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Model file: written by `fit`, read by `tune`.
    #[arg(long)]
    model: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(Config::builtin().clone()),
    }
}

impl Common {
    fn scenario(&self) -> anyhow::Result<Scenario> {
        let config = load_config(self.config.as_deref())?;
        let mut scenario = config.scenario(&self.scenario)?;
        Overrides {
            seed: self.seed,
            intervals: self.intervals,
            start_ratio: self.start_ratio,
            noise_sigma: self.noise,
        }
        .apply(&mut scenario)?;
        Ok(scenario)
    }

    fn ratios(&self, default: impl FnOnce() -> Vec<f64>) -> anyhow::Result<Vec<f64>> {
        Ok(match &self.ratios {
            Some(list) => parse_ratio_list(list)?,
            None => default(),
        })
    }
}

fn emit(table: &CsvTable, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => table
            .save(path)
            .with_context(|| format!("writing {}", path.display())),
        None => Ok(table.write_to(std::io::stdout().lock())?),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Sweep(args) => {
            let scenario = args.scenario()?;
            let ratios = args.ratios(|| (0..=100).map(f64::from).collect())?;
            let sweep = cmd_sweep(&scenario, &ratios)?;
            emit(&sweep.to_table(), args.out.as_deref())
        }
        Command::Oracle(args) => {
            let scenario = args.scenario()?;
            let result = cmd_oracle(&scenario)?;
            let mut table = CsvTable::new(vec!["ratio".into(), "max_throughput".into()]);
            table.push(vec![result.ratio.to_string(), fmt_sig(result.max_throughput)]);
            emit(&table, args.out.as_deref())
        }
        Command::Fit(args) => {
            let scenario = args.scenario()?;
            let ratios = args.ratios(|| scenario.fit_ratios.clone())?;
            let Some(model_path) = args.model.as_deref() else {
                bail!("fit needs --model PATH to write the coefficients to");
            };
            let report = cmd_fit(&scenario, &ratios, &Feature::DEFAULT_SET)?;
            report
                .model
                .save(model_path)
                .with_context(|| format!("writing {}", model_path.display()))?;
            if let Some(out) = args.out.as_deref() {
                emit(&report.to_table(), Some(out))?;
            }
            println!("training pearson r: {}", fmt_sig(report.train_pearson));
            println!(
                "held-out pearson r (seed {}): {}",
                report.holdout_seed,
                fmt_sig(report.holdout_pearson)
            );
            Ok(())
        }
        Command::Tune(args) => {
            let scenario = args.scenario()?;
            let Some(model_path) = args.model.as_deref() else {
                bail!("tune needs --model PATH (produce one with `fit`)");
            };
            let model = ModelCoefficients::load(model_path)
                .with_context(|| format!("loading model {}", model_path.display()))?;
            let report = cmd_tune(&scenario, &model)?;
            let out = args.out.clone().or_else(|| scenario.output.as_ref().map(PathBuf::from));
            match out {
                Some(path) => {
                    emit(&report.log.to_table(), Some(&path))?;
                    println!("{report}");
                }
                None => {
                    emit(&report.log.to_table(), None)?;
                    eprintln!("{report}");
                }
            }
            Ok(())
        }
        Command::Profiles { config } => {
            let config = load_config(config.as_deref())?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "devices:")?;
            for d in &config.devices {
                writeln!(
                    out,
                    "  {}  idle read {} ns, load bw {} GB/s, store bw {} GB/s",
                    d.name,
                    fmt_sig(d.idle_read_latency),
                    fmt_sig(d.effective_bandwidth(1.0) / 1e9),
                    fmt_sig(d.effective_bandwidth(0.0) / 1e9)
                )?;
            }
            writeln!(out, "workloads:")?;
            for w in &config.workloads {
                writeln!(
                    out,
                    "  {}  threads {}, misses/instr {}, read fraction {}",
                    w.name,
                    w.threads,
                    fmt_sig(w.miss_per_instruction),
                    fmt_sig(w.read_fraction)
                )?;
            }
            writeln!(out, "scenarios:")?;
            for s in &config.scenarios {
                let names: Vec<&str> = s.workloads.iter().map(|w| w.profile()).collect();
                writeln!(out, "  {}  {} + {}: {}", s.name, s.ddr, s.cxl, names.join(", "))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
