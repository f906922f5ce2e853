// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use bscan_olm::harness::report::summarize;
use bscan_olm::harness::scenario::parse_scenario;
use bscan_olm::harness::sim::{self, Options};
use bscan_olm::measurement::TestKind;
use bscan_olm::timing::{self, Mode, TimingParams};

#[derive(Parser)]
#[command(
    name = "bscan-olm",
    version,
    about = "On-line monitoring and reconfiguration over an analogue test bus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its event log.
    Run {
        file: PathBuf,
        /// Event log destination; stdout when omitted.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Plain-text summary destination.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Writes every TCK cycle as `cycle,tms,tdi,tdo`.
        #[arg(long)]
        tap_trace: Option<PathBuf>,
    },
    /// Parse and validate a scenario without running it.
    Check { file: PathBuf },
    /// Print the timing model for a test loop.
    Timing {
        #[arg(long, default_value_t = 10)]
        nodes: u32,
        #[arg(long, default_value_t = timing::DEFAULT_TCK)]
        tck: f64,
        #[arg(long, default_value = "worst")]
        mode: Mode,
        /// Configuration cycles; the calibrated count for the mode if omitted.
        #[arg(long)]
        config_cycles: Option<f64>,
    },
}

fn read(path: &PathBuf) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Check { file } => {
            let sc = match parse_scenario(&read(&file)?) {
                Ok(sc) => sc,
                Err(e) => {
                    eprintln!("{}: {e}", file.display());
                    return Ok(ExitCode::from(1));
                }
            };
            if let Err(e) = sim::build(&sc, &Options::default()) {
                eprintln!("{}: {e}", file.display());
                return Ok(ExitCode::from(e.exit_code() as u8));
            }
            println!("{}: ok", file.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            file,
            log,
            report,
            seed,
            tap_trace,
        } => {
            let sc = match parse_scenario(&read(&file)?) {
                Ok(sc) => sc,
                Err(e) => {
                    eprintln!("{}: {e}", file.display());
                    return Ok(ExitCode::from(1));
                }
            };
            let opts = Options {
                seed,
                tap_trace: tap_trace.is_some(),
            };
            let out = match sim::run(&sc, &opts) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("{}: {e}", file.display());
                    return Ok(ExitCode::from(e.exit_code() as u8));
                }
            };
            let csv = out.log.to_csv();
            match log {
                Some(p) => {
                    fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?
                }
                None => print!("{csv}"),
            }
            if let Some(p) = report {
                fs::write(&p, summarize(&out.log).to_string())
                    .with_context(|| format!("writing {}", p.display()))?;
            }
            if let Some(p) = tap_trace {
                let mut text = String::from("cycle,tms,tdi,tdo\n");
                for r in out.manager.tap.trace() {
                    text.push_str(&r.to_string());
                    text.push('\n');
                }
                fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Timing {
            nodes,
            tck,
            mode,
            config_cycles,
        } => {
            let mut p = TimingParams {
                f_tck: tck,
                n_nodes: nodes,
                mode,
                ..TimingParams::default()
            };
            if let Some(c) = config_cycles {
                match mode {
                    Mode::Best => p.config_cycles_initial = c,
                    Mode::Worst => p.config_cycles_full = c,
                }
            }
            println!("mode: {mode}");
            println!("nodes: {nodes}");
            println!("f_tck_hz: {tck}");
            println!("config_cycles_initial: {}", p.config_cycles_initial);
            println!("config_cycles_full: {}", p.config_cycles_full);
            println!(
                "{:<13} {:>14} {:>14} {:>14}",
                "test", "t_con_s", "t_test_s", "t_total_s"
            );
            for kind in [
                TestKind::Dc,
                TestKind::Interconnect,
                TestKind::Duty,
                TestKind::Spectrum,
            ] {
                let r = timing::t_total(&p, kind);
                println!(
                    "{:<13} {:>14.9} {:>14.9} {:>14.9}",
                    kind.name(),
                    r.t_con,
                    r.t_test,
                    r.t_total
                );
            }
            println!("loop_rate_hz: {:.4}", timing::loop_rate(&p));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
