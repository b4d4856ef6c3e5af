//! `tandem` — closed-form precision sweeps, Monte-Carlo simulation, and
//! single-epoch solving for lidar-aided GNSS ambiguity resolution.
//!
//! Every command is deterministic: the same configuration and seed render
//! byte-identical output files. Exit codes: 0 on success, 2 for usage or
//! configuration errors, 3 for numerical or geometric failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tandem::adop::{RATIO_CURVE_CSV_HEADER, SWEEP_CSV_HEADER};
use tandem::config::CliConfig;
use tandem::fusion::EpochBundle;
use tandem::sim::{self, EPOCH_CSV_HEADER, GRID_CSV_HEADER};
use tandem::{Error, Result};
use tandem_cli::{commands, presets};

/// Prints a line to stdout, tolerating a closed pipe (e.g. `… | head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "tandem", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file (sectioned key = value text).
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Named parameter set (fig2a, fig2b, fig4a, fig4b, fig6a, fig6b,
    /// fig6c, l1_lidar, l1_only_far).
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,

    /// Overrides run.seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Directory the output files go to (created if missing).
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Single-setting override, e.g. `--set gnss.sigma_p=0.3`; repeatable,
    /// applied in order after the preset or config file.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form ADOP and success-rate scan over constellation sizes,
    /// one row per (size, variant); writes adop_scan.csv.
    AdopScan,
    /// Exact and approximate ADOP-ratio versus constellation size; writes
    /// ratio_curve.csv.
    RatioCurve,
    /// Integrated ADOP averaged over keypoint placements on an
    /// (m, sigma_L) grid; writes success_grid.csv.
    SuccessGrid,
    /// Monte-Carlo epoch simulation with estimation and fixing; writes
    /// epochs.csv and summary.json.
    Simulate {
        /// Also write the first solved epoch as a reusable bundle.json.
        #[arg(long)]
        dump_bundle: bool,
    },
    /// Solve one recorded epoch bundle and print the outcome as JSON.
    SolveEpoch {
        /// Bundle file, as written by `simulate --dump-bundle`.
        bundle: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 3 })
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::AdopScan => {
            let rows = commands::adop_scan_rows(&cfg)?;
            write_file(
                &cli.out,
                "adop_scan.csv",
                commands::render_csv(SWEEP_CSV_HEADER, rows.iter().map(|r| r.to_csv())),
            )
        }
        Command::RatioCurve => {
            let rows = commands::ratio_curve_rows(&cfg)?;
            write_file(
                &cli.out,
                "ratio_curve.csv",
                commands::render_csv(
                    RATIO_CURVE_CSV_HEADER,
                    rows.iter().map(|r| r.to_ratio_curve_csv()),
                ),
            )
        }
        Command::SuccessGrid => {
            let cells = sim::adop_success_grid(&cfg)?;
            write_file(
                &cli.out,
                "success_grid.csv",
                commands::render_csv(GRID_CSV_HEADER, cells.iter().map(|c| c.to_csv())),
            )
        }
        Command::Simulate { dump_bundle } => simulate(&cfg, cli, *dump_bundle),
        Command::SolveEpoch { bundle } => {
            let bundle = EpochBundle::from_json_str(&fs::read_to_string(bundle)?)?;
            let report = commands::solve_epoch_report(&bundle, &cfg)?;
            say!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn simulate(cfg: &CliConfig, cli: &Cli, dump_bundle: bool) -> Result<()> {
    let outcome = sim::run_experiment(cfg)?;
    write_file(
        &cli.out,
        "epochs.csv",
        commands::render_csv(EPOCH_CSV_HEADER, outcome.records.iter().map(|r| r.to_csv())),
    )?;
    let mut summary = serde_json::to_string_pretty(&outcome.summary)?;
    summary.push('\n');
    write_file(&cli.out, "summary.json", summary)?;
    if dump_bundle {
        let bundle = outcome.first_bundle.as_ref().ok_or_else(|| {
            Error::Numerical("no epoch produced a solution; nothing to bundle".into())
        })?;
        let mut text = bundle.to_json_string()?;
        text.push('\n');
        write_file(&cli.out, "bundle.json", text)?;
    }
    let s = &outcome.summary;
    say!(
        "{} epochs solved, {} failed; fix rate {:.4}, empirical success {:.4}, fixed 3-D RMSE {:.4} m",
        s.solved_epochs, s.failed_epochs, s.fix_rate, s.empirical_success_rate, s.fixed_rmse_3d,
    );
    Ok(())
}

/// Builds the effective configuration: preset or config file (or the
/// defaults), then `--set` overrides in order, then `--seed`.
fn resolve_config(cli: &Cli) -> Result<CliConfig> {
    let mut cfg = match (&cli.preset, &cli.config) {
        (Some(name), _) => presets::preset(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown preset '{name}'; available presets: {}",
                presets::PRESET_NAMES.join(", ")
            ))
        })?,
        (None, Some(path)) => CliConfig::from_str(&fs::read_to_string(path)?)?,
        (None, None) => CliConfig::default(),
    };
    for assignment in &cli.set {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "override '{assignment}' is not of the form section.key=value"
            ))
        })?;
        cfg.apply_override(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(dir: &Path, name: &str, contents: String) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    say!("wrote {}", path.display());
    Ok(())
}
