use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use srl::commands::{self, Command, Context};
use srl::config::{self, ConfigSource};
use srl::CliError;

/// Mean-field and master-equation models of a pumped superradiant laser.
#[derive(Parser, Debug)]
#[command(name = "srl", version)]
struct Cli {
    /// What to compute.
    #[arg(value_enum)]
    command: Command,

    /// TOML configuration file, merged over the preset it names.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Built-in parameter set.
    #[arg(long, short, value_parser = clap::builder::PossibleValuesParser::new(config::PRESETS.iter().map(|(n, _)| *n)))]
    preset: Option<String>,

    /// Override one key, e.g. `--set params.eta=1e5` or `--set sweep.n_axis.count=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,

    /// Print the resolved configuration and the work planned, then exit.
    #[arg(long)]
    dry_run: bool,

    /// Worker threads for sweeps and scans.
    #[arg(long, short = 'j', env = "SRL_WORKERS")]
    workers: Option<usize>,

    /// Sweep checkpoint file; an existing one is resumed.
    #[arg(long, visible_alias = "resume")]
    checkpoint: Option<PathBuf>,

    /// Sample the spectrum on the fixed grid of the original figure.
    #[arg(long)]
    faithful_fig3: bool,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut overrides = cli.overrides.clone();
    if cli.faithful_fig3 {
        overrides.push("spectrum.faithful_fig3=true".into());
    }
    let cfg = config::load(&ConfigSource {
        preset: cli.preset.as_deref(),
        file: cli.config.as_deref(),
        overrides: &overrides,
    })?;
    let ctx = Context {
        out_dir: cli.out.clone(),
        workers: cli.workers,
        checkpoint: cli.checkpoint.clone(),
    };
    // a closed stdout (e.g. piped into `head`) is not an error
    let mut stdout = std::io::stdout().lock();
    if cli.dry_run {
        let _ = write!(stdout, "{}", commands::plan(cli.command, &cfg, &ctx)?);
        return Ok(());
    }
    let report = commands::run(cli.command, &cfg, &ctx)?;
    let _ = write!(stdout, "{}", report.summary);
    for a in &report.artifacts {
        let _ = writeln!(stdout, "wrote {} (sha256 {})", a.path.display(), &a.sha256[..16]);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("srl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
