mod commands;
mod settings;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use resmoco_core::{Error, ErrorKind};

use settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "resmoco", version, about = "Residual-diffusion motion-artifact correction for 2D MR slices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Render random head phantoms as clean slices.
    Phantoms,
    /// Corrupt clean slices with simulated rigid motion.
    Simulate,
    /// Train the denoiser on clean/corrupt pairs.
    Train,
    /// Remove motion artifacts with a trained checkpoint or the oracle.
    Correct,
    /// Score predicted slices against references.
    Evaluate,
    /// Print the noise schedule.
    ScheduleDump,
    /// Phantoms, simulation, training, correction and evaluation in one run.
    Experiment,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Validation => 1,
                ErrorKind::MissingResource => 2,
                ErrorKind::Numerical => 3,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RSM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let s = cli.settings.resolve()?;
    let jobs = s.jobs.unwrap_or(1);
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    match cli.command {
        Command::Phantoms => commands::phantoms(&s),
        Command::Simulate => commands::simulate(&s),
        Command::Train => commands::train(&s),
        Command::Correct => commands::correct(&s),
        Command::Evaluate => commands::evaluate(&s),
        Command::ScheduleDump => commands::schedule_dump(&s),
        Command::Experiment => commands::experiment(&s),
    }
}
