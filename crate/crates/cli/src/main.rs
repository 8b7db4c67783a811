use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rtcouple::component::Registry;
use rtcouple::meshfield::{read_mff, write_vtk};
use rtcouple::run::{run_scenario, RunError, EXIT_INVALID, EXIT_OK};
use rtcouple::scenario::validate_file;

#[derive(Parser)]
#[command(name = "rtcouple", version, about = "Reactive-transport coupling platform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and print one line per problem.
    Validate { file: PathBuf },
    /// Run a scenario and write outputs to a directory.
    Run {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dotted-path override, e.g. coupling.mode=SNIA. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Convert an MFF snapshot to legacy VTK.
    ExportVtk { mff: PathBuf, out: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let registry = Registry::with_reference_components();
    let code = match cli.command {
        Command::Validate { file } => match validate_file(&file, &[], &registry) {
            Ok(diags) if diags.is_empty() => {
                println!("{}: ok", file.display());
                EXIT_OK
            }
            Ok(diags) => {
                for d in &diags {
                    eprintln!("{d}");
                }
                EXIT_INVALID
            }
            Err(e) => {
                eprintln!("{e}");
                EXIT_INVALID
            }
        },
        Command::Run { file, out, set } => match run_scenario(&file, out.as_deref(), &set, &registry) {
            Ok(manifest) => {
                if let Some(reason) = &manifest.failure {
                    eprintln!("run failed: {reason}");
                } else {
                    println!("completed {} steps, t = {}", manifest.steps.len(), manifest.final_time);
                }
                manifest.exit_code()
            }
            Err(e) => {
                eprintln!("{e}");
                if let RunError::Invalid(diags) = &e {
                    for d in diags {
                        eprintln!("  {d}");
                    }
                }
                e.exit_code()
            }
        },
        Command::ExportVtk { mff, out } => match read_mff(&mff).and_then(|doc| write_vtk(&out, &doc)) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("{e}");
                EXIT_INVALID
            }
        },
    };
    ExitCode::from(code as u8)
}
