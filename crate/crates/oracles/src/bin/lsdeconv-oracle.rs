use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "lsdeconv-oracle", about = "Reference computations for the lsdeconv test suite")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Recompute every frozen reference file.
    RegenFixtures {
        /// Target directory; the core crate's tests/fixtures by default.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let Cli { command } = Cli::parse();
    match command {
        Cmd::RegenFixtures { dir } => {
            let dir = dir.unwrap_or_else(lsdeconv_oracles::fixtures::default_dir);
            match lsdeconv_oracles::fixtures::regenerate(&dir) {
                Ok(files) => {
                    for f in files {
                        println!("{}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
