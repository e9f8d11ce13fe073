mod args;
mod commands;
mod report;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Usage = 2,
    Io = 3,
    Decode = 4,
    Format = 5,
    Shape = 6,
    Config = 7,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn new(exit: Exit, message: impl Into<String>) -> Self {
        Self {
            exit,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(Exit::Io, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            if e.exit == Exit::Usage {
                eprintln!("\nFor more information, try '--help'.");
            }
            ExitCode::from(e.exit as u8)
        }
    }
}
