use std::process::ExitCode;

use clap::Parser;
use shapelift::cli::{run, Cli};

fn main() -> ExitCode {
    // clap would exit with 2 on bad usage, which is reserved for
    // non-convergence here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
