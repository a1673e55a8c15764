#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod cli;
mod commands;
mod table;

use std::process::ExitCode;

use clap::Parser;

use cli::Cli;
use commands::Status;

const EXIT_INPUT: u8 = 2;
const EXIT_INCOMPLETE: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|c| {
        matches!(
            c.downcast_ref::<wss_core::Error>(),
            Some(wss_core::Error::Numerical(_))
        )
    });
    if numerical {
        EXIT_INCOMPLETE
    } else {
        EXIT_INPUT
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Incomplete) => ExitCode::from(EXIT_INCOMPLETE),
        Err(err) => {
            eprintln!("wss: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
