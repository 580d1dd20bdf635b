//! Command-line front end: argument parsing, config resolution and the
//! five subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod commands;
pub mod failure;
pub mod resolve;
pub mod sweep;

use args::{Cli, Command};
use failure::CliResult;

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Verify(a) => commands::verify(a),
        Command::Sweep(a) => sweep::sweep(a),
    }
}
