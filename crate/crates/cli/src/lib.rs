//! Configuration-driven experiment runner for `mqlab-core`.
//!
//! Each command reads a [`config::Config`], writes its artifacts into an output
//! directory and returns a [`output::CommandReport`] whose checks decide the
//! process exit code.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

use std::path::Path;

use anyhow::Result;

pub use commands::{cmd_encode, cmd_frontier, cmd_game, cmd_gen, cmd_run};
pub use verify::cmd_verify;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Gen,
    Run,
    Game,
    Verify,
    Encode,
    Frontier,
}

pub fn dispatch(cmd: Command, cfg: &config::Config, out: &Path) -> Result<output::CommandReport> {
    match cmd {
        Command::Gen => cmd_gen(cfg, out),
        Command::Run => cmd_run(cfg, out),
        Command::Game => cmd_game(cfg, out),
        Command::Verify => cmd_verify(cfg, out),
        Command::Encode => cmd_encode(cfg, out),
        Command::Frontier => cmd_frontier(cfg, out),
    }
}
