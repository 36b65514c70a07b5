//! Command-line runner for the threshold test.
//!
//! Settings are layered: built-in defaults, then the file given by
//! `--config`, then individual `--key value` flags.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::Path;

use clap::{Arg, ArgAction, Command};

use crate::config::{Settings, KEYS};
use crate::error::CliError;

fn about(command: &str) -> &'static str {
    match command {
        "fit" => "fit the model to observed counts and write draws, diagnostics and reports",
        "simulate" => "draw counts from a scenario and write them as processed and raw files",
        "recover" => {
            "simulate from a scenario, fit, and compare posterior estimates with the truth"
        }
        "ppc" => "posterior predictive check of a previous fit",
        "report" => "rebuild report tables and density curves from saved draws",
        "demo" => "print the discrete inframarginality demonstrations",
        "robustness" => "fit every processing method and model variant",
        _ => "",
    }
}

/// The clap command tree; every configuration key is a flag of every subcommand.
pub fn cli() -> Command {
    let mut root = Command::new("thresholdtest")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Bayesian threshold test for disparities in disease testing")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for name in commands::COMMANDS {
        let mut sub = Command::new(name).about(about(name)).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("configuration file of `key = value` lines"),
        );
        for key in KEYS {
            let dashed = key.name.replace('_', "-");
            let mut arg = Arg::new(key.name)
                .long(dashed.clone())
                .value_name("VALUE")
                .action(ArgAction::Set)
                .help(key.help);
            if dashed != key.name {
                arg = arg.alias(key.name);
            }
            sub = sub.arg(arg);
        }
        root = root.subcommand(sub);
    }
    root
}

/// Parses `args` into a subcommand name and layered settings.
pub fn parse_args<I, T>(args: I) -> Result<(String, Settings), clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = cli().try_get_matches_from(args)?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let mut settings = Settings::default();
    if let Some(path) = sub.get_one::<String>("config") {
        settings
            .apply_file(Path::new(path))
            .map_err(|e| cli().error(clap::error::ErrorKind::InvalidValue, e.message()))?;
    }
    for key in KEYS {
        if let Some(value) = sub.get_one::<String>(key.name) {
            settings
                .set(key.name, value)
                .map_err(|e| cli().error(clap::error::ErrorKind::InvalidValue, e.message()))?;
        }
    }
    Ok((name.to_string(), settings))
}

/// Runs the program on `args` and returns the process exit code.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (command, settings) = match parse_args(args) {
        Ok(parsed) => parsed,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::run(&command, &settings) {
        Ok(()) => 0,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &CliError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}
