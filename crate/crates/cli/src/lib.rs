//! The `lgf` command line.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{parse_config, ConfigError, KEYS};

pub const COMMANDS: &[(&str, &str)] = &[
    ("synth", "write a synthetic train/test dataset"),
    ("train", "train a model and save a checkpoint"),
    ("eval", "evaluate a checkpoint on test data"),
    ("ablate", "train and evaluate all five model variants"),
    ("gradcheck", "compare tape gradients with finite differences"),
    ("inspect-graph", "export one window's correlation graph"),
];

fn flag(name: &str) -> String {
    name.replace('_', "-")
}

pub fn command() -> Command {
    let mut args = vec![Arg::new("config")
        .long("config")
        .value_name("FILE")
        .value_parser(clap::value_parser!(PathBuf))
        .help("key=value config file; flags override it")];
    for k in KEYS {
        let mut arg = Arg::new(k.name)
            .long(flag(k.name))
            .value_name("VALUE")
            .help(k.help)
            .action(ArgAction::Set);
        if k.name.contains('_') {
            arg = arg.alias(k.name);
        }
        if k.switch {
            arg = arg.num_args(0..=1).default_missing_value("true");
        }
        args.push(arg);
    }
    Command::new("lgf")
        .about("Graph-based fault diagnosis for multivariate time series")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands(
            COMMANDS
                .iter()
                .map(|(name, about)| Command::new(*name).about(*about).args(args.clone())),
        )
}

fn overrides(matches: &ArgMatches) -> Vec<(String, String)> {
    KEYS.iter()
        .filter_map(|k| {
            matches
                .get_one::<String>(k.name)
                .map(|v| (k.name.to_string(), v.clone()))
        })
        .collect()
}

fn dispatch(name: &str, matches: &ArgMatches) -> anyhow::Result<i32> {
    let config = parse_config(
        matches.get_one::<PathBuf>("config").map(PathBuf::as_path),
        &overrides(matches),
    )?;
    commands::write_resolved(&config)?;
    match name {
        "synth" => commands::synth(&config)?,
        "train" => commands::train_command(&config)?,
        "eval" => commands::eval(&config)?,
        "ablate" => commands::ablate(&config)?,
        "gradcheck" => {
            if !commands::gradcheck(&config)? {
                return Ok(1);
            }
        }
        "inspect-graph" => commands::inspect_graph(&config)?,
        other => unreachable!("unregistered command {other}"),
    }
    Ok(0)
}

/// Runs one command line (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match dispatch(name, sub) {
        Ok(code) => code,
        Err(e) => {
            if e.downcast_ref::<ConfigError>().is_none() {
                log::debug!("{e:?}");
            }
            eprintln!("error: {e:#}");
            1
        }
    }
}
