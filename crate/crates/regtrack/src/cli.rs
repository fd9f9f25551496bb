//! Argument parsing and dispatch.
//!
//! Every configuration key is also a `--<key> VALUE` flag on every
//! subcommand. Precedence, lowest first: defaults, `REGTRACK_SEED`,
//! `--config FILE`, flags.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};

use crate::commands;
use crate::config::{RunConfig, KEYS};
use crate::error::{CliError, Result};
use crate::selftest::selftest;

fn with_config_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(value_parser!(PathBuf))
            .help("Configuration file of `key = value` lines"),
    );
    KEYS.iter().fold(cmd, |c, k| {
        c.arg(
            Arg::new(k.name)
                .long(k.name)
                .value_name("VALUE")
                .help(k.help)
                .help_heading("Configuration"),
        )
    })
}

fn out_arg(required: bool) -> Arg {
    Arg::new("out")
        .long("out")
        .value_name("DIR")
        .help("Output directory")
        .required(required)
        .value_parser(value_parser!(PathBuf))
}

fn paths(name: &'static str, value: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .value_name(value)
        .required(true)
        .value_parser(value_parser!(PathBuf))
        .help(help)
}

pub fn command() -> Command {
    let sub =
        |name: &'static str, about: &'static str| with_config_args(Command::new(name).about(about));
    Command::new("regtrack")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Registration-aided single-object tracking on synthetic point clouds")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            sub("synth", "Write synthetic sequences")
                .arg(out_arg(true))
                .arg(
                    Arg::new("count")
                        .long("count")
                        .default_value("1")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("ply")
                        .long("ply")
                        .action(ArgAction::SetTrue)
                        .help("Also write PLY frames"),
                ),
        )
        .subcommand(
            sub("register", "Register two XYZ clouds")
                .arg(paths("template", "TEMPLATE", "Template cloud"))
                .arg(paths("search", "SEARCH", "Search cloud"))
                .arg(out_arg(false)),
        )
        .subcommand(
            sub("track", "Track sequences in every configured mode")
                .arg(paths("inputs", "DIRS", "Sequence directories or their parents").num_args(1..))
                .arg(out_arg(true)),
        )
        .subcommand(
            sub(
                "eval",
                "Per-frame losses of a sequence, plus report metrics",
            )
            .arg(paths("sequence", "SEQUENCE", "Sequence directory"))
            .arg(
                Arg::new("report")
                    .long("report")
                    .value_name("FILE")
                    .value_parser(value_parser!(PathBuf)),
            )
            .arg(out_arg(false)),
        )
        .subcommand(
            sub("weights", "Write the seeded (or loaded) weights").arg(
                Arg::new("out")
                    .long("out")
                    .value_name("FILE")
                    .help("Output weight file")
                    .required(true)
                    .value_parser(value_parser!(PathBuf)),
            ),
        )
        .subcommand(sub("selftest", "Run quick invariant checks"))
        .subcommand(
            Command::new("rerun")
                .about("Replay a run from its manifest.json")
                .arg(paths("manifest", "MANIFEST", "Manifest file"))
                .arg(out_arg(true)),
        )
}

fn resolve(m: &ArgMatches) -> Result<RunConfig> {
    let overrides: Vec<(String, String)> = KEYS
        .iter()
        .filter_map(|k| {
            m.get_one::<String>(k.name)
                .map(|v| (k.name.to_string(), v.clone()))
        })
        .collect();
    RunConfig::resolve(
        m.get_one::<PathBuf>("config").map(PathBuf::as_path),
        &overrides,
    )
}

fn path<'a>(m: &'a ArgMatches, id: &str) -> &'a PathBuf {
    m.get_one::<PathBuf>(id).expect("required by clap")
}

/// Parses `args` (including the program name) and runs the subcommand,
/// returning what should be printed on stdout.
pub fn run<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            return Ok(e.to_string());
        }
        Err(e) => {
            let text = e.render().to_string();
            return Err(CliError::Usage(
                text.trim_start_matches("error: ").trim_end().to_string(),
            ));
        }
    };
    let (name, m) = matches.subcommand().expect("subcommand required");
    if name == "rerun" {
        return commands::rerun(path(m, "manifest"), path(m, "out"));
    }
    let cfg = resolve(m)?;
    let out = m
        .try_get_one::<PathBuf>("out")
        .ok()
        .flatten()
        .map(PathBuf::as_path);
    match name {
        "synth" => commands::synth(
            &cfg,
            path(m, "out"),
            *m.get_one("count").expect("defaulted"),
            m.get_flag("ply"),
        ),
        "register" => commands::register_files(&cfg, path(m, "template"), path(m, "search"), out),
        "track" => {
            let inputs: Vec<PathBuf> = m
                .get_many::<PathBuf>("inputs")
                .expect("required")
                .cloned()
                .collect();
            commands::track(&cfg, &inputs, path(m, "out"))
        }
        "eval" => commands::eval(
            &cfg,
            path(m, "sequence"),
            m.get_one::<PathBuf>("report").map(PathBuf::as_path),
            out,
        ),
        "weights" => commands::weights(&cfg, path(m, "out")),
        "selftest" => selftest(&cfg),
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}
