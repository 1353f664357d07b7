//! The `deepforest` command line: dataset preparation, CNN training, deep
//! feature extraction, forest fitting and evaluation, alone or chained.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;

use clap::{Arg, ArgAction, ArgMatches, Command};

pub use commands::Artifacts;
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PREPARE: i32 = 2;
pub const EXIT_TRAIN: i32 = 3;
pub const EXIT_EXTRACT: i32 = 4;
pub const EXIT_FIT_FOREST: i32 = 5;
pub const EXIT_EVALUATE: i32 = 6;

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl fmt::Display) -> Self {
        CliError {
            code,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

const SUBCOMMANDS: [(&str, &str); 6] = [
    ("prepare", "Index a dataset tree (or generate a synthetic one) and write index.csv"),
    ("train", "Train the CNN; writes model.grnm, history.csv and train_summary.txt"),
    ("extract", "Write deep-feature matrices for the train, val and test splits"),
    ("fit-forest", "Fit the random forest on the training features"),
    ("evaluate", "Compare softmax and forest predictions; write the report CSVs"),
    ("pipeline", "Run prepare, train, extract, fit-forest and evaluate in order"),
];

pub fn command() -> Command {
    let mut common: Vec<Arg> = vec![
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value settings file; flags override it"),
        Arg::new("synthetic")
            .long("synthetic")
            .value_name("KEY=VALUE")
            .num_args(1..)
            .help("generate a synthetic dataset: classes, per-class, size, pairs, hue-delta, seed, clutter"),
        Arg::new("no-bootstrap")
            .long("no-bootstrap")
            .action(ArgAction::SetTrue)
            .help("grow every tree on all training rows"),
        Arg::new("skip-train")
            .long("skip-train")
            .action(ArgAction::SetTrue)
            .help("reuse an existing model.grnm instead of training"),
    ];
    for (key, value_name, help) in config::KEYS {
        common.push(Arg::new(*key).long(*key).value_name(*value_name).help(*help));
    }
    Command::new("deepforest")
        .about("Deep-feature random forests on a 4-layer CNN")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands(
            SUBCOMMANDS
                .iter()
                .map(|(name, about)| {
                    Command::new(*name)
                        .about(*about)
                        .args_override_self(true)
                        .args(common.clone())
                }),
        )
}

/// Defaults, then the `--config` file, then flags.
pub fn resolve_config(m: &ArgMatches) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        cfg.apply_file(path.as_ref())?;
    }
    for (key, _, _) in config::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    if let Some(tokens) = m.get_many::<String>("synthetic") {
        let joined: Vec<&str> = tokens.map(String::as_str).collect();
        cfg.set("synthetic", &joined.join(" "))?;
    }
    if m.get_flag("no-bootstrap") {
        cfg.forest.bootstrap = false;
    }
    if m.get_flag("skip-train") {
        cfg.skip_train = true;
    }
    Ok(cfg)
}

/// Runs one invocation. Data and written paths go to `out`, diagnostics to
/// `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    EXIT_USAGE
                }
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let cfg = match resolve_config(sub) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let mut ctx = commands::Context::new(cfg, out, err);
    let result = match name {
        "prepare" => ctx.prepare().map(|_| ()),
        "train" => ctx.train().map(|_| ()),
        "extract" => ctx.extract(),
        "fit-forest" => ctx.fit_forest().map(|_| ()),
        "evaluate" => ctx.evaluate().map(|_| ()),
        "pipeline" => ctx.pipeline().map(|_| ()),
        other => unreachable!("unknown subcommand {other}"),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(ctx.err, "error: {e}");
            e.code
        }
    }
}
