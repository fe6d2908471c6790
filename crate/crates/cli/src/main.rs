use clap::error::ErrorKind;
use clap::Parser;
use serde::Serialize;
use std::process::exit;
use wavemaps_cli::commands::{run, Outcome};
use wavemaps_cli::config::{resolve, Cli, RunConfig};

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: &'a str,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: ErrorBody<'a>,
}

/// One-line JSON error record on stderr, then the given exit code.
fn fail(kind: &str, message: &str, code: i32) -> ! {
    let record = ErrorRecord { error: ErrorBody { kind, message } };
    eprintln!(
        "{}",
        serde_json::to_string(&record).unwrap_or_else(|_| format!("{{\"error\":{{\"kind\":\"{kind}\"}}}}"))
    );
    exit(code)
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            exit(0);
        }
        Err(e) => fail("config", &e.render().to_string(), 2),
    };

    let file_config: Option<RunConfig> = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Err(e) => fail("io", &format!("cannot read config {}: {e}", path.display()), 3),
            Ok(text) => match serde_json::from_str(&text) {
                Err(e) => fail(
                    "config",
                    &format!("invalid config {}: {e}", path.display()),
                    2,
                ),
                Ok(cfg) => Some(cfg),
            },
        },
        None => None,
    };

    let cfg = resolve(&cli, file_config);
    if let Err(msg) = cfg.validate() {
        fail("config", &msg, 2);
    }

    if cli.emit_config {
        match serde_json::to_string_pretty(&cfg) {
            Ok(text) => {
                println!("{text}");
                exit(0);
            }
            Err(e) => fail("io", &format!("serialize config: {e}"), 3),
        }
    }

    let Some(command) = cfg.command else {
        fail(
            "config",
            "no command given: pass one positionally or set `command` in the config file",
            2,
        );
    };

    match run(command, &cfg) {
        Ok(Outcome::Met) => exit(0),
        Ok(Outcome::Miss(msg)) => {
            eprintln!("tolerances not met: {msg}");
            exit(1);
        }
        Err(e) => fail(e.kind(), e.message(), e.exit_code()),
    }
}
