mod cli;
mod commands;
mod config;
mod error;
mod workspace;

use std::panic;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::{Map, Value};

use crate::cli::Cli;
use crate::error::{CliError, Kind};

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json_line());
    ExitCode::from(e.kind.exit_code() as u8)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let ctx = commands::Context::new(cli)?;
    let report = commands::run(&ctx, &cli.command)?;
    let timings = ctx.timings();
    if cli.json {
        let mut doc = Map::new();
        doc.insert(
            "command".into(),
            commands::command_name(&cli.command).into(),
        );
        doc.insert("seed".into(), ctx.seed.into());
        doc.extend(report.fields);
        let t: Map<String, Value> = timings
            .iter()
            .map(|(k, v)| (format!("{k}_seconds"), (*v).into()))
            .collect();
        doc.insert("timings".into(), Value::Object(t));
        println!("{}", Value::Object(doc));
    } else {
        for l in &report.lines {
            println!("{l}");
        }
        for (phase, secs) in &timings {
            eprintln!("incubator: {phase} took {secs:.3}s");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => fail(&CliError::user(
                    e.render().to_string().trim().replace('\n', " "),
                )),
            };
        }
    };
    panic::set_hook(Box::new(|info| {
        let e = CliError {
            kind: Kind::Internal,
            message: info.to_string().replace('\n', " "),
        };
        eprintln!("{}", e.to_json_line());
    }));
    match panic::catch_unwind(|| execute(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => fail(&e),
        Err(_) => ExitCode::from(Kind::Internal.exit_code() as u8),
    }
}
