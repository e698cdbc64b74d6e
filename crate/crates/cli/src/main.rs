use clap::Parser;
use geomesh_cli::args::Cli;
use geomesh_cli::commands::{dispatch, Globals};
use geomesh_cli::run::{CliError, RunDir};
use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let globals = Globals {
        seed: cli.seed,
        thresholds: cli.thresholds.clone(),
        outdoor_only: cli.outdoor_only,
    };
    let name = cli.command.name();
    let mut run = RunDir::new(&cli.out, &format!("{name} {argv:?} {:?}", cli.seed));
    let result = dispatch(&cli.command, &globals, &mut run).and_then(|()| run.finish(name, argv, cli.seed));
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            let err = CliError::from(err);
            eprintln!("error: {err}");
            run.fail(&err);
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
