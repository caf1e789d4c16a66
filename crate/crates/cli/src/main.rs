mod args;
mod commands;
mod error;
mod output;
mod pipeline;
mod schema;
mod summary;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};

fn dispatch(cli: Cli) -> CliResult<()> {
    if cli.schema {
        return output::emit(&output::json_bytes(&schema::annotation_schema()), None);
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no subcommand given; see --help".into()));
    };
    match command {
        Command::Validate { input, output } => commands::validate_cmd(&input, &output),
        Command::Agreement {
            input,
            agreement,
            class,
            dump_raster,
            output,
        } => commands::agreement_cmd(&input, &agreement, class.as_deref(), dump_raster.as_deref(), &output),
        Command::Vitality {
            input,
            agreement,
            annotator,
            output,
        } => commands::vitality_cmd(&input, &agreement, annotator.as_deref(), &output),
        Command::Difficulty {
            input,
            agreement,
            class,
            output,
        } => commands::difficulty_cmd(&input, &agreement, class.as_deref(), &output),
        Command::Curate {
            input,
            recipe,
            agreement,
            top,
            images,
            annotator,
            output,
        } => commands::curate_cmd(&input, recipe, &agreement, &top, &images, annotator.as_deref(), &output),
        Command::Eval {
            predictions,
            gt,
            eval,
            output,
        } => commands::eval_cmd(&predictions, &gt, &eval, &output),
        Command::Simulate { config, seed, out } => {
            for path in commands::simulate_cmd(&config, seed, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Report {
            input,
            agreement,
            out,
            format,
        } => commands::report_cmd(&input, &agreement, format, out.as_deref()),
        Command::Run { config, out } => {
            let mut cfg = pipeline::RunConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            for path in pipeline::run_pipeline(&cfg)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 5 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
