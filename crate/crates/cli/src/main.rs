use clap::error::ErrorKind;
use clap::Parser;
use metamer_cli::commands::{run, Cli};
use metamer_cli::CliError;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_line());
            std::process::exit(err.exit_code());
        }
    };
    match run(cli) {
        Ok(serde_json::Value::Null) => {}
        Ok(v) => println!("{v}"),
        Err(e) => {
            eprintln!("{}", e.to_line());
            std::process::exit(e.exit_code());
        }
    }
}
