use clap::Parser;

use kehsense::cli::{exit_code, run, Cli};

fn main() {
    let result = run(Cli::parse());
    match &result {
        Ok(text) => print!("{text}"),
        Err(e) => eprintln!("error: {e}"),
    }
    std::process::exit(exit_code(&result));
}
