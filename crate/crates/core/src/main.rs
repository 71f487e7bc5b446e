use clap::Parser;

use mondrian::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("mondrian: {e}");
        std::process::exit(e.exit_code());
    }
}
