use clap::Parser;
use fgn_cli::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = fgn_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
