use clap::Parser;
use msarea_cli::{exit_code, is_broken_pipe, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        if is_broken_pipe(&e) {
            return;
        }
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}
