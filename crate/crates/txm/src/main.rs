use clap::Parser;
use txm::commands::{error_line, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("{}", error_line(&e));
        std::process::exit(e.exit_code());
    }
}
