use clap::Parser;
use graspkg::cli::{run, Artifacts, Cli};

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut artifacts = Artifacts::default();
    if let Err(e) = run(cli, &mut artifacts) {
        artifacts.cleanup();
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
