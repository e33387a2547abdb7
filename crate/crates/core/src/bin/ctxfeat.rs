use clap::Parser;
use ctxfeat::commands::{configure_threads, execute, Cli};

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.threads {
        std::env::set_var("RAYON_NUM_THREADS", n.to_string());
        if let Err(e) = configure_threads(n) {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
    if let Err(e) = execute(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
