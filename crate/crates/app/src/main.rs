use clap::Parser;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    cbm_app::cli::run(cbm_app::cli::Cli::parse())
}
