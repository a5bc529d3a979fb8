use clap::Parser;

fn main() -> anyhow::Result<()> {
    supercap::cli::run(supercap::cli::Cli::parse())
}
