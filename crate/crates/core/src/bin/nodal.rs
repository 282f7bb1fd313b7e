use clap::Parser;
use nodal_core::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
