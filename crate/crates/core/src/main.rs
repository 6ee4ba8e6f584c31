use clap::Parser;
use robust_smoother::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
