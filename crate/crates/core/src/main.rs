use clap::Parser;

use scatsim::cli::{run, Args};

fn main() {
    let args = Args::parse();
    std::process::exit(run(&args));
}
