use clap::Parser;

use stopping_control::cli::{run, Args};

fn main() {
    std::process::exit(run(&Args::parse()));
}
