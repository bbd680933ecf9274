use clap::Parser;

fn main() {
    std::process::exit(simdim::run(simdim::Cli::parse()));
}
