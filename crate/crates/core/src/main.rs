use clap::Parser;

use bsde_lab::cli::{execute, Cli};
use bsde_lab::generator::GeneratorRegistry;

fn main() {
    let cli = Cli::parse();
    std::process::exit(execute(&cli, &GeneratorRegistry::new()));
}
