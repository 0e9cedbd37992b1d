use clap::Parser;

fn main() {
    let cli = nagmcmc::cli::Cli::parse();
    std::process::exit(nagmcmc::cli::run(cli));
}
