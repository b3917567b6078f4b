use clap::Parser;

fn main() {
    let cli = circlefib_cli::Cli::parse();
    std::process::exit(circlefib_cli::run(&cli));
}
