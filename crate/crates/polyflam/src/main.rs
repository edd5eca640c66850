use clap::Parser;

fn main() {
    let cli = polyflam::cli::Cli::parse();
    if let Err(e) = polyflam::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
