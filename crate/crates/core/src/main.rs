use clap::Parser;

fn main() {
    let cli = invforge::cli::Cli::parse();
    if let Err(e) = invforge::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
