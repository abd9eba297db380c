use clap::Parser;

fn main() {
    let cli = sdnas_cli::Cli::parse();
    if let Err(e) = sdnas_cli::run(cli) {
        eprintln!("sdnas: {e}");
        std::process::exit(e.exit_code());
    }
}
