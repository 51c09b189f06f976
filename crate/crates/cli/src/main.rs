use clap::Parser;

fn main() {
    let cli = afkit_cli::Cli::parse();
    if let Err(e) = afkit_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
