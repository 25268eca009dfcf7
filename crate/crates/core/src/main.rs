use clap::Parser;

fn main() {
    let cli = scalestats::cli::Cli::parse();
    if let Err(err) = scalestats::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
