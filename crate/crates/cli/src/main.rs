use clap::Parser;

fn main() {
    let cli = progsynth_cli::Cli::parse();
    if let Err(e) = progsynth_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
