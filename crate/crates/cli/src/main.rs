use clap::Parser;

fn main() {
    let cli = oppweb_cli::Cli::parse();
    oppweb_cli::init_logging();
    if let Err(e) = oppweb_cli::run(cli) {
        eprintln!("oppweb: {e}");
        std::process::exit(e.code());
    }
}
