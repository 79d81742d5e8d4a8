use clap::Parser;

fn main() {
    let cli = topicsum_cli::Cli::parse();
    if let Err(e) = topicsum_cli::run(cli, std::env::vars()) {
        eprintln!("error: {e}");
        std::process::exit(topicsum_cli::exit_code(&e));
    }
}
