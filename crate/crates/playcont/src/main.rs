use clap::Parser;

fn main() -> std::process::ExitCode {
    playcont::cli::run(playcont::cli::Cli::parse())
}
