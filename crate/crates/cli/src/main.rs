use clap::Parser;

fn main() {
    let cli = mmdglm_cli::Cli::parse();
    std::process::exit(mmdglm_cli::run(cli));
}
