use clap::Parser;

fn main() {
    let cli = rollin_cli::Cli::parse();
    match rollin_cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
