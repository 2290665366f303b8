use clap::Parser;

fn main() {
    let cli = bibldr::cli::Cli::parse();
    match bibldr::cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
