use clap::Parser;

fn main() {
    let cli = telegraph_cli::Cli::parse();
    match telegraph_cli::run(cli) {
        Ok(files) => eprintln!("wrote {} files", files.len()),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
