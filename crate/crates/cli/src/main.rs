use clap::Parser;

fn main() {
    let cli = modmoe_cli::Cli::parse();
    match modmoe_cli::run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
