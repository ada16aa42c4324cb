use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = bowsim_cli::Cli::parse();
    match bowsim_cli::run(cli) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", outcome.dir.join(f).display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
