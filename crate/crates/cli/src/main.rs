use clap::Parser;

use wtawp_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    #[cfg(feature = "parallel")]
    if cli.jobs > 1 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global();
    }
    match run(&cli) {
        Ok(dir) => println!("{}", dir.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
