use clap::Parser;
use ice_cli::cli::{Cli, Plan};
use ice_cli::{execute, replay, CliError};

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))?;
    }
    let doc = match cli.command.plan()? {
        Plan::Run { config, out } => {
            let doc = execute(&config, &out, cli.stamp)?;
            eprintln!("wrote {} to {}", doc.outputs.join(", "), out.display());
            doc
        }
        Plan::Replay { from, out } => {
            let doc = replay(&from, &out, cli.stamp)?;
            eprintln!("replayed {} into {}", from.display(), out.display());
            doc
        }
    };
    log::debug!("{}", doc.summary);
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
