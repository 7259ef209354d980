use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stgame_cli::{convergence_study, init_threads, run, RunConfig};

#[derive(Parser)]
#[command(name = "stgame", version, about = "Solve and certify stochastic target games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write artifacts plus a manifest.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-solve at dyadically refined grids and report observed orders.
    Study {
        config: PathBuf,
        #[arg(long)]
        levels: usize,
    },
    /// Parse the config and check the model assumptions by sampling.
    Validate { config: PathBuf },
}

fn load(path: &PathBuf) -> Result<(RunConfig, String), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let cfg = RunConfig::from_toml_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok((cfg, text))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Run { config, output } => load(&config).and_then(|(cfg, text)| {
            let base = config.parent().map(PathBuf::from).unwrap_or_default();
            let out = output.unwrap_or_else(|| cfg.output_dir_from(&base));
            let summary = run(&cfg, &text, &out).map_err(|e| e.to_string())?;
            for line in &summary.log {
                println!("{line}");
            }
            for t in &summary.manifest.thresholds {
                println!("{t}");
            }
            println!("artifacts written to {}", summary.output_dir.display());
            Ok(summary.passed())
        }),
        Command::Study { config, levels } => load(&config).and_then(|(cfg, _)| {
            let table = convergence_study(&cfg, levels).map_err(|e| e.to_string())?;
            print!("{}", table.to_csv());
            Ok(true)
        }),
        Command::Validate { config } => load(&config).and_then(|(cfg, _)| {
            let p = stgame_cli::pipeline::prepare(&cfg).map_err(|e| e.to_string())?;
            print!("{}", p.assumptions);
            Ok(p.assumptions.all_checked_pass())
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
