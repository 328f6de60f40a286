use clap::{Parser, Subcommand};
use loopforge::cli;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "loopforge", version, about = "Loop-group pipelines for CMC surfaces")]
struct Args {
    /// Directory for meshes and reports.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for the per-point kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized checks; recorded in reports.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a pipeline config (JSON).
    Run { config: PathBuf },
    /// Run a verification suite and print its residual table.
    Verify { suite: String },
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { cli::EXIT_PARSE as u8 } else { 0 });
        }
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("thread pool: {e}");
            return ExitCode::from(cli::EXIT_PARSE as u8);
        }
    }
    let code = match args.command {
        Command::Run { config } => {
            let out = cli::run_config(&config, &args.out_dir, args.seed);
            let status = out.report["status"].as_str().unwrap_or("failed");
            println!("{status}: report {}", out.report_path.display());
            if let Some(msg) = out.report["error"]["message"].as_str() {
                eprintln!("{msg}");
                if let (Some(l), Some(c)) = (out.report["error"]["line"].as_u64(), out.report["error"]["column"].as_u64()) {
                    eprintln!("at line {l}, column {c}");
                }
            }
            let failures = if out.report["error"].is_null() { out.report["failures"].as_array() } else { None };
            for f in failures.into_iter().flatten() {
                let k = f.as_str().unwrap_or_default();
                eprintln!("residual {k} = {} exceeds {}", out.report["residuals"][k], out.report["tolerances"][k]);
            }
            out.code
        }
        Command::Verify { suite } => cli::verify(&suite, args.seed),
    };
    ExitCode::from(code as u8)
}
