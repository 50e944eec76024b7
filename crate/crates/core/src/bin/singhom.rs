use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

/// Quasiconvex envelopes, laminates and homogenized densities from a JSON
/// run config.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: ./out, or output.dir from the config].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads [default: all cores].
    #[arg(long)]
    threads: Option<usize>,
    /// Suppress diagnostics on stderr.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(t) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("cannot configure {t} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let status = singhom::cli::run(&args.config, args.out.as_deref());
    if !args.quiet {
        for d in &status.diagnostics {
            eprintln!("{d}");
        }
        if status.code == 0 {
            eprintln!("results in {}", status.out_dir.display());
        }
    }
    ExitCode::from(status.code as u8)
}
