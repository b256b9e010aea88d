use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use star_fri::experiments::{
    run_experiment, write_outputs, ExperimentConfig, ExperimentKind, Method, MetricsRecord, VERSION,
};

const ABOUT: &str = "Monte Carlo experiments for gridless STAR-RIS DOA estimation.";

const LONG_ABOUT: &str = "\
Monte Carlo experiments for gridless STAR-RIS DOA estimation.

Each subcommand starts from a preset, applies the TOML file given with
--config, then applies any command-line flags. Results are written as CSV
files plus a run.json manifest into --out.

Errors are scored in full space: a reflection-side angle theta maps to theta,
a transmission-side angle maps to 180 - theta, and differences are wrapped to
(-180, 180]. Estimates are matched to users by minimum total squared error, so
a user reported on the wrong side counts as a large error rather than a
relabeling. RMSE is taken over successful trials only; a trial succeeds when
every matched error is within the success threshold.";

#[derive(Parser)]
#[command(name = "star-fri", version, about = ABOUT, long_about = LONG_ABOUT)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Annihilating-filter spectra for one scene (trial 0).
    Spectrum(Overrides),
    /// Success probability and RMSE at fixed SNR.
    Sweep(Overrides),
    /// Mean per-iteration residual of the iterative solvers.
    Convergence(Overrides),
    /// RMSE against SNR, with the Ziv-Zakai bound.
    Snr(Overrides),
    /// Mean per-trial runtime of each method.
    Timing(Overrides),
    /// RMSE against surface size.
    Aperture(Overrides),
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// TOML file with configuration keys; flags take precedence.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// 1 for uniform energy splitting, 2 for non-uniform.
    #[arg(long)]
    scenario: Option<u8>,
    /// Surface sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Number of time slots.
    #[arg(long)]
    ts: Option<usize>,
    /// Users in the reflection half-space.
    #[arg(long)]
    kr: Option<usize>,
    /// Users in the transmission half-space.
    #[arg(long)]
    kt: Option<usize>,
    /// SNR points in dB, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    snr_db: Option<Vec<f64>>,
    /// Synthesize noise-free observations.
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Methods, comma separated: m1, m2, fft, omp, sbl.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Evaluate the Ziv-Zakai bound for every trial.
    #[arg(long)]
    bound: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "PATH", default_value = "out")]
    out: PathBuf,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

impl Overrides {
    fn resolve(&self, kind: ExperimentKind) -> Result<ExperimentConfig, String> {
        let base = ExperimentConfig::preset(kind);
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                ExperimentConfig::from_toml(&text, &base).map_err(|e| format!("{}: {e}", path.display()))?
            }
            None => base,
        };
        if cfg.experiment != kind {
            return Err(format!(
                "config file describes '{}' but the subcommand is '{}'",
                cfg.experiment.name(),
                kind.name()
            ));
        }
        if let Some(v) = self.scenario {
            cfg.scenario = v;
        }
        if let Some(v) = &self.n {
            cfg.n = v.clone();
        }
        if let Some(v) = self.ts {
            cfg.t_s = v;
        }
        if let Some(v) = self.kr {
            cfg.k_r = v;
        }
        if let Some(v) = self.kt {
            cfg.k_t = v;
        }
        if let Some(v) = &self.snr_db {
            cfg.snr_db = v.clone();
        }
        cfg.noiseless |= self.noiseless;
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.methods {
            cfg.methods = v.clone();
        }
        cfg.compute_bound |= self.bound;
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

fn print_table(records: &[MetricsRecord]) {
    println!(
        "{:<6} {:>4} {:>7} {:>8} {:>9} {:>10} {:>9} {:>12}",
        "method", "n", "snr_db", "trials", "p_succ", "rmse_deg", "iters", "runtime_ms"
    );
    for r in records {
        let snr = r.snr_db.map_or("inf".to_string(), |s| format!("{s:.1}"));
        let rmse = r.rmse_deg.map_or("-".to_string(), |v| format!("{v:.4}"));
        let iters = r.mean_iterations.map_or("-".to_string(), |v| format!("{v:.1}"));
        println!(
            "{:<6} {:>4} {:>7} {:>8} {:>9.3} {:>10} {:>9} {:>12.3}",
            r.method.name(),
            r.n,
            snr,
            r.trials,
            r.success_prob,
            rmse,
            iters,
            r.mean_runtime_s * 1e3
        );
    }
}

fn run(kind: ExperimentKind, ov: &Overrides) -> Result<(), String> {
    let cfg = ov.resolve(kind)?;
    if ov.print_config {
        print!("{}", cfg.to_toml().map_err(|e| e.to_string())?);
        return Ok(());
    }
    eprintln!("{VERSION}: running '{}' ({} trials per point)", kind.name(), cfg.trials);
    let out = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let files = write_outputs(&out, &ov.out).map_err(|e| e.to_string())?;
    print_table(&out.records);
    for b in &out.bounds {
        println!("zzb n={} snr_db={:.1}: rmse bound {:.4} deg", b.n, b.snr_db, b.zzb_rmse_deg);
    }
    eprintln!("wrote {} to {}", files.join(", "), ov.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, ov) = match &cli.command {
        Command::Spectrum(o) => (ExperimentKind::Spectrum, o),
        Command::Sweep(o) => (ExperimentKind::FullSpaceSweep, o),
        Command::Convergence(o) => (ExperimentKind::Convergence, o),
        Command::Snr(o) => (ExperimentKind::SnrSweep, o),
        Command::Timing(o) => (ExperimentKind::Timing, o),
        Command::Aperture(o) => (ExperimentKind::ApertureSweep, o),
    };
    match run(kind, ov) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
