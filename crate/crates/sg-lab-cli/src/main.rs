//! `sg-lab`: run, compare, and audit gradient-identification experiments.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use sg_lab::excitation::{design_regressors, measure_kappa_profile, ExcitationMode, ExcitationSpec};
use sg_lab_cli::compare::{compare_regimes, comparison_rows, render_table, write_compare};
use sg_lab_cli::config::{CliError, CliResult, ExperimentConfig, VerifyConfig};
use sg_lab_cli::experiment::{
    run_experiment, schedule_csv_lines, write_lines_in, write_outputs, RunOptions,
};
use sg_lab_cli::verify::{require_clean, run_verification, summarize, write_verify_csv};

#[derive(Parser)]
#[command(
    name = "sg-lab",
    version,
    about = "Numerical laboratory for gradient identification under designed excitation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config and write its artifacts.
    Simulate {
        /// Experiment configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the sampling stride.
        #[arg(long)]
        stride: Option<usize>,
        /// Core recursion only: skip product tracking and block analysis.
        #[arg(long)]
        light: bool,
        /// Do not emit plot scripts.
        #[arg(long)]
        no_plots: bool,
    },
    /// Design an excitation sequence and report its conditioning profile.
    Design {
        /// Regressor dimension.
        #[arg(long)]
        dim: usize,
        /// Conditioning growth exponent.
        #[arg(long)]
        alpha: f64,
        /// Number of designed steps.
        #[arg(long)]
        horizon: usize,
        /// Energy of every step.
        #[arg(long, default_value_t = 1.0)]
        energy: f64,
        /// Sign-stream seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for design.csv and kappa.csv (stdout summary only when
        /// absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the factorial block schedule and its certificates for a config.
    Schedule {
        /// Experiment configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for schedule.csv (stdout only when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-verify bounds, certificates, and overlap estimates on randomized
    /// instances; any violation fails the command.
    VerifyBounds {
        /// Sweep configuration file (defaults apply when absent).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for verify.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the sweep seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run several configs that differ only in alpha and tabulate them.
    Compare {
        /// Configuration files (repeat the flag; at least two).
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Output directory: per-label subdirectories plus compare.csv.
        #[arg(long)]
        out: PathBuf,
        /// Do not emit plot scripts.
        #[arg(long)]
        no_plots: bool,
    },
}

fn init_threads() {
    if let Ok(value) = std::env::var("SG_LAB_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            stride,
            light,
            no_plots,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let mut opts = if light {
                RunOptions::light()
            } else {
                RunOptions::default()
            };
            opts.seed = seed;
            opts.stride = stride;
            let mut art = run_experiment(&cfg, &opts)?;
            let outputs = write_outputs(&mut art, &out, !no_plots)?;

            let s = &art.summary;
            println!("run      : {} ({} mode, dim {})", s.label, s.mode, s.dim);
            println!(
                "horizon  : {} steps, final r {:.6e}, seed {}",
                s.horizon, s.final_r, s.seed
            );
            println!(
                "estimate : error {:.6e}, residual {:.6e}",
                s.final_estimation_error, s.final_residual_norm
            );
            if let Some(t) = &s.transition {
                println!(
                    "product  : |Phi| {:.6e} (step {} checkpoint {:.6e}), monotone {}",
                    t.final_norm, t.checkpoint_step, t.checkpoint_norm, t.monotone
                );
            }
            if let Some(b) = &s.schedule {
                println!(
                    "schedule : {} blocks, boundaries {:?}, jump l {:.3}, ratio {} minimality {}",
                    b.blocks, b.boundaries, b.jump_l, b.ratio_pass, b.minimality_pass
                );
            }
            if let Some(c) = &s.criterion {
                println!(
                    "criterion: general {} log-gap {} certified {}",
                    opt(c.general_final),
                    opt(c.log_gap_final),
                    opt(c.certified_final)
                );
            }
            if let Some(pass) = s.ledger_all_pass {
                println!("ledger   : {} rows, all pass {}", art.ledger.len(), pass);
            }
            println!("outputs  : {} files in {}", outputs.len(), out.display());
            Ok(())
        }

        Command::Design {
            dim,
            alpha,
            horizon,
            energy,
            seed,
            out,
        } => {
            let spec = ExcitationSpec::new(
                dim,
                alpha,
                energy,
                horizon,
                ExcitationMode::DirectRegressor,
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            let mut rng = {
                use rand_chacha::rand_core::SeedableRng;
                rand_chacha::ChaCha8Rng::seed_from_u64(seed)
            };
            let phis = design_regressors(&spec, &mut rng)?;
            let stride = (horizon / 512).max(1);
            let profile = measure_kappa_profile(&phis, stride, alpha)?;
            let envelope = profile.max_finite_ratio();

            println!(
                "designed {} steps in dimension {} at alpha {} (energy {} per step)",
                horizon, dim, alpha, energy
            );
            match envelope {
                Some(m) => println!(
                    "conditioning envelope: kappa <= {m:.4} (log r)^{alpha} over {} samples",
                    profile.points.len()
                ),
                None => println!("conditioning profile never became nonsingular"),
            }

            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let design_lines = std::iter::once("n,axis,value".to_string()).chain(
                    phis.iter().enumerate().map(|(i, phi)| {
                        let axis = phi
                            .iter()
                            .position(|v| *v != 0.0)
                            .expect("designed steps are axis-aligned");
                        format!("{},{axis},{}", i + 1, phi[axis])
                    }),
                );
                write_lines_in(&dir, "design.csv", design_lines)?;
                let kappa_lines = std::iter::once("n,r,kappa,ratio".to_string()).chain(
                    profile
                        .points
                        .iter()
                        .map(|p| format!("{},{},{},{}", p.n, p.r, p.kappa, p.ratio)),
                );
                write_lines_in(&dir, "kappa.csv", kappa_lines)?;
                println!("wrote design.csv and kappa.csv to {}", dir.display());
            }
            Ok(())
        }

        Command::Schedule { config, seed, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let opts = RunOptions {
                seed,
                stride: None,
                track_transition: false,
                analyze_blocks: true,
            };
            let art = run_experiment(&cfg, &opts)?;
            match schedule_csv_lines(&art) {
                Some(lines) => {
                    for line in &lines {
                        println!("{}", line.replace(',', "\t"));
                    }
                    if let Some(dir) = out {
                        std::fs::create_dir_all(&dir)?;
                        write_lines_in(&dir, "schedule.csv", lines)?;
                        println!("wrote schedule.csv to {}", dir.display());
                    }
                }
                None => println!(
                    "energy never reached 2!; no complete block within {} steps",
                    cfg.horizon
                ),
            }
            Ok(())
        }

        Command::VerifyBounds { config, out, seed } => {
            let mut cfg = match config {
                Some(path) => VerifyConfig::load(&path)?,
                None => VerifyConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = run_verification(&cfg)?;
            print!("{}", summarize(&report));
            if let Some(dir) = out {
                write_verify_csv(&report, &dir)?;
                println!("wrote verify.csv to {}", dir.display());
            }
            require_clean(&report)
        }

        Command::Compare {
            configs,
            out,
            no_plots,
        } => {
            let cfgs = configs
                .iter()
                .map(|p| ExperimentConfig::load(p))
                .collect::<CliResult<Vec<_>>>()?;
            let mut arts = compare_regimes(&cfgs)?;
            let rows = comparison_rows(&arts);
            print!("{}", render_table(&rows));
            write_compare(&mut arts, &rows, &out, !no_plots)?;
            println!("wrote per-run artifacts and compare.csv to {}", out.display());
            Ok(())
        }
    }
}

fn main() {
    init_threads();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("sg-lab: {e}");
        std::process::exit(e.exit_code());
    }
}
