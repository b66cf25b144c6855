use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bondlab_cli::config::StudyConfig;
use bondlab_cli::selftest::{render, selftest, SelftestOptions};
use bondlab_cli::study::{
    run_convergence_study, run_limit_single, run_projection_probe, run_thin_single, StudyOptions,
};
use bondlab_cli::validate::validate_hypotheses;

/// Finite-element laboratory for the dynamics of elastic bodies bonded by
/// a thin heavy viscoelastic layer.
#[derive(Parser)]
#[command(name = "bondlab", version, about)]
struct Cli {
    /// JSON experiment configuration (defaults to the built-in desk study).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSVs and dumps.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the per-thickness sub-runs.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Byte-reproducible outputs (zeroes wall-clock columns).
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Build the meshes of every declared thickness and report counts.
    Build,
    /// Run one positive-thickness trajectory (sequence index --index).
    SimulateThin {
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Run the limit trajectory.
    SimulateLimit,
    /// Norm-consistency probe of the projection operators.
    Project,
    /// Full convergence study: limit run, per-thickness thin runs,
    /// projected distances, verdicts.
    Converge,
    /// Check the parameter-sequence and load-support hypotheses.
    Validate,
    /// Run the built-in invariant battery.
    Selftest,
    /// Print the built-in default configuration.
    PrintConfig,
}

fn load_config(cli: &Cli) -> Result<StudyConfig, bondlab::Error> {
    match &cli.config {
        Some(path) => StudyConfig::from_path(path),
        None => Ok(StudyConfig::default_desk()),
    }
}

fn run(cli: &Cli) -> Result<u8, bondlab::Error> {
    match &cli.verb {
        Verb::Build => {
            let cfg = load_config(cli)?;
            println!("n,eps,bulk_nodes,bulk_cells,split_nodes,ref_layer_nodes");
            for n in 0..cfg.sequence.count {
                let eps = cfg.sequence.eps_at(n);
                let meshes = bondlab::mesh::build_domain(&cfg.domain.to_domain_config(eps)?)?;
                println!(
                    "{n},{eps:.6e},{},{},{},{}",
                    meshes.bulk.n_nodes(),
                    meshes.bulk.n_cells(),
                    meshes.split_bulk.n_nodes(),
                    meshes.ref_layer.n_nodes()
                );
                if let Some(dir) = &cli.out {
                    std::fs::create_dir_all(dir)?;
                    let zero = bondlab::NodalField::zeros(&meshes.bulk);
                    bondlab::field::dump_field(
                        &dir.join(format!("bulk_{n}.csv")),
                        &meshes.bulk,
                        &zero,
                    )?;
                }
            }
            Ok(0)
        }
        Verb::SimulateThin { index } => {
            let cfg = load_config(cli)?;
            let row = run_thin_single(&cfg, *index, cli.out.as_deref(), cli.deterministic)?;
            println!(
                "n={} eps={:.6e} sup_trotter={:.6e} sup_normgap={:.6e}",
                row.n, row.eps, row.sup_trotter, row.sup_normgap
            );
            Ok(0)
        }
        Verb::SimulateLimit => {
            let cfg = load_config(cli)?;
            run_limit_single(&cfg, cli.out.as_deref())?;
            println!("limit trajectory complete");
            Ok(0)
        }
        Verb::Project => {
            let cfg = load_config(cli)?;
            let csv = run_projection_probe(&cfg, cli.out.as_deref())?;
            print!("{csv}");
            Ok(0)
        }
        Verb::Converge => {
            let cfg = load_config(cli)?;
            let report = run_convergence_study(
                &cfg,
                &StudyOptions {
                    threads: cli.threads,
                    deterministic: cli.deterministic,
                    out_dir: cli.out.clone(),
                },
            )?;
            print!("{}", report.csv());
            println!(
                "verdicts: distance monotone {} halved {}; norm gap monotone {} halved {}",
                report.verdicts.distance_monotone,
                report.verdicts.distance_halved,
                report.verdicts.normgap_monotone,
                report.verdicts.normgap_halved
            );
            Ok(if report.verdicts.passed() { 0 } else { 3 })
        }
        Verb::Validate => {
            let cfg = load_config(cli)?;
            let report = validate_hypotheses(&cfg)?;
            print!("{}", report.render());
            Ok(if report.passed() { 0 } else { 2 })
        }
        Verb::Selftest => {
            let results = selftest(&SelftestOptions::default())?;
            print!("{}", render(&results));
            Ok(if results.iter().all(|r| r.passed) {
                0
            } else {
                3
            })
        }
        Verb::PrintConfig => {
            println!("{}", StudyConfig::default_desk().to_json());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                bondlab::Error::Invalid(msg) if msg.contains("hypothesis gate") => 2,
                bondlab::Error::DomainConfig(_) | bondlab::Error::Load(_) => 2,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}
