use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ecgi::bench::{
    ablate_electrodes, metrics_csv, run_experiment, write_outputs, ExperimentConfig, Lambda, Method, MetricsRow,
    Reconstructor, Scenario,
};
use ecgi::mesh::{generate_torso_2d, extract_boundary_sets, place_electrodes, write_mesh};
use ecgi::sim::TruthBundle;
use ecgi::Result;

#[derive(Parser)]
#[command(name = "ecgi", version, about = "Space-time TV reconstruction benchmark for 2D ECG imaging")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Noise seed, replacing the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Comma-separated method tags (T0, T1S, T1ST, TVS1, TVS2, TVST1, TVST2).
    #[arg(long, global = true, value_delimiter = ',')]
    method: Vec<Method>,
    /// Comma-separated SNR levels in dB; `inf` disables noise.
    #[arg(long, global = true, value_delimiter = ',')]
    snr_db: Vec<f64>,
    /// Electrode count.
    #[arg(long, global = true)]
    electrodes: Option<usize>,
    /// Record solver wall time in metrics.csv and write timings.csv.
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the torso mesh and write it with its boundary sets and electrodes.
    Mesh,
    /// Simulate the ground truth and write the truth bundle.
    Simulate,
    /// Reconstruct with fixed regularization parameters.
    Reconstruct {
        #[arg(long)]
        lambda_g: f64,
        /// Defaults to `--lambda-g`.
        #[arg(long)]
        lambda_t: Option<f64>,
    },
    /// Grid-search every selected method and write the full table.
    Gridsearch,
    /// Reconstruct with parameters frozen at the anchor electrode count for
    /// every configured count.
    Ablate,
    /// Full pipeline: grid search, reconstructions, heatmaps, traces, metrics.
    Report,
    /// Print the effective configuration as TOML.
    Config,
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.noise_seeds = vec![s];
    }
    if let Some(d) = &common.out_dir {
        cfg.out_dir = d.clone();
    }
    if !common.method.is_empty() {
        cfg.methods = common.method.clone();
    }
    if !common.snr_db.is_empty() {
        cfg.snr_db = common.snr_db.clone();
    }
    if let Some(n) = common.electrodes {
        cfg.n_electrodes = n;
    }
    cfg.timing |= common.timing;
    cfg.validate()?;
    Ok(cfg)
}

fn scenario(cfg: &ExperimentConfig) -> Result<Scenario> {
    Scenario::build(
        &cfg.geometry,
        &cfg.sim,
        &cfg.conductivity,
        cfg.n_electrodes,
        cfg.placement,
        cfg.electrode_seed,
    )
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load(&cli.common)?;
    let out = cfg.out_dir.clone();
    match cli.command {
        Command::Config => print!("{}", cfg.to_toml()),
        Command::Mesh => {
            let model = generate_torso_2d(&cfg.geometry)?;
            let bounds = extract_boundary_sets(&model.torso)?;
            let es = place_electrodes(&model.torso, &bounds, cfg.n_electrodes, cfg.placement, cfg.electrode_seed)?;
            write_outputs(&out, &[("mesh.txt".into(), write_mesh(&model.torso, &bounds, &es))])?;
            log::info!(
                "{} vertices, {} triangles, {} epicardial nodes",
                model.torso.n_vertices(),
                model.torso.n_triangles(),
                bounds.n_epicardial()
            );
        }
        Command::Simulate => {
            let scn = scenario(&cfg)?;
            let (snr, seed) = (cfg.snr_db[0], cfg.noise_seeds[0]);
            let noisy = scn.noisy_data(snr, seed)?;
            let bundle = TruthBundle::new(&scn.truth, &noisy, snr, seed);
            write_outputs(&out, &[("truth_bundle.txt".into(), bundle.to_text())])?;
            log::info!(
                "SNR {} dB: {:.3} dB against the clean norm, {:.3} dB against the noisy norm",
                snr,
                noisy.snr_clean_db,
                noisy.snr_noisy_db
            );
        }
        Command::Reconstruct { lambda_g, lambda_t } => {
            let scn = scenario(&cfg)?;
            let lambda = Lambda::new(lambda_g, lambda_t.unwrap_or(lambda_g));
            let mut rec = Reconstructor::new(&scn, cfg.solver);
            let mut rows = Vec::new();
            let mut files = Vec::new();
            let scale = scn.truth.u.max_abs();
            for &snr in &cfg.snr_db {
                let z = scn.noisy_data(snr, cfg.noise_seeds[0])?.z;
                for &method in &cfg.methods {
                    let r = rec.run(method, lambda, &z)?;
                    let suffix = if cfg.snr_db.len() > 1 { format!("_{snr}db") } else { String::new() };
                    files.push((format!("heatmap_{method}{suffix}.ppm"), ecgi::bench::heatmap_ppm(&r.u, scale)));
                    if let Some(t) = &r.trace {
                        files.push((format!("trace_{method}{suffix}.csv"), t.to_csv()));
                    }
                    rows.push(MetricsRow {
                        method,
                        lambda: lambda.for_method(method),
                        snr_db: snr,
                        n_electrodes: scn.electrodes.len(),
                        metrics: scn.metrics(&r.u)?,
                        seconds: cfg.timing.then_some(r.seconds),
                    });
                }
            }
            files.push(("metrics.csv".into(), metrics_csv(&rows)));
            write_outputs(&out, &files)?;
        }
        Command::Gridsearch => {
            let result = run_experiment(&cfg)?;
            let keep: Vec<(String, String)> = result
                .files
                .into_iter()
                .filter(|(n, _)| n == "gridsearch.csv" || n == "metrics.csv")
                .collect();
            write_outputs(&out, &keep)?;
        }
        Command::Ablate => {
            let result = ablate_electrodes(&cfg)?;
            write_outputs(&out, &[("ablation.csv".into(), result.to_csv())])?;
            for (m, s) in &result.spearman {
                log::info!("{m}: median Spearman(count, V_h) = {s:.3}");
            }
        }
        Command::Report => {
            let result = run_experiment(&cfg)?;
            write_outputs(&out, &result.files)?;
            print!("{}", result.file("metrics.csv").unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
