//! Command-line surface tying the pipeline together:
//! simulate -> sensors -> tessellate -> train -> forecast -> evaluate,
//! all driven by manifests and seeds. Every run writes its fully resolved
//! manifest into the output directory for provenance.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use dsovt::data::{read_tensor, write_tensor_create_dirs, write_text, NormStats};
use dsovt::error::{Error, Result};
use dsovt::eval::{evaluate_suite, Method, RollingSpec};
use dsovt::manifest::{ExperimentManifest, SensorSpec, SourceSpec};
use dsovt::nn::{load_model, save_model, ModelBundle};
use dsovt::swe::generate_dataset;
use dsovt::train::{prepare_data, train_ced, train_ced_lstm, train_convlstm, PreparedData};
use dsovt::voronoi::{sample_sensors_jittered, sample_sensors_random, tessellate_series, SensorSeries};

#[derive(Parser)]
#[command(
    name = "dsovt",
    version,
    about = "Gridded dynamical-system prediction from sparse sensors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment manifest (TOML)
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Master seed (overrides DSOVT_SEED and the manifest)
    #[arg(long)]
    seed: Option<u64>,
    /// Manifest overrides, dotted key=value (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Copy, Clone, ValueEnum)]
enum BaselineKind {
    Kriging2d,
    Kriging3d,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a shallow-water dataset per the manifest's split
    Simulate(RunArgs),
    /// Sample a per-timestep sensor series from one stored simulation
    Sensors {
        #[command(flatten)]
        run: RunArgs,
        /// Simulation tensor to observe
        #[arg(long)]
        sim: PathBuf,
    },
    /// Rasterize a sensor series onto the grid by nearest-sensor assignment
    Tessellate {
        /// Sensor series text file
        #[arg(long)]
        sensors: PathBuf,
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        ny: usize,
        #[arg(long)]
        nc: usize,
        /// Output tensor file
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the convolutional encoder-decoder
    TrainCed(RunArgs),
    /// Train the latent sequence model on a frozen encoder-decoder
    TrainCedLstm {
        #[command(flatten)]
        run: RunArgs,
        /// Trained encoder-decoder model file
        #[arg(long)]
        ced: PathBuf,
    },
    /// Train the end-to-end convolutional LSTM
    TrainConvlstm(RunArgs),
    /// Autoregressive rolling forecast with a trained sequence model
    Forecast {
        #[command(flatten)]
        run: RunArgs,
        /// Trained sequence model (latent LSTM or ConvLSTM)
        #[arg(long)]
        model: PathBuf,
        /// Encoder-decoder model, required for latent-LSTM forecasts
        #[arg(long)]
        ced: Option<PathBuf>,
        /// Frame index at which the first input window starts
        #[arg(long, default_value_t = 75)]
        start: usize,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
        /// Normalization statistics file (defaults to training-split stats)
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Compare trained models and baselines over the test split
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        ced: Option<PathBuf>,
        #[arg(long)]
        lstm: Option<PathBuf>,
        #[arg(long)]
        convlstm: Option<PathBuf>,
        /// Include the 2-D Kriging baseline with this many variogram lags
        #[arg(long, value_name = "NLAGS")]
        kriging2d: Option<usize>,
        /// Include the space-time Kriging baseline with this many lags
        #[arg(long, value_name = "NLAGS")]
        kriging3d: Option<usize>,
        #[arg(long, default_value_t = 75)]
        rolling_start: usize,
        /// Rolling iterations (0 skips the rolling comparison)
        #[arg(long, default_value_t = 0)]
        rolling_iterations: usize,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Run a Kriging baseline alone
    Baseline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        method: BaselineKind,
        /// Number of equal-width variogram distance bins
        #[arg(long)]
        nlags: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error[{}]: {e}", e.exit_code());
        std::process::exit(e.exit_code());
    }
}

/// Seed precedence: CLI flag, then DSOVT_SEED, then the manifest.
fn resolve_manifest(run: &RunArgs) -> Result<ExperimentManifest> {
    let mut manifest = ExperimentManifest::load(&run.manifest)?;
    for assignment in &run.set {
        manifest.apply_override(assignment)?;
    }
    if let Some(seed) = run.seed {
        manifest.seed = seed;
    } else if let Ok(env) = std::env::var("DSOVT_SEED") {
        manifest.seed = env
            .parse()
            .map_err(|_| Error::Usage(format!("DSOVT_SEED {env:?} is not an integer")))?;
    }
    Ok(manifest)
}

fn write_provenance(out: &Path, manifest: &ExperimentManifest) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    manifest.save(&out.join("manifest.toml"))
}

fn save_stats(out: &Path, stats: &NormStats) -> Result<()> {
    let text = toml::to_string_pretty(stats)
        .map_err(|e| Error::Validation(format!("stats serialization: {e}")))?;
    write_text(&out.join("norm_stats.toml"), &text)
}

fn load_stats(path: &Path) -> Result<NormStats> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn prepared(
    manifest: &ExperimentManifest,
    manifest_path: &Path,
    stats: Option<&PathBuf>,
) -> Result<PreparedData> {
    let stats = stats.map(|p| load_stats(p)).transpose()?;
    prepare_data(manifest, manifest_path.parent(), stats.as_ref())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate(run) => {
            let manifest = resolve_manifest(&run)?;
            let scenario = match &manifest.source {
                SourceSpec::Solver(s) => s.clone(),
                SourceSpec::Ingestion { .. } => {
                    return Err(Error::Validation(
                        "simulate needs a solver source in the manifest".into(),
                    ))
                }
            };
            // generate_dataset writes the resolved manifest (now including
            // the sampled per-simulation entries) into the output directory
            let generated = generate_dataset(
                &run.out,
                &scenario,
                manifest.split.train_count,
                manifest.split.test_count,
                manifest.seed,
                manifest.sensors.clone(),
                manifest.model.clone(),
                manifest.training.clone(),
            )?;
            println!(
                "wrote {} train and {} test simulations to {}",
                generated.train_sims.len(),
                generated.test_sims.len(),
                run.out.display()
            );
            Ok(())
        }
        Command::Sensors { run, sim } => {
            let manifest = resolve_manifest(&run)?;
            let seq = read_tensor(&sim)?;
            let series = match &manifest.sensors {
                SensorSpec::Random { k } => {
                    sample_sensors_random(&seq, *k, manifest.seed, None)?
                }
                SensorSpec::Jittered { base_count, jitter } => {
                    sample_sensors_jittered(&seq, *base_count, *jitter, manifest.seed)?
                }
            };
            write_provenance(&run.out, &manifest)?;
            let path = run.out.join("sensors.txt");
            write_text(&path, &series.to_text())?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Tessellate {
            sensors,
            nx,
            ny,
            nc,
            out,
        } => {
            let text = std::fs::read_to_string(&sensors).map_err(|e| Error::io(&sensors, e))?;
            let series = SensorSeries::from_text(&text)?;
            let seq = tessellate_series(&series, nx, ny, nc)?;
            write_tensor_create_dirs(&out, &seq)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::TrainCed(run) => {
            let manifest = resolve_manifest(&run)?;
            let data = prepared(&manifest, &run.manifest, None)?;
            let (model, mut report) = train_ced(&data, &manifest.model, &manifest.training, manifest.seed, None)?;
            write_provenance(&run.out, &manifest)?;
            save_stats(&run.out, &data.stats)?;
            let model_path = run.out.join("ced.dsvm");
            save_model(&ModelBundle::Ced(model), &model_path)?;
            report.params_path = Some(model_path.clone());
            report.save(&run.out.join("ced_report.csv"))?;
            println!("wrote {}", model_path.display());
            Ok(())
        }
        Command::TrainCedLstm { run, ced } => {
            let manifest = resolve_manifest(&run)?;
            let ced_model = load_model(&ced)?.into_ced()?;
            let data = prepared(&manifest, &run.manifest, None)?;
            let (model, mut report) = train_ced_lstm(
                &data,
                &ced_model,
                &manifest.model,
                &manifest.training,
                manifest.seed,
                None,
            )?;
            write_provenance(&run.out, &manifest)?;
            save_stats(&run.out, &data.stats)?;
            let model_path = run.out.join("lstm.dsvm");
            save_model(&ModelBundle::Lstm(model), &model_path)?;
            report.params_path = Some(model_path.clone());
            report.save(&run.out.join("lstm_report.csv"))?;
            println!("wrote {}", model_path.display());
            Ok(())
        }
        Command::TrainConvlstm(run) => {
            let manifest = resolve_manifest(&run)?;
            let data = prepared(&manifest, &run.manifest, None)?;
            let (model, mut report) =
                train_convlstm(&data, &manifest.model, &manifest.training, manifest.seed, None)?;
            write_provenance(&run.out, &manifest)?;
            save_stats(&run.out, &data.stats)?;
            let model_path = run.out.join("convlstm.dsvm");
            save_model(&ModelBundle::ConvLstm(model), &model_path)?;
            report.params_path = Some(model_path.clone());
            report.save(&run.out.join("convlstm_report.csv"))?;
            println!("wrote {}", model_path.display());
            Ok(())
        }
        Command::Forecast {
            run,
            model,
            ced,
            start,
            iterations,
            stats,
        } => {
            let manifest = resolve_manifest(&run)?;
            let data = prepared(&manifest, &run.manifest, stats.as_ref())?;
            let spec = RollingSpec {
                start,
                iterations,
                s_in: manifest.training.s_in,
            };
            let range = dsovt::eval::evaluation_range(&data.test)?;
            let reports = match load_model(&model)? {
                ModelBundle::Lstm(lstm) => {
                    let ced_path = ced.ok_or_else(|| {
                        Error::Usage("latent-sequence forecasts need --ced".into())
                    })?;
                    let ced_model = load_model(&ced_path)?.into_ced()?;
                    dsovt::eval::rolling_reports_ced(&data, &ced_model, &lstm, spec, range)?
                }
                ModelBundle::ConvLstm(m) => {
                    dsovt::eval::rolling_reports_convlstm(&data, &m, spec, range)?
                }
                other => {
                    return Err(Error::Compatibility(format!(
                        "forecasting needs a sequence model, found {}",
                        other.kind()
                    )))
                }
            };
            write_provenance(&run.out, &manifest)?;
            let mut text = String::from("iteration,ssim,psnr_db,rrmse\n");
            for (k, r) in reports.iter().enumerate() {
                let db = if r.psnr_db.is_infinite() {
                    "inf".to_string()
                } else {
                    format!("{:.4}", r.psnr_db)
                };
                text.push_str(&format!("{},{:.6},{},{:.6}\n", k + 1, r.ssim, db, r.rrmse));
            }
            let path = run.out.join("rolling.csv");
            write_text(&path, &text)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Evaluate {
            run,
            ced,
            lstm,
            convlstm,
            kriging2d,
            kriging3d,
            rolling_start,
            rolling_iterations,
            stats,
        } => {
            let manifest = resolve_manifest(&run)?;
            let ced_model = ced.map(|p| load_model(&p)?.into_ced()).transpose()?;
            let lstm_model = lstm.map(|p| load_model(&p)?.into_lstm()).transpose()?;
            let convlstm_model = convlstm.map(|p| load_model(&p)?.into_convlstm()).transpose()?;
            let mut methods: Vec<(String, Method)> = Vec::new();
            if let (Some(c), Some(l)) = (&ced_model, &lstm_model) {
                methods.push(("ced-lstm".into(), Method::CedLstm { ced: c, lstm: l }));
            } else if ced_model.is_some() != lstm_model.is_some() {
                return Err(Error::Validation(
                    "the encoder-decoder route needs both --ced and --lstm".into(),
                ));
            }
            if let Some(m) = &convlstm_model {
                methods.push(("conv-lstm".into(), Method::ConvLstm(m)));
            }
            if let Some(nlags) = kriging2d {
                methods.push(("kriging-2d".into(), Method::Kriging2d { nlags }));
            }
            if let Some(nlags) = kriging3d {
                methods.push(("kriging-3d".into(), Method::Kriging3d { nlags }));
            }
            if methods.is_empty() {
                return Err(Error::Validation(
                    "no methods selected: pass --ced/--lstm, --convlstm, --kriging2d or --kriging3d".into(),
                ));
            }
            let data = prepared(&manifest, &run.manifest, stats.as_ref())?;
            let rolling = (rolling_iterations > 0).then_some(RollingSpec {
                start: rolling_start,
                iterations: rolling_iterations,
                s_in: manifest.training.s_in,
            });
            write_provenance(&run.out, &manifest)?;
            let summary = evaluate_suite(&data, &methods, &manifest.training, rolling, &run.out)?;
            for row in &summary.rows {
                println!(
                    "{}: ssim {:.4} rrmse {:.4} ({} windows, {:.2}s)",
                    row.name, row.report.ssim, row.report.rrmse, row.windows, row.infer_s
                );
            }
            Ok(())
        }
        Command::Baseline { run, method, nlags } => {
            let manifest = resolve_manifest(&run)?;
            let data = prepared(&manifest, &run.manifest, None)?;
            let methods = vec![match method {
                BaselineKind::Kriging2d => ("kriging-2d".to_string(), Method::Kriging2d { nlags }),
                BaselineKind::Kriging3d => ("kriging-3d".to_string(), Method::Kriging3d { nlags }),
            }];
            write_provenance(&run.out, &manifest)?;
            let summary = evaluate_suite(&data, &methods, &manifest.training, None, &run.out)?;
            let row = &summary.rows[0];
            println!(
                "{}: ssim {:.4} rrmse {:.4} ({} windows)",
                row.name, row.report.ssim, row.report.rrmse, row.windows
            );
            Ok(())
        }
    }
}
