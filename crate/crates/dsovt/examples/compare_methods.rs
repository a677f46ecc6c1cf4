//! Head-to-head comparison of the trained models against the Kriging
//! baselines on a held-out simulation, writing metrics.csv, hist.csv and
//! rolling.csv exactly as the `dsovt evaluate` subcommand does.
//!
//!     cargo run --release --example compare_methods

use std::path::Path;

use dsovt::eval::{evaluate_suite, Method, RollingSpec};
use dsovt::manifest::{ModelSpec, SensorSpec, TrainingSpec};
use dsovt::swe::{generate_dataset, SWEScenario};
use dsovt::train::{prepare_data, train_ced, train_ced_lstm, train_convlstm};

fn main() -> dsovt::Result<()> {
    let out = Path::new("target/example-output/compare_methods");
    let scenario = SWEScenario {
        nx: 16,
        ny: 16,
        total_steps: 1100,
        equilibrium_steps: 300,
        snapshot_interval: 20,
        ..SWEScenario::default()
    };
    let training = TrainingSpec {
        s_in: 2,
        s_out: 2,
        lambda_energy: 0.0,
        n_init: 0,
        epochs: 12,
        learning_rate: 1e-3,
        batch_size: 4,
        window_stride: 2,
        frame_stride: 1,
    };
    let model_cfg = ModelSpec {
        latent: 32,
        lstm_layers: 1,
        lstm_hidden: 32,
        convlstm_layers: 1,
        convlstm_filters: 4,
    };
    let manifest = generate_dataset(
        out,
        &scenario,
        4,
        1,
        41,
        SensorSpec::Random { k: 24 },
        model_cfg,
        training,
    )?;
    let data = prepare_data(&manifest, Some(out), None)?;

    println!("training the three models (a minute or so)...");
    let (ced, _) = train_ced(&data, &manifest.model, &manifest.training, manifest.seed, None)?;
    let (lstm, _) = train_ced_lstm(
        &data,
        &ced,
        &manifest.model,
        &manifest.training,
        manifest.seed,
        None,
    )?;
    let (convlstm, _) =
        train_convlstm(&data, &manifest.model, &manifest.training, manifest.seed, None)?;

    let methods = vec![
        ("ced-lstm".to_string(), Method::CedLstm { ced: &ced, lstm: &lstm }),
        ("conv-lstm".to_string(), Method::ConvLstm(&convlstm)),
        ("kriging-2d".to_string(), Method::Kriging2d { nlags: 20 }),
        ("kriging-3d".to_string(), Method::Kriging3d { nlags: 20 }),
    ];
    let rolling = Some(RollingSpec {
        start: 10,
        iterations: 5,
        s_in: manifest.training.s_in,
    });
    let summary = evaluate_suite(&data, &methods, &manifest.training, rolling, out)?;

    println!("\nmethod       ssim     psnr      rrmse    infer");
    for row in &summary.rows {
        println!(
            "{:<12} {:.4}   {:>6.2}dB  {:.4}   {:.2}s",
            row.name, row.report.ssim, row.report.psnr_db, row.report.rrmse, row.infer_s
        );
    }
    println!("\nplot data written to:");
    println!("  {}", summary.metrics_csv.display());
    println!("  {}", summary.hist_csv.display());
    if let Some(p) = &summary.rolling_csv {
        println!("  {}", p.display());
    }
    Ok(())
}
