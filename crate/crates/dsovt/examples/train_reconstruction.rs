//! Trains the convolutional encoder-decoder to reconstruct dense fields from
//! Voronoi-tessellated sensor inputs, then scores a held-out simulation with
//! SSIM / PSNR / R-RMSE.
//!
//!     cargo run --release --example train_reconstruction

use std::path::Path;

use dsovt::eval::{evaluation_range, metric_report};
use dsovt::manifest::{ModelSpec, SensorSpec, TrainingSpec};
use dsovt::swe::{generate_dataset, SWEScenario};
use dsovt::train::{prepare_data, train_ced};

fn main() -> dsovt::Result<()> {
    let out = Path::new("target/example-output/train_reconstruction");
    let scenario = SWEScenario {
        nx: 16,
        ny: 16,
        total_steps: 900,
        equilibrium_steps: 300,
        snapshot_interval: 20,
        ..SWEScenario::default()
    };
    let training = TrainingSpec {
        s_in: 1,
        s_out: 1,
        lambda_energy: 0.0,
        n_init: 0,
        epochs: 15,
        learning_rate: 1e-3,
        batch_size: 8,
        window_stride: 1,
        frame_stride: 1,
    };
    let model = ModelSpec {
        latent: 32,
        lstm_layers: 1,
        lstm_hidden: 16,
        convlstm_layers: 1,
        convlstm_filters: 4,
    };
    let manifest = generate_dataset(
        out,
        &scenario,
        3,
        1,
        11,
        SensorSpec::Random { k: 24 },
        model,
        training,
    )?;
    let data = prepare_data(&manifest, Some(out), None)?;

    let (ced, report) = train_ced(&data, &manifest.model, &manifest.training, manifest.seed, None)?;
    println!("epoch  reconstruction-loss");
    for e in &report.epochs {
        println!("{:>5}  {:.6}", e.epoch, e.data_term);
    }

    // score reconstructions on the held-out simulation
    let range = evaluation_range(&data.test)?;
    let sim = &data.test[0];
    let mut reports = Vec::new();
    for (input, truth) in sim.inputs.iter().zip(sim.truth.frames()) {
        let (_, dec) = ced.forward(input);
        let mut pred = dsovt::data::Field::from_matrix(data.nx, data.ny, &dec.out)?;
        for x in 0..data.nx {
            for y in 0..data.ny {
                for c in 0..data.nc {
                    pred.set(x, y, c, data.stats.denormalize_value(c, pred.get(x, y, c)));
                }
            }
        }
        reports.push(metric_report(&pred, truth, range, None)?);
    }
    let n = reports.len() as f64;
    println!(
        "\nheld-out reconstruction over {} frames: ssim {:.4}, rrmse {:.4}",
        reports.len(),
        reports.iter().map(|r| r.ssim).sum::<f64>() / n,
        reports.iter().map(|r| r.rrmse).sum::<f64>() / n,
    );
    Ok(())
}
