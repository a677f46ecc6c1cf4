//! Long-horizon autoregressive prediction: each predicted window is fed back
//! as the next input window, so errors compound over iterations. Prints the
//! per-iteration metric decay for a quickly trained ConvLSTM.
//!
//!     cargo run --release --example rolling_forecast

use std::path::Path;

use dsovt::eval::{evaluation_range, rolling_forecast_convlstm, rolling_reports_convlstm, RollingSpec};
use dsovt::manifest::{ModelSpec, SensorSpec, TrainingSpec};
use dsovt::swe::{generate_dataset, SWEScenario};
use dsovt::train::{prepare_data, train_convlstm};

fn main() -> dsovt::Result<()> {
    let out = Path::new("target/example-output/rolling_forecast");
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
        epochs: 10,
        learning_rate: 1e-3,
        batch_size: 4,
        window_stride: 2,
        frame_stride: 1,
    };
    let model = ModelSpec {
        latent: 16,
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
        31,
        SensorSpec::Random { k: 24 },
        model,
        training.clone(),
    )?;
    let data = prepare_data(&manifest, Some(out), None)?;
    let (model, _) =
        train_convlstm(&data, &manifest.model, &manifest.training, manifest.seed, None)?;

    // the chaining contract: iteration k+1 consumes exactly what k produced
    let init = &data.test[0].inputs[10..10 + training.s_in];
    let run = rolling_forecast_convlstm(&model, init, 5)?;
    for k in 0..4 {
        assert_eq!(run.inputs[k + 1], run.outputs[k]);
    }
    println!("chaining verified: input(k+1) == output(k) bitwise for 5 iterations\n");

    let spec = RollingSpec {
        start: 10,
        iterations: 8,
        s_in: training.s_in,
    };
    let range = evaluation_range(&data.test)?;
    let reports = rolling_reports_convlstm(&data, &model, spec, range)?;
    println!("iteration  ssim     rrmse");
    for (k, r) in reports.iter().enumerate() {
        println!("{:>9}  {:.4}   {:.4}", k + 1, r.ssim, r.rrmse);
    }
    Ok(())
}
