//! Trains both sequence-model families — the latent LSTM on top of a frozen
//! encoder-decoder, and the end-to-end ConvLSTM — with the energy-conservation
//! penalty enabled, and prints their loss curves side by side.
//!
//! The ConvLSTM trains its first epochs on the data term only and switches
//! the physics term on afterwards; watch the energy column.
//!
//!     cargo run --release --example train_forecasters

use std::path::Path;

use dsovt::manifest::{ModelSpec, SensorSpec, TrainingSpec};
use dsovt::swe::{generate_dataset, SWEScenario};
use dsovt::train::{prepare_data, train_ced, train_ced_lstm, train_convlstm, TrainReport};

fn print_report(name: &str, report: &TrainReport) {
    println!("\n{name} (switch epoch: {:?})", report.switch_epoch);
    println!("epoch  data-term     energy-term   total");
    for e in &report.epochs {
        println!(
            "{:>5}  {:<12.6}  {:<12.3e}  {:.6}",
            e.epoch, e.data_term, e.energy_term, e.total
        );
    }
}

fn main() -> dsovt::Result<()> {
    let out = Path::new("target/example-output/train_forecasters");
    let scenario = SWEScenario {
        nx: 16,
        ny: 16,
        total_steps: 700,
        equilibrium_steps: 300,
        snapshot_interval: 20,
        ..SWEScenario::default()
    };
    let training = TrainingSpec {
        s_in: 2,
        s_out: 2,
        lambda_energy: 1e-6,
        n_init: 3, // ConvLSTM warm-up: data term only for the first epochs
        epochs: 8,
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
        23,
        SensorSpec::Random { k: 24 },
        model,
        training,
    )?;
    let data = prepare_data(&manifest, Some(out), None)?;

    let (ced, _) = train_ced(&data, &manifest.model, &manifest.training, manifest.seed, None)?;
    let (_, lstm_report) = train_ced_lstm(
        &data,
        &ced,
        &manifest.model,
        &manifest.training,
        manifest.seed,
        None,
    )?;
    print_report("latent LSTM (frozen encoder-decoder)", &lstm_report);

    let (_, conv_report) =
        train_convlstm(&data, &manifest.model, &manifest.training, manifest.seed, None)?;
    print_report("end-to-end ConvLSTM", &conv_report);
    Ok(())
}
