//! Ordinary-Kriging baseline walkthrough: fit a spherical variogram to one
//! frame's sensors, interpolate the full grid, inspect the kriging variance,
//! and run the two temporal extensions (per-cell regression and space-time
//! kriging).
//!
//!     cargo run --release --example kriging_baseline

use dsovt::kriging::{fit_variogram, krige2d, kriging_forecast_2d, kriging_forecast_3d};
use dsovt::swe::{simulate, SWEScenario};
use dsovt::voronoi::sample_sensors_random;

fn main() -> dsovt::Result<()> {
    let scenario = SWEScenario {
        total_steps: 800,
        equilibrium_steps: 500,
        snapshot_interval: 30,
        ..SWEScenario::default()
    };
    let truth = simulate(&scenario)?;
    let (nx, ny, _) = truth.shape();
    let series = sample_sensors_random(&truth, 40, 3, None)?;

    // spatial interpolation of the depth channel of frame 0
    let step = &series.steps[0];
    let coords: Vec<(f64, f64)> = step.iter().map(|s| (s.i as f64, s.j as f64)).collect();
    let depths: Vec<f64> = step.iter().map(|s| s.values[2] as f64).collect();
    let model = fit_variogram(&coords, &depths, 20)?;
    println!(
        "spherical variogram: nugget {:.3e}, sill {:.3e}, range {:.2} (fit residual {:.3e})",
        model.nugget, model.sill, model.range, model.residual
    );

    let (kriged, variance) = krige2d(&coords, &depths, &model, nx, ny)?;
    let rmse: f64 = (0..nx)
        .flat_map(|x| (0..ny).map(move |y| (x, y)))
        .map(|(x, y)| {
            let d = (kriged.get(x, y, 0) - truth.frame(0).get(x, y, 2)) as f64;
            d * d
        })
        .sum::<f64>()
        / (nx * ny) as f64;
    let max_var = variance.iter().cloned().fold(0.0f64, f64::max);
    println!(
        "depth interpolation rmse {:.4}; kriging variance peaks at {:.3e} far from sensors",
        rmse.sqrt(),
        max_var
    );

    // temporal forecasts: 5 observed steps in, 3 predicted steps out
    let window = &series.steps[0..5];
    for (name, frames) in [
        ("2-D kriging + per-cell regression", kriging_forecast_2d(window, nx, ny, 20, 3)?),
        ("3-D space-time kriging", kriging_forecast_3d(window, nx, ny, 20, 3)?),
    ] {
        let err: f64 = frames
            .iter()
            .zip(truth.frames()[5..8].iter())
            .map(|(p, t)| {
                p.values()
                    .iter()
                    .zip(t.values())
                    .map(|(a, b)| ((a - b) * (a - b)) as f64)
                    .sum::<f64>()
                    / p.values().len() as f64
            })
            .sum::<f64>()
            / 3.0;
        println!("{name}: 3-step forecast mse {:.5}", err);
    }
    Ok(())
}
