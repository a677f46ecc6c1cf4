//! Samples a sparse, time-varying sensor network from a simulated field and
//! rasterizes it with a Voronoi tessellation — the piecewise-constant input
//! representation the neural models consume.
//!
//!     cargo run --release --example sensors_tessellate

use dsovt::swe::{simulate, SWEScenario};
use dsovt::voronoi::{sample_sensors_random, tessellate, tessellate_series};

fn main() -> dsovt::Result<()> {
    let scenario = SWEScenario {
        total_steps: 800,
        equilibrium_steps: 500,
        snapshot_interval: 30,
        ..SWEScenario::default()
    };
    let truth = simulate(&scenario)?;
    let (nx, ny, nc) = truth.shape();

    // 30 sensors, repositioned independently every timestep
    let series = sample_sensors_random(&truth, 30, 7, None)?;
    let tess = tessellate_series(&series, nx, ny, nc)?;

    // per-frame mean absolute depth error of the tessellated representation
    println!("frame  sensors  mean |h_tess - h_true|");
    for (t, (a, b)) in tess.frames().iter().zip(truth.frames()).enumerate() {
        let err: f64 = (0..nx)
            .flat_map(|x| (0..ny).map(move |y| (x, y)))
            .map(|(x, y)| (a.get(x, y, 2) - b.get(x, y, 2)).abs() as f64)
            .sum::<f64>()
            / (nx * ny) as f64;
        println!("{t:>5}  {:>7}  {err:.5}", series.steps[t].len());
    }

    // the owner map partitions the grid: an ASCII look at frame 0
    let vf = tessellate(&series.steps[0], nx, ny, nc)?;
    let glyphs: Vec<char> = ('a'..='z').chain('A'..='Z').collect();
    println!("\nVoronoi regions of frame 0 (one letter per sensor):");
    for x in (0..nx).step_by(2) {
        let row: String = (0..ny)
            .step_by(2)
            .map(|y| glyphs[vf.owners[x * ny + y] % glyphs.len()])
            .collect();
        println!("  {row}");
    }
    Ok(())
}
