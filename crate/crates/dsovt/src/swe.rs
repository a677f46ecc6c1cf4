//! First-order finite-difference solver for the 2-D Saint-Venant
//! (shallow-water) equations and the training/testing data generator.
//!
//! The scheme is an explicit local Lax-Friedrichs update on the conservative
//! variables (h, hu, hv) with unit grid spacing and reflective walls, so
//! total mass is conserved to floating-point accumulation. All solver state
//! is f64; recorded snapshots are cast to f32 fields with channels (u, v, h).

use serde::{Deserialize, Serialize};

use crate::data::{Field, FieldSequence};
use crate::error::{Error, Result};
use crate::manifest::{
    ExperimentManifest, ModelSpec, SensorSpec, SimEntry, SourceSpec, SplitSpec, TrainingSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub const DELTA_H_RANGE: (f64, f64) = (0.2, 0.8);
pub const RADIUS_RANGE: (f64, f64) = (4.0, 12.0);

/// Scenario for one simulation: a cylindrical disturbance of height
/// `delta_h` and radius `radius` (cells) dropped at `center` into still
/// water of depth `base_depth`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SWEScenario {
    pub nx: usize,
    pub ny: usize,
    pub base_depth: f64,
    pub delta_h: f64,
    pub radius: f64,
    pub center: (f64, f64),
    pub g: f64,
    pub dt: f64,
    pub total_steps: usize,
    pub equilibrium_steps: usize,
    pub snapshot_interval: usize,
    pub seed: u64,
}

impl Default for SWEScenario {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 64,
            base_depth: 1.0,
            delta_h: 0.4,
            radius: 8.0,
            center: (31.5, 31.5),
            g: 1.0,
            dt: 0.1,
            total_steps: 3500,
            equilibrium_steps: 500,
            snapshot_interval: 10,
            seed: 0,
        }
    }
}

impl SWEScenario {
    pub fn validate(&self) -> Result<()> {
        // delta_h == 0 (undisturbed water) is allowed for calibration runs;
        // any other value must fall in the sampling range.
        if self.delta_h != 0.0
            && !(DELTA_H_RANGE.0..=DELTA_H_RANGE.1).contains(&self.delta_h)
        {
            return Err(Error::Validation(format!(
                "delta_h {} outside [{}, {}]",
                self.delta_h, DELTA_H_RANGE.0, DELTA_H_RANGE.1
            )));
        }
        if !(RADIUS_RANGE.0..=RADIUS_RANGE.1).contains(&self.radius) {
            return Err(Error::Validation(format!(
                "radius {} outside [{}, {}]",
                self.radius, RADIUS_RANGE.0, RADIUS_RANGE.1
            )));
        }
        let wave = self.dt * (self.g * (self.base_depth + self.delta_h)).sqrt();
        if wave > 0.5 {
            return Err(Error::Validation(format!(
                "CFL violated: dt*sqrt(g*(H+dh)) = {wave} > 0.5"
            )));
        }
        if self.total_steps <= self.equilibrium_steps || self.snapshot_interval == 0 {
            return Err(Error::Validation(
                "total_steps must exceed equilibrium_steps, snapshot_interval >= 1".into(),
            ));
        }
        let (cx, cy) = self.center;
        let r = self.radius;
        if cx - r < 0.0
            || cy - r < 0.0
            || cx + r > (self.nx - 1) as f64
            || cy + r > (self.ny - 1) as f64
        {
            return Err(Error::Validation(format!(
                "disturbance center ({cx}, {cy}) closer than radius {r} to the boundary"
            )));
        }
        Ok(())
    }

    pub fn snapshot_count(&self) -> usize {
        (self.total_steps - self.equilibrium_steps) / self.snapshot_interval
    }
}

/// Water depth and velocities on the grid; invariantly finite with h > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SWEState {
    pub nx: usize,
    pub ny: usize,
    /// Conservative variables, indexed i * ny + j.
    pub h: Vec<f64>,
    pub hu: Vec<f64>,
    pub hv: Vec<f64>,
}

impl SWEState {
    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    pub fn u(&self, i: usize, j: usize) -> f64 {
        let k = self.at(i, j);
        self.hu[k] / self.h[k]
    }

    pub fn v(&self, i: usize, j: usize) -> f64 {
        let k = self.at(i, j);
        self.hv[k] / self.h[k]
    }

    pub fn total_mass(&self) -> f64 {
        self.h.iter().sum()
    }

    /// Snapshot as a 3-channel field with channels (u, v, h).
    pub fn to_field(&self) -> Result<Field> {
        let mut field = Field::zeros(self.nx, self.ny, 3)?;
        for i in 0..self.nx {
            for j in 0..self.ny {
                field.set(i, j, 0, self.u(i, j) as f32);
                field.set(i, j, 1, self.v(i, j) as f32);
                field.set(i, j, 2, self.h[self.at(i, j)] as f32);
            }
        }
        Ok(field)
    }
}

/// Still water with a raised cylinder: h = base + delta inside the disc,
/// u = v = 0 everywhere.
pub fn init_disturbance(scenario: &SWEScenario) -> Result<SWEState> {
    scenario.validate()?;
    let (nx, ny) = (scenario.nx, scenario.ny);
    let (cx, cy) = scenario.center;
    let r2 = scenario.radius * scenario.radius;
    let mut h = vec![scenario.base_depth; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            let dx = i as f64 - cx;
            let dy = j as f64 - cy;
            if dx * dx + dy * dy <= r2 {
                h[i * ny + j] += scenario.delta_h;
            }
        }
    }
    Ok(SWEState {
        nx,
        ny,
        h,
        hu: vec![0.0; nx * ny],
        hv: vec![0.0; nx * ny],
    })
}

#[inline]
fn wave_speed(h: f64, m: f64, g: f64) -> f64 {
    (m / h).abs() + (g * h).sqrt()
}

/// One explicit local Lax-Friedrichs update with reflective walls.
pub fn step(state: &SWEState, scenario: &SWEScenario) -> Result<SWEState> {
    step_indexed(state, scenario, 0)
}

/// Like [`step`], tagging errors with the caller's step index.
pub fn step_indexed(state: &SWEState, scenario: &SWEScenario, step_index: usize) -> Result<SWEState> {
    let (nx, ny) = (state.nx, state.ny);
    let g = scenario.g;
    let dt = scenario.dt;

    // x-direction interface fluxes at i+1/2 for i in -1..nx-1 plus the wall
    // faces; reflective ghosts mirror h and tangential momentum and negate
    // the normal momentum, which zeroes the mass flux through walls.
    let mut h_new = state.h.clone();
    let mut hu_new = state.hu.clone();
    let mut hv_new = state.hv.clone();

    // Left/right states for an x-face given cell index or ghost.
    let cell_x = |i: isize, j: usize| -> (f64, f64, f64) {
        if i < 0 {
            let k = 0usize * ny + j;
            (state.h[k], -state.hu[k], state.hv[k])
        } else if i as usize >= nx {
            let k = (nx - 1) * ny + j;
            (state.h[k], -state.hu[k], state.hv[k])
        } else {
            let k = i as usize * ny + j;
            (state.h[k], state.hu[k], state.hv[k])
        }
    };
    let cell_y = |i: usize, j: isize| -> (f64, f64, f64) {
        if j < 0 {
            let k = i * ny;
            (state.h[k], state.hu[k], -state.hv[k])
        } else if j as usize >= ny {
            let k = i * ny + (ny - 1);
            (state.h[k], state.hu[k], -state.hv[k])
        } else {
            let k = i * ny + j as usize;
            (state.h[k], state.hu[k], state.hv[k])
        }
    };

    // F(U) = (hu, hu^2/h + g h^2 / 2, hu hv / h)
    let flux_x = |(h, hu, hv): (f64, f64, f64)| -> (f64, f64, f64) {
        (hu, hu * hu / h + 0.5 * g * h * h, hu * hv / h)
    };
    // G(U) = (hv, hu hv / h, hv^2/h + g h^2 / 2)
    let flux_y = |(h, hu, hv): (f64, f64, f64)| -> (f64, f64, f64) {
        (hv, hu * hv / h, hv * hv / h + 0.5 * g * h * h)
    };

    let llf = |l: (f64, f64, f64),
               r: (f64, f64, f64),
               fl: (f64, f64, f64),
               fr: (f64, f64, f64),
               normal_momentum: fn(&(f64, f64, f64)) -> f64|
     -> (f64, f64, f64) {
        let a = wave_speed(l.0, normal_momentum(&l), g).max(wave_speed(r.0, normal_momentum(&r), g));
        (
            0.5 * (fl.0 + fr.0) - 0.5 * a * (r.0 - l.0),
            0.5 * (fl.1 + fr.1) - 0.5 * a * (r.1 - l.1),
            0.5 * (fl.2 + fr.2) - 0.5 * a * (r.2 - l.2),
        )
    };

    // x sweep
    for j in 0..ny {
        let mut left = cell_x(-1, j);
        let mut flux_left = {
            let fl = flux_x(left);
            let r = cell_x(0, j);
            let fr = flux_x(r);
            llf(left, r, fl, fr, |u| u.1)
        };
        for i in 0..nx {
            let here = cell_x(i as isize, j);
            let right = cell_x(i as isize + 1, j);
            let flux_right = llf(here, right, flux_x(here), flux_x(right), |u| u.1);
            let k = i * ny + j;
            h_new[k] -= dt * (flux_right.0 - flux_left.0);
            hu_new[k] -= dt * (flux_right.1 - flux_left.1);
            hv_new[k] -= dt * (flux_right.2 - flux_left.2);
            left = here;
            let _ = left;
            flux_left = flux_right;
        }
    }

    // y sweep
    for i in 0..nx {
        let mut flux_low = {
            let l = cell_y(i, -1);
            let r = cell_y(i, 0);
            llf(l, r, flux_y(l), flux_y(r), |u| u.2)
        };
        for j in 0..ny {
            let here = cell_y(i, j as isize);
            let upper = cell_y(i, j as isize + 1);
            let flux_high = llf(here, upper, flux_y(here), flux_y(upper), |u| u.2);
            let k = i * ny + j;
            h_new[k] -= dt * (flux_high.0 - flux_low.0);
            hu_new[k] -= dt * (flux_high.1 - flux_low.1);
            hv_new[k] -= dt * (flux_high.2 - flux_low.2);
            flux_low = flux_high;
        }
    }

    for (k, h) in h_new.iter().enumerate() {
        if !h.is_finite() || !hu_new[k].is_finite() || !hv_new[k].is_finite() {
            return Err(Error::Divergence {
                context: format!("step {step_index}"),
                reason: "non-finite state".into(),
            });
        }
        if *h <= 0.0 {
            return Err(Error::Divergence {
                context: format!("step {step_index}"),
                reason: format!("water depth {h} <= 0 at cell {k}"),
            });
        }
    }

    Ok(SWEState {
        nx,
        ny,
        h: h_new,
        hu: hu_new,
        hv: hv_new,
    })
}

/// Runs the full scenario: `total_steps` updates, the first
/// `equilibrium_steps` discarded, one (u, v, h) frame recorded every
/// `snapshot_interval` steps thereafter.
pub fn simulate(scenario: &SWEScenario) -> Result<FieldSequence> {
    scenario.validate()?;
    let mut state = init_disturbance(scenario)?;
    let mut frames = Vec::with_capacity(scenario.snapshot_count());
    for n in 1..=scenario.total_steps {
        state = step_indexed(&state, scenario, n)?;
        if n > scenario.equilibrium_steps
            && (n - scenario.equilibrium_steps) % scenario.snapshot_interval == 0
        {
            frames.push(state.to_field()?);
        }
    }
    FieldSequence::new(frames, scenario.snapshot_interval)
}

/// Samples `train_count + test_count` scenarios (delta_h ~ U[0.2, 0.8],
/// radius ~ U[4, 12], center uniform with a margin of one radius from each
/// wall), simulates each and writes DSVT files `sim_%03d.dsvt` under
/// `out_dir`, returning a manifest that records every sampled parameter.
pub fn generate_dataset(
    out_dir: &Path,
    base: &SWEScenario,
    train_count: usize,
    test_count: usize,
    seed: u64,
    sensors: SensorSpec,
    model: ModelSpec,
    training: TrainingSpec,
) -> Result<ExperimentManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for idx in 0..train_count + test_count {
        let delta_h = rng.gen_range(DELTA_H_RANGE.0..=DELTA_H_RANGE.1);
        // cap the radius so a one-radius margin always fits the grid
        let radius_hi = RADIUS_RANGE.1.min((base.nx.min(base.ny) / 4) as f64);
        if radius_hi < RADIUS_RANGE.0 {
            return Err(Error::Validation(format!(
                "grid {}x{} is too small for a radius-{} disturbance with margin",
                base.nx, base.ny, RADIUS_RANGE.0
            )));
        }
        let radius = rng.gen_range(RADIUS_RANGE.0..=radius_hi);
        let margin = radius.ceil() as usize;
        let cx = rng.gen_range(margin..base.nx - margin) as f64;
        let cy = rng.gen_range(margin..base.ny - margin) as f64;
        // kept within i64 so the manifest stays TOML-representable
        let sim_seed = rng.gen::<u64>() & (i64::MAX as u64);
        let scenario = SWEScenario {
            delta_h,
            radius,
            center: (cx, cy),
            seed: sim_seed,
            ..base.clone()
        };
        let seq = simulate(&scenario)?;
        let rel = std::path::PathBuf::from(format!("sim_{idx:03}.dsvt"));
        crate::data::write_tensor_create_dirs(&out_dir.join(&rel), &seq)?;
        entries.push(SimEntry {
            path: rel,
            seed: sim_seed,
            delta_h,
            radius,
            center: (cx as usize, cy as usize),
        });
    }
    let test_sims = entries.split_off(train_count);
    let manifest = ExperimentManifest {
        seed,
        split: SplitSpec {
            train_count,
            test_count,
        },
        source: SourceSpec::Solver(base.clone()),
        sensors,
        model,
        training,
        train_sims: entries,
        test_sims,
    };
    manifest.save(&out_dir.join("manifest.toml"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_scenario() -> SWEScenario {
        SWEScenario {
            delta_h: 0.0,
            ..SWEScenario::default()
        }
    }

    #[test]
    fn zero_disturbance_gives_uniform_depth() {
        let state = init_disturbance(&flat_scenario()).unwrap();
        assert!(state.h.iter().all(|&h| h == 1.0));
        assert!(state.hu.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn disturbance_cells_match_brute_force_scan() {
        let scenario = SWEScenario {
            delta_h: 0.4,
            radius: 4.0,
            center: (32.0, 32.0),
            ..SWEScenario::default()
        };
        let state = init_disturbance(&scenario).unwrap();
        let raised = state.h.iter().filter(|&&h| h > 1.0).count();
        // independent point-in-circle enumeration
        let mut expected = 0;
        for i in 0..64i64 {
            for j in 0..64i64 {
                let (dx, dy) = (i as f64 - 32.0, j as f64 - 32.0);
                if dx * dx + dy * dy <= 16.0 {
                    expected += 1;
                }
            }
        }
        assert_eq!(raised, expected);
        for i in 0..64usize {
            for j in 0..64usize {
                let (dx, dy) = (i as f64 - 32.0, j as f64 - 32.0);
                let inside = dx * dx + dy * dy <= 16.0;
                assert_eq!(state.h[i * 64 + j] > 1.0, inside, "cell ({i},{j})");
            }
        }
    }

    #[test]
    fn out_of_range_delta_h_rejected() {
        let scenario = SWEScenario {
            delta_h: 0.9,
            ..SWEScenario::default()
        };
        assert!(matches!(init_disturbance(&scenario), Err(Error::Validation(_))));
    }

    #[test]
    fn center_too_close_to_wall_rejected() {
        let scenario = SWEScenario {
            center: (2.0, 32.0),
            radius: 4.0,
            ..SWEScenario::default()
        };
        assert!(init_disturbance(&scenario).is_err());
    }

    #[test]
    fn flat_state_is_fixed_point() {
        let scenario = flat_scenario();
        let state = init_disturbance(&scenario).unwrap();
        let next = step(&state, &scenario).unwrap();
        let max_change = state
            .h
            .iter()
            .zip(&next.h)
            .chain(state.hu.iter().zip(&next.hu))
            .chain(state.hv.iter().zip(&next.hv))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_change < 1e-12, "max change {max_change}");
    }

    #[test]
    fn mass_conserved_per_step() {
        let scenario = SWEScenario::default();
        let mut state = init_disturbance(&scenario).unwrap();
        let m0 = state.total_mass();
        for n in 0..50 {
            let next = step_indexed(&state, &scenario, n).unwrap();
            let m1 = next.total_mass();
            assert!(
                ((m1 - m0) / m0).abs() < 1e-12,
                "mass drift {} at step {n}",
                (m1 - m0) / m0
            );
            state = next;
        }
    }

    #[test]
    fn cfl_guard_rejects_large_dt() {
        let scenario = SWEScenario {
            dt: 0.6,
            ..SWEScenario::default()
        };
        assert!(scenario.validate().is_err());
    }

    #[test]
    fn simulate_flat_gives_constant_frames() {
        let scenario = SWEScenario {
            delta_h: 0.0,
            total_steps: 600,
            ..SWEScenario::default()
        };
        let seq = simulate(&scenario).unwrap();
        assert_eq!(seq.t(), 10);
        for frame in seq.frames() {
            for x in 0..4 {
                assert_eq!(frame.get(x, x, 0), 0.0);
                assert_eq!(frame.get(x, x, 1), 0.0);
                assert_eq!(frame.get(x, x, 2), 1.0);
            }
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let scenario = SWEScenario {
            total_steps: 700,
            ..SWEScenario::default()
        };
        let a = simulate(&scenario).unwrap();
        let b = simulate(&scenario).unwrap();
        assert_eq!(a, b);
    }
}
