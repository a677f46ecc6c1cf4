//! Sensor placement, observation extraction and Voronoi rasterization of
//! sparse observations onto the grid.
//!
//! Every grid cell is assigned the channel values of its nearest sensor
//! under Euclidean distance on integer cell centers; ties go to the lowest
//! sensor index so the partition is deterministic and oracle-testable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Field, FieldSequence, Mask};
use crate::error::{Error, Result};

/// One sensor record: integer cell position plus one value per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensor {
    pub i: usize,
    pub j: usize,
    pub values: Vec<f32>,
}

/// Per-timestep sensor sets; positions may vary over time and K may vary
/// between series (not within reasonable use, but nothing forbids it).
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSeries {
    pub steps: Vec<Vec<Sensor>>,
}

impl SensorSeries {
    pub fn t(&self) -> usize {
        self.steps.len()
    }

    /// Structured text form: one block per timestep, `k` lines of
    /// `i j v1 ... v_nc`, blocks separated by a line `# t <index>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, sensors) in self.steps.iter().enumerate() {
            out.push_str(&format!("# t {t}\n"));
            for s in sensors {
                out.push_str(&format!("{} {}", s.i, s.j));
                for v in &s.values {
                    out.push_str(&format!(" {v}"));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut steps: Vec<Vec<Sensor>> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('#') {
                steps.push(Vec::new());
                continue;
            }
            let mut toks = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<f64> {
                tok.ok_or_else(|| Error::Validation("short sensor line".into()))?
                    .parse()
                    .map_err(|_| Error::Validation(format!("bad sensor line {line:?}")))
            };
            let i = parse(toks.next())? as usize;
            let j = parse(toks.next())? as usize;
            let values: Vec<f32> = toks
                .map(|t| {
                    t.parse::<f32>()
                        .map_err(|_| Error::Validation(format!("bad sensor value in {line:?}")))
                })
                .collect::<Result<_>>()?;
            steps
                .last_mut()
                .ok_or_else(|| Error::Validation("sensor data before first block header".into()))?
                .push(Sensor { i, j, values });
        }
        if steps.is_empty() {
            return Err(Error::Validation("empty sensor series".into()));
        }
        Ok(Self { steps })
    }
}

/// Reads the field at the given positions, order-preserving.
pub fn observe(field: &Field, positions: &[(usize, usize)]) -> Result<Vec<Vec<f32>>> {
    let (nx, ny, nc) = field.shape();
    positions
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            if i >= nx || j >= ny {
                return Err(Error::Validation(format!(
                    "sensor {k} at ({i}, {j}) outside {nx}x{ny} grid"
                )));
            }
            Ok((0..nc).map(|c| field.get(i, j, c)).collect())
        })
        .collect()
}

/// Draws `k` distinct valid cells uniformly and independently per timestep.
pub fn sample_sensors_random(
    seq: &FieldSequence,
    k: usize,
    seed: u64,
    mask: Option<&Mask>,
) -> Result<SensorSeries> {
    let (nx, ny, _) = seq.shape();
    let valid_cells: Vec<(usize, usize)> = (0..nx)
        .flat_map(|i| (0..ny).map(move |j| (i, j)))
        .filter(|&(i, j)| mask.map(|m| m.is_valid(i, j)).unwrap_or(true))
        .collect();
    if k >= valid_cells.len() {
        return Err(Error::Validation(format!(
            "k = {k} must be below the number of valid cells ({})",
            valid_cells.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(seq.t());
    for frame in seq.frames() {
        // Partial Fisher-Yates over a fresh index vector.
        let mut pool: Vec<usize> = (0..valid_cells.len()).collect();
        let mut positions = Vec::with_capacity(k);
        for slot in 0..k {
            let pick = rng.gen_range(slot..pool.len());
            pool.swap(slot, pick);
            positions.push(valid_cells[pool[slot]]);
        }
        let values = observe(frame, &positions)?;
        steps.push(
            positions
                .into_iter()
                .zip(values)
                .map(|((i, j), values)| Sensor { i, j, values })
                .collect(),
        );
    }
    Ok(SensorSeries { steps })
}

/// Near-square lattice of `base_count` sensors, each displaced per timestep
/// by independent integer offsets in [-jitter, jitter]^2, clamped to the
/// grid. Colliding positions are re-jittered a bounded number of times and
/// then fall back to the lattice point.
pub fn sample_sensors_jittered(
    seq: &FieldSequence,
    base_count: usize,
    jitter: i64,
    seed: u64,
) -> Result<SensorSeries> {
    let (nx, ny, _) = seq.shape();
    let side = (base_count as f64).sqrt().round() as usize;
    if side * side != base_count {
        return Err(Error::Validation(format!(
            "base_count {base_count} is not a square lattice size"
        )));
    }
    // Lattice points centered in equal tiles.
    let lattice: Vec<(usize, usize)> = (0..side)
        .flat_map(|a| (0..side).map(move |b| (a, b)))
        .map(|(a, b)| {
            let i = ((a as f64 + 0.5) * nx as f64 / side as f64).floor() as usize;
            let j = ((b as f64 + 0.5) * ny as f64 / side as f64).floor() as usize;
            (i.min(nx - 1), j.min(ny - 1))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(seq.t());
    for frame in seq.frames() {
        let mut taken = std::collections::HashSet::new();
        let mut positions = Vec::with_capacity(base_count);
        for &(li, lj) in &lattice {
            let mut placed = (li, lj);
            let mut ok = false;
            for _ in 0..32 {
                let di = rng.gen_range(-jitter..=jitter);
                let dj = rng.gen_range(-jitter..=jitter);
                let i = (li as i64 + di).clamp(0, nx as i64 - 1) as usize;
                let j = (lj as i64 + dj).clamp(0, ny as i64 - 1) as usize;
                if taken.insert((i, j)) {
                    placed = (i, j);
                    ok = true;
                    break;
                }
            }
            if !ok {
                // lattice-point fallback; only reachable under extreme jitter
                if !taken.insert((li, lj)) {
                    return Err(Error::Validation(
                        "jitter fallback collided with an existing sensor".into(),
                    ));
                }
                placed = (li, lj);
            }
            positions.push(placed);
        }
        let values = observe(frame, &positions)?;
        steps.push(
            positions
                .into_iter()
                .zip(values)
                .map(|((i, j), values)| Sensor { i, j, values })
                .collect(),
        );
    }
    Ok(SensorSeries { steps })
}

/// Tessellated observation field plus the owner map used for testing.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiField {
    pub field: Field,
    /// Owning sensor index per cell, indexed x * ny + y.
    pub owners: Vec<usize>,
}

/// Rasterizes one timestep's sensors onto the grid: every cell takes the
/// channel values of its nearest sensor (lowest index wins ties).
pub fn tessellate(sensors: &[Sensor], nx: usize, ny: usize, nc: usize) -> Result<VoronoiField> {
    if sensors.is_empty() {
        return Err(Error::Validation("tessellate needs at least one sensor".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for s in sensors {
        if s.i >= nx || s.j >= ny {
            return Err(Error::Validation(format!(
                "sensor at ({}, {}) outside {nx}x{ny} grid",
                s.i, s.j
            )));
        }
        if s.values.len() != nc {
            return Err(Error::Shape(format!(
                "sensor has {} channels, expected {nc}",
                s.values.len()
            )));
        }
        if !seen.insert((s.i, s.j)) {
            return Err(Error::Validation(format!(
                "duplicate sensor position ({}, {})",
                s.i, s.j
            )));
        }
    }
    let mut field = Field::zeros(nx, ny, nc)?;
    let mut owners = vec![0usize; nx * ny];
    for x in 0..nx {
        for y in 0..ny {
            let mut best = usize::MAX;
            let mut best_d = u64::MAX;
            for (k, s) in sensors.iter().enumerate() {
                let dx = x as i64 - s.i as i64;
                let dy = y as i64 - s.j as i64;
                let d = (dx * dx + dy * dy) as u64;
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            owners[x * ny + y] = best;
            for c in 0..nc {
                field.set(x, y, c, sensors[best].values[c]);
            }
        }
    }
    Ok(VoronoiField { field, owners })
}

/// Tessellates a whole series against a target grid shape.
pub fn tessellate_series(
    series: &SensorSeries,
    nx: usize,
    ny: usize,
    nc: usize,
) -> Result<FieldSequence> {
    let frames = series
        .steps
        .iter()
        .map(|sensors| tessellate(sensors, nx, ny, nc).map(|v| v.field))
        .collect::<Result<Vec<_>>>()?;
    FieldSequence::new(frames, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FieldSequence;

    fn gradient_field() -> Field {
        let mut f = Field::zeros(16, 16, 2).unwrap();
        for x in 0..16 {
            for y in 0..16 {
                f.set(x, y, 0, x as f32 + 0.1 * y as f32);
                f.set(x, y, 1, -(y as f32));
            }
        }
        f
    }

    #[test]
    fn observe_reads_exact_cells() {
        let f = gradient_field();
        let obs = observe(&f, &[(0, 0), (3, 7)]).unwrap();
        assert_eq!(obs[0], vec![0.0, 0.0]);
        assert_eq!(obs[1], vec![3.7, -7.0]);
        assert!(observe(&f, &[(16, 0)]).is_err());
    }

    #[test]
    fn observe_all_cells_flattens_field() {
        let f = gradient_field();
        let positions: Vec<(usize, usize)> =
            (0..16).flat_map(|x| (0..16).map(move |y| (x, y))).collect();
        let obs = observe(&f, &positions).unwrap();
        for (k, &(x, y)) in positions.iter().enumerate() {
            assert_eq!(obs[k][0], f.get(x, y, 0));
        }
    }

    #[test]
    fn single_sensor_floods_grid() {
        let v = tessellate(
            &[Sensor {
                i: 3,
                j: 4,
                values: vec![2.5],
            }],
            16,
            16,
            1,
        )
        .unwrap();
        assert!(v.field.values().iter().all(|&x| x == 2.5));
        assert!(v.owners.iter().all(|&o| o == 0));
    }

    #[test]
    fn sensor_at_every_cell_is_identity() {
        let f = gradient_field();
        let sensors: Vec<Sensor> = (0..16)
            .flat_map(|i| (0..16).map(move |j| (i, j)))
            .map(|(i, j)| Sensor {
                i,
                j,
                values: vec![f.get(i, j, 0), f.get(i, j, 1)],
            })
            .collect();
        let v = tessellate(&sensors, 16, 16, 2).unwrap();
        assert_eq!(v.field.values(), f.values());
    }

    #[test]
    fn owner_map_matches_brute_force_oracle() {
        use rand::{Rng, SeedableRng};
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.gen_range(1..=7);
            let mut taken = std::collections::HashSet::new();
            let sensors: Vec<Sensor> = (0..k)
                .map(|_| loop {
                    let (i, j) = (rng.gen_range(0..16), rng.gen_range(0..16));
                    if taken.insert((i, j)) {
                        return Sensor {
                            i,
                            j,
                            values: vec![rng.gen::<f32>()],
                        };
                    }
                })
                .collect();
            let v = tessellate(&sensors, 16, 16, 1).unwrap();
            for x in 0..16usize {
                for y in 0..16usize {
                    // independent nearest-sensor scan
                    let mut best = 0;
                    let mut best_d = f64::INFINITY;
                    for (idx, s) in sensors.iter().enumerate() {
                        let d = ((x as f64 - s.i as f64).powi(2)
                            + (y as f64 - s.j as f64).powi(2))
                        .sqrt();
                        if d < best_d {
                            best_d = d;
                            best = idx;
                        }
                    }
                    assert_eq!(v.owners[x * 16 + y], best, "seed {seed} cell ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn tessellation_is_idempotent() {
        let f = gradient_field();
        let sensors: Vec<Sensor> = [(1usize, 2usize), (9, 3), (14, 14), (4, 12)]
            .iter()
            .map(|&(i, j)| Sensor {
                i,
                j,
                values: vec![f.get(i, j, 0), f.get(i, j, 1)],
            })
            .collect();
        let v1 = tessellate(&sensors, 16, 16, 2).unwrap();
        let re_observed: Vec<Sensor> = sensors
            .iter()
            .map(|s| Sensor {
                i: s.i,
                j: s.j,
                values: (0..2).map(|c| v1.field.get(s.i, s.j, c)).collect(),
            })
            .collect();
        let v2 = tessellate(&re_observed, 16, 16, 2).unwrap();
        assert_eq!(v1, v2);
    }

    fn small_seq(t: usize) -> FieldSequence {
        let frames = (0..t).map(|_| gradient_field()).collect();
        FieldSequence::new(frames, 0).unwrap()
    }

    #[test]
    fn random_sampler_rejects_full_grid() {
        let seq = small_seq(1);
        assert!(sample_sensors_random(&seq, 256, 0, None).is_err());
        assert!(sample_sensors_random(&seq, 255, 0, None).is_ok());
    }

    #[test]
    fn random_sampler_is_seeded_and_distinct() {
        let seq = small_seq(4);
        let a = sample_sensors_random(&seq, 20, 11, None).unwrap();
        let b = sample_sensors_random(&seq, 20, 11, None).unwrap();
        assert_eq!(a, b);
        for step in &a.steps {
            let set: std::collections::HashSet<_> = step.iter().map(|s| (s.i, s.j)).collect();
            assert_eq!(set.len(), 20);
        }
        // time-varying positions: consecutive steps should not all coincide
        let p0: Vec<_> = a.steps[0].iter().map(|s| (s.i, s.j)).collect();
        let p1: Vec<_> = a.steps[1].iter().map(|s| (s.i, s.j)).collect();
        assert_ne!(p0, p1);
    }

    #[test]
    fn random_sampler_respects_mask() {
        let seq = small_seq(2);
        let mut mask = Mask::all_valid(16, 16);
        for j in 0..16 {
            mask.valid[j] = false; // forbid column x = 0
        }
        let s = sample_sensors_random(&seq, 30, 5, Some(&mask)).unwrap();
        for step in &s.steps {
            assert!(step.iter().all(|s| s.i != 0));
        }
    }

    #[test]
    fn jittered_zero_is_exact_lattice() {
        let mut frames = Vec::new();
        for _ in 0..3 {
            let mut f = Field::zeros(64, 64, 1).unwrap();
            f.values_mut().iter_mut().for_each(|v| *v = 1.0);
            frames.push(f);
        }
        let seq = FieldSequence::new(frames, 0).unwrap();
        let s = sample_sensors_jittered(&seq, 100, 0, 3).unwrap();
        let expected: Vec<(usize, usize)> = (0..10)
            .flat_map(|a| (0..10).map(move |b| (a, b)))
            .map(|(a, b)| {
                (
                    ((a as f64 + 0.5) * 6.4).floor() as usize,
                    ((b as f64 + 0.5) * 6.4).floor() as usize,
                )
            })
            .collect();
        for step in &s.steps {
            let got: Vec<(usize, usize)> = step.iter().map(|s| (s.i, s.j)).collect();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn jittered_positions_stay_near_lattice_and_distinct() {
        let scenario = crate::swe::SWEScenario {
            total_steps: 800,
            ..crate::swe::SWEScenario::default()
        };
        let seq = crate::swe::simulate(&scenario).unwrap();
        let s = sample_sensors_jittered(&seq, 100, 2, 17).unwrap();
        let lattice: Vec<(i64, i64)> = (0..10)
            .flat_map(|a| (0..10).map(move |b| (a, b)))
            .map(|(a, b)| {
                (
                    ((a as f64 + 0.5) * 6.4).floor() as i64,
                    ((b as f64 + 0.5) * 6.4).floor() as i64,
                )
            })
            .collect();
        for step in &s.steps {
            assert_eq!(step.len(), 100);
            let set: std::collections::HashSet<_> = step.iter().map(|s| (s.i, s.j)).collect();
            assert_eq!(set.len(), 100, "positions must be distinct");
            for (s, &(li, lj)) in step.iter().zip(&lattice) {
                let d = (s.i as i64 - li).abs().max((s.j as i64 - lj).abs());
                assert!(d <= 2, "Chebyshev distance {d} from lattice");
            }
        }
    }

    #[test]
    fn sensor_series_text_round_trip() {
        let seq = small_seq(2);
        let s = sample_sensors_random(&seq, 5, 1, None).unwrap();
        let text = s.to_text();
        let back = SensorSeries::from_text(&text).unwrap();
        assert_eq!(s, back);
    }
}
