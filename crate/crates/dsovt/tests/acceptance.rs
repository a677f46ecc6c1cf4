//! End-to-end acceptance gate: one test per criterion, each printing a
//! single PASS/FAIL verdict line (run with `--nocapture` to see them live;
//! cargo prints captured output for failing tests regardless).
//!
//! The expensive criteria (encoder-decoder reconstruction quality, baseline
//! ordering, physics-constraint effect) share generated datasets and trained
//! models, cached on disk under the cargo test tmpdir so reruns are fast.

use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsovt::data::{Field, FieldSequence, NormStats};
use dsovt::eval::{
    evaluate_suite, evaluation_range, metric_report, psnr, rrmse, ssim, Method, RollingSpec,
};
use dsovt::kriging::{fit_variogram, KrigingSystem};
use dsovt::manifest::{ExperimentManifest, ModelSpec, SensorSpec, TrainingSpec};
use dsovt::nn::{load_model, save_model, CedModel, ConvLstmModel, LstmModel, ModelBundle};
use dsovt::swe::{generate_dataset, init_disturbance, simulate, step, SWEScenario};
use dsovt::train::{
    grad_check, prepare_data, train_ced, train_ced_lstm, train_convlstm, energy, EnergySpec,
    GradTarget, PreparedData, SimTensors,
};
use dsovt::data::normalize;
use dsovt::voronoi::{tessellate, Sensor, SensorSeries};

fn verdict(n: usize, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n:>2} [{name}]: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} [{name}] failed: {detail}");
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_01_voronoi_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1);
    let mut cells = 0usize;
    let mut mismatches = 0usize;
    for _ in 0..1000 {
        let nx = rng.gen_range(8..=32usize);
        let ny = rng.gen_range(8..=32usize);
        let k = rng.gen_range(1..=15usize);
        let mut seen = std::collections::HashSet::new();
        let mut sensors = Vec::with_capacity(k);
        while sensors.len() < k {
            let (i, j) = (rng.gen_range(0..nx), rng.gen_range(0..ny));
            if seen.insert((i, j)) {
                sensors.push(Sensor {
                    i,
                    j,
                    values: vec![rng.gen_range(0.0f32..1.0)],
                });
            }
        }
        let vf = tessellate(&sensors, nx, ny, 1).unwrap();
        for x in 0..nx {
            for y in 0..ny {
                // oracle: minimum squared distance first, then the lowest
                // sensor index among the minimizers
                let d2 = |s: &Sensor| {
                    let (dx, dy) = (x as f64 - s.i as f64, y as f64 - s.j as f64);
                    dx * dx + dy * dy
                };
                let dmin = sensors.iter().map(|s| d2(s)).fold(f64::INFINITY, f64::min);
                let owner = sensors.iter().position(|s| d2(s) == dmin).unwrap();
                cells += 1;
                if vf.owners[x * ny + y] != owner {
                    mismatches += 1;
                }
            }
        }
    }
    let dt = t0.elapsed();
    verdict(
        1,
        "voronoi oracle equivalence",
        mismatches == 0 && dt < Duration::from_secs(10),
        &format!("{mismatches} mismatches over {cells} cells in 1000 cases, {dt:.2?}"),
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_02_shallow_water_invariants() {
    let t0 = Instant::now();

    // flat state is a fixed point
    let flat = simulate(&SWEScenario {
        delta_h: 0.0,
        total_steps: 1000,
        equilibrium_steps: 0,
        snapshot_interval: 100,
        ..SWEScenario::default()
    })
    .unwrap();
    let mut flat_dev = 0.0f64;
    for f in flat.frames() {
        for x in 0..f.nx() {
            for y in 0..f.ny() {
                flat_dev = flat_dev
                    .max(f.get(x, y, 0).abs() as f64)
                    .max(f.get(x, y, 1).abs() as f64)
                    .max((f.get(x, y, 2) - 1.0).abs() as f64);
            }
        }
    }

    // mass conservation over a full 3500-step run, measured on the solver's
    // own double-precision state (snapshots are cast down to f32)
    let scenario = SWEScenario::default();
    let mut state = init_disturbance(&scenario).unwrap();
    let m0 = state.total_mass();
    let mut drift = 0.0f64;
    for _ in 0..scenario.total_steps {
        state = step(&state, &scenario).unwrap();
        drift = drift.max(((state.total_mass() - m0) / m0).abs());
    }

    // a centered disturbance stays mirror- and transpose-symmetric
    let sym = simulate(&SWEScenario {
        center: (31.5, 31.5),
        total_steps: 100,
        equilibrium_steps: 0,
        snapshot_interval: 1,
        ..SWEScenario::default()
    })
    .unwrap();
    let mut sym_dev = 0.0f64;
    for f in sym.frames() {
        let n = f.nx();
        for x in 0..n {
            for y in 0..n {
                let h = f.get(x, y, 2) as f64;
                sym_dev = sym_dev
                    .max((h - f.get(n - 1 - x, y, 2) as f64).abs())
                    .max((h - f.get(x, n - 1 - y, 2) as f64).abs())
                    .max((h - f.get(y, x, 2) as f64).abs());
                let u = f.get(x, y, 0) as f64;
                sym_dev = sym_dev
                    .max((u + f.get(n - 1 - x, y, 0) as f64).abs())
                    .max((u - f.get(x, n - 1 - y, 0) as f64).abs())
                    .max((u - f.get(y, x, 1) as f64).abs());
            }
        }
    }

    let dt = t0.elapsed();
    verdict(
        2,
        "shallow-water invariants",
        flat_dev < 1e-12 && drift < 1e-9 && sym_dev < 1e-10 && dt < Duration::from_secs(60),
        &format!("flat {flat_dev:.2e}, mass drift {drift:.2e}, symmetry {sym_dev:.2e}, {dt:.2?}"),
    );
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_03_gradient_correctness() {
    let t0 = Instant::now();
    let worst = [
        grad_check(GradTarget::CedReconstruction, 5, 997).unwrap(),
        grad_check(GradTarget::LatentComposite { lambda: 1e-3 }, 6, 11).unwrap(),
        grad_check(GradTarget::ConvComposite { lambda: 1e-3 }, 7, 29).unwrap(),
    ]
    .into_iter()
    .fold(0.0f64, f64::max);
    let dt = t0.elapsed();
    verdict(
        3,
        "gradient correctness",
        worst < 1e-3 && dt < Duration::from_secs(300),
        &format!("max relative error {worst:.2e} vs central differences, {dt:.2?}"),
    );
}

// ---------------------------------------------------------------- criterion 4

/// Independent dense solver for the oracle: Gaussian elimination with
/// partial pivoting, no shared code with the production path.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col] / d;
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

#[test]
fn criterion_04_kriging_correctness() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD4);
    let (mut worst_sum, mut worst_oracle, mut worst_exact) = (0.0f64, 0.0f64, 0.0f64);
    let mut systems = 0;
    while systems < 60 {
        let k = rng.gen_range(3..=25usize);
        let mut coords = Vec::with_capacity(k);
        let mut values = Vec::with_capacity(k);
        let mut seen = std::collections::HashSet::new();
        while coords.len() < k {
            let (i, j) = (rng.gen_range(0..32i64), rng.gen_range(0..32i64));
            if seen.insert((i, j)) {
                coords.push((i as f64, j as f64));
                values.push(rng.gen_range(-1.0f64..1.0));
            }
        }
        let mut model = fit_variogram(&coords, &values, 6).unwrap();
        if model.degenerate {
            continue;
        }
        model.nugget = 0.0; // exactness holds only without a nugget effect
        let c3: Vec<[f64; 3]> = coords.iter().map(|&(x, y)| [x, y, 0.0]).collect();
        let sys = match KrigingSystem::new(&c3, &values, &model) {
            Ok(s) => s,
            Err(_) => continue,
        };
        systems += 1;

        let q = (rng.gen_range(0.0..32.0), rng.gen_range(0.0..32.0));
        let (w, _) = sys.weights([q.0, q.1, 0.0]).unwrap();
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());

        // dense-solve oracle for the same query
        let gamma = |a: (f64, f64), b: (f64, f64)| {
            let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            model.gamma(d)
        };
        let mut a = vec![vec![0.0; k + 1]; k + 1];
        let mut b = vec![0.0; k + 1];
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    a[i][j] = gamma(coords[i], coords[j]);
                }
            }
            a[i][k] = 1.0;
            a[k][i] = 1.0;
            b[i] = gamma(coords[i], q);
        }
        b[k] = 1.0;
        let sol = gauss_solve(a, b);
        let oracle: f64 = (0..k).map(|i| sol[i] * values[i]).sum();
        let (pred, _) = sys.predict([q.0, q.1, 0.0]).unwrap();
        worst_oracle = worst_oracle.max((pred - oracle).abs());

        for (c, v) in coords.iter().zip(&values) {
            let (at, _) = sys.predict([c.0, c.1, 0.0]).unwrap();
            worst_exact = worst_exact.max((at - v).abs());
        }
    }
    let dt = t0.elapsed();
    verdict(
        4,
        "kriging correctness",
        worst_sum < 1e-10 && worst_oracle < 1e-10 && worst_exact < 1e-6
            && dt < Duration::from_secs(30),
        &format!(
            "weight sum {worst_sum:.2e}, oracle gap {worst_oracle:.2e}, exactness {worst_exact:.2e} over {systems} systems, {dt:.2?}"
        ),
    );
}

// ---------------------------------------------------------------- criterion 5

/// Independently coded structural-similarity reference (separable 1-D
/// Gaussian, mean-subtracted moments).
fn ssim_reference(a: &Field, b: &Field, range: f64) -> f64 {
    let (nx, ny, nc) = a.shape();
    let g1d: Vec<f64> = (-5i64..=5)
        .map(|d| (-((d * d) as f64) / (2.0 * 1.5 * 1.5)).exp())
        .collect();
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);
    let mut per_channel = 0.0;
    for c in 0..nc {
        let mut total = 0.0;
        for x in 0..nx {
            for y in 0..ny {
                let mut cells: Vec<(f64, f64, f64)> = Vec::new();
                for (ix, wx) in g1d.iter().enumerate() {
                    let xi = x as isize + ix as isize - 5;
                    if xi < 0 || xi >= nx as isize {
                        continue;
                    }
                    for (iy, wy) in g1d.iter().enumerate() {
                        let yi = y as isize + iy as isize - 5;
                        if yi < 0 || yi >= ny as isize {
                            continue;
                        }
                        cells.push((
                            wx * wy,
                            a.get(xi as usize, yi as usize, c) as f64,
                            b.get(xi as usize, yi as usize, c) as f64,
                        ));
                    }
                }
                let w: f64 = cells.iter().map(|t| t.0).sum();
                let mu_a: f64 = cells.iter().map(|t| t.0 * t.1).sum::<f64>() / w;
                let mu_b: f64 = cells.iter().map(|t| t.0 * t.2).sum::<f64>() / w;
                let var_a: f64 =
                    cells.iter().map(|t| t.0 * (t.1 - mu_a) * (t.1 - mu_a)).sum::<f64>() / w;
                let var_b: f64 =
                    cells.iter().map(|t| t.0 * (t.2 - mu_b) * (t.2 - mu_b)).sum::<f64>() / w;
                let cov: f64 =
                    cells.iter().map(|t| t.0 * (t.1 - mu_a) * (t.2 - mu_b)).sum::<f64>() / w;
                total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            }
        }
        per_channel += total / (nx * ny) as f64;
    }
    per_channel / nc as f64
}

#[test]
fn criterion_05_metric_identities_and_reference_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD5);
    let random_field = |rng: &mut ChaCha8Rng| {
        Field::new(
            16,
            16,
            2,
            (0..512).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
        )
        .unwrap()
    };

    let x = random_field(&mut rng);
    let identities = ssim(&x, &x, 1.0, None).unwrap() == 1.0
        && rrmse(&x, &x, 1.0, None).unwrap() == 0.0
        && psnr(&x, &x, 1.0, None).unwrap().is_infinite();

    let mut worst = 0.0f64;
    for _ in 0..50 {
        let a = random_field(&mut rng);
        let b = random_field(&mut rng);
        let ours = ssim(&a, &b, 1.0, None).unwrap();
        worst = worst.max((ours - ssim_reference(&a, &b, 1.0)).abs());
    }
    verdict(
        5,
        "metric identities",
        identities && worst < 1e-8,
        &format!("identities {identities}, reference gap {worst:.2e} over 50 pairs"),
    );
}

// -------------------------------------------------- shared heavy artifacts

fn accept_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn scenario_32() -> SWEScenario {
    SWEScenario {
        nx: 32,
        ny: 32,
        center: (15.5, 15.5),
        snapshot_interval: 15, // 200 frames per simulation
        ..SWEScenario::default()
    }
}

fn desk_model() -> ModelSpec {
    ModelSpec {
        latent: 128,
        lstm_layers: 2,
        lstm_hidden: 256,
        convlstm_layers: 2,
        convlstm_filters: 16,
    }
}

fn desk_training() -> TrainingSpec {
    TrainingSpec {
        s_in: 5,
        s_out: 5,
        lambda_energy: 0.0,
        n_init: 3,
        epochs: 10,
        learning_rate: 1e-3,
        batch_size: 8,
        window_stride: 10,
        frame_stride: 1,
    }
}

/// Generates (or reuses) a dataset directory and returns its manifest.
fn dataset(dir: &Path, seed: u64, k: usize, training: TrainingSpec) -> ExperimentManifest {
    let manifest_path = dir.join("manifest.toml");
    if manifest_path.exists() {
        return ExperimentManifest::load(&manifest_path).unwrap();
    }
    generate_dataset(
        dir,
        &scenario_32(),
        10,
        3,
        seed,
        SensorSpec::Random { k },
        desk_model(),
        training,
    )
    .unwrap()
}

fn cached_ced(
    path: &Path,
    data: &PreparedData,
    model: &ModelSpec,
    tr: &TrainingSpec,
    seed: u64,
) -> CedModel<f32> {
    if path.exists() {
        return load_model(path).unwrap().into_ced().unwrap();
    }
    let (m, _) = train_ced(data, model, tr, seed, None).unwrap();
    save_model(&ModelBundle::Ced(m.clone()), path).unwrap();
    m
}

struct ForecastLab {
    dir: PathBuf,
    manifest: ExperimentManifest,
    data: PreparedData,
    range: f64,
    encoder: CedModel<f32>,
}

static FORECAST: OnceLock<Mutex<ForecastLab>> = OnceLock::new();
static ORDERING: OnceLock<Mutex<ForecastLab>> = OnceLock::new();

fn build_lab(dir: PathBuf, seed: u64, k: usize, training: TrainingSpec) -> Mutex<ForecastLab> {
    let manifest = dataset(&dir, seed, k, training);
    let data = prepare_data(&manifest, Some(&dir), None).unwrap();
    let range = evaluation_range(&data.test).unwrap();
    let enc_tr = TrainingSpec {
        epochs: 20,
        ..manifest.training.clone()
    };
    let encoder = cached_ced(
        &dir.join("encoder.dsvm"),
        &data,
        &manifest.model,
        &enc_tr,
        manifest.seed,
    );
    Mutex::new(ForecastLab {
        dir,
        manifest,
        data,
        range,
        encoder,
    })
}

/// Dataset and models for the rolling physics comparison: dense-enough
/// sensors and symmetric windows so predicted output windows can be fed
/// back as inputs.
fn forecast_lab() -> &'static Mutex<ForecastLab> {
    FORECAST
        .get_or_init(|| build_lab(accept_dir().join("forecast"), 90210, 24, desk_training()))
}

/// Dataset and models for the head-to-head baseline comparison: sparse
/// sensors and a long output horizon, where per-cell temporal extrapolation
/// on top of spatial kriging falls behind learned dynamics.
fn ordering_lab() -> &'static Mutex<ForecastLab> {
    ORDERING.get_or_init(|| {
        let training = TrainingSpec {
            s_out: 10,
            ..desk_training()
        };
        build_lab(accept_dir().join("ordering"), 70712, 12, training)
    })
}

impl ForecastLab {
    fn lstm(&self, seed: u64, lambda: f64) -> LstmModel<f32> {
        let tag = if lambda > 0.0 { "phys" } else { "basic" };
        let path = self.dir.join(format!("lstm_s{seed}_{tag}.dsvm"));
        if path.exists() {
            return load_model(&path).unwrap().into_lstm().unwrap();
        }
        let tr = TrainingSpec {
            lambda_energy: lambda,
            epochs: 60,
            ..self.manifest.training.clone()
        };
        let (m, _) = train_ced_lstm(&self.data, &self.encoder, &self.manifest.model, &tr, seed, None)
            .unwrap();
        save_model(&ModelBundle::Lstm(m.clone()), &path).unwrap();
        m
    }

    /// Well-trained ConvLSTM for the head-to-head baseline comparison.
    fn convlstm_main(&self) -> ConvLstmModel<f32> {
        let path = self.dir.join("convlstm_main.dsvm");
        if path.exists() {
            return load_model(&path).unwrap().into_convlstm().unwrap();
        }
        let tr = TrainingSpec {
            epochs: 120,
            window_stride: 5,
            ..self.manifest.training.clone()
        };
        let (m, _) =
            train_convlstm(&self.data, &self.manifest.model, &tr, self.manifest.seed, None)
                .unwrap();
        save_model(&ModelBundle::ConvLstm(m.clone()), &path).unwrap();
        m
    }

    /// Lightly trained ConvLSTM pair for the directional physics comparison,
    /// where only the lambda setting differs between the two runs.
    fn convlstm(&self, seed: u64, lambda: f64) -> ConvLstmModel<f32> {
        let tag = if lambda > 0.0 { "phys" } else { "basic" };
        let path = self.dir.join(format!("convlstm_s{seed}_{tag}.dsvm"));
        if path.exists() {
            return load_model(&path).unwrap().into_convlstm().unwrap();
        }
        let tr = TrainingSpec {
            lambda_energy: lambda,
            ..self.manifest.training.clone()
        };
        let (m, _) = train_convlstm(&self.data, &self.manifest.model, &tr, seed, None).unwrap();
        save_model(&ModelBundle::ConvLstm(m.clone()), &path).unwrap();
        m
    }
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_06_encoder_decoder_reconstruction() {
    let t0 = Instant::now();
    let dir = accept_dir().join("recon");
    let training = TrainingSpec {
        s_in: 1,
        s_out: 1,
        lambda_energy: 0.0,
        n_init: 0,
        epochs: 100,
        learning_rate: 1e-3,
        batch_size: 16,
        window_stride: 1,
        frame_stride: 3,
    };
    let manifest = dataset(&dir, 60601, 24, training);
    let data = prepare_data(&manifest, Some(&dir), None).unwrap();
    let ced = cached_ced(
        &dir.join("ced.dsvm"),
        &data,
        &manifest.model,
        &manifest.training,
        manifest.seed,
    );

    let range = evaluation_range(&data.test).unwrap();
    let (mut ssim_sum, mut rrmse_sum, mut frames) = (0.0, 0.0, 0usize);
    for sim in &data.test {
        for (input, truth) in sim.inputs.iter().zip(sim.truth.frames()) {
            let (_, dec) = ced.forward(input);
            let mut pred = Field::from_matrix(data.nx, data.ny, &dec.out).unwrap();
            for x in 0..data.nx {
                for y in 0..data.ny {
                    for c in 0..data.nc {
                        pred.set(x, y, c, data.stats.denormalize_value(c, pred.get(x, y, c)));
                    }
                }
            }
            let r = metric_report(&pred, truth, range, None).unwrap();
            ssim_sum += r.ssim;
            rrmse_sum += r.rrmse;
            frames += 1;
        }
    }
    let (ssim, rrmse) = (ssim_sum / frames as f64, rrmse_sum / frames as f64);
    let dt = t0.elapsed();
    verdict(
        6,
        "encoder-decoder reconstruction",
        ssim >= 0.90 && rrmse <= 0.10 && dt < Duration::from_secs(45 * 60),
        &format!("held-out ssim {ssim:.4} (>= 0.90), rrmse {rrmse:.4} (<= 0.10), {frames} frames, {dt:.2?}"),
    );
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_07_baseline_ordering() {
    let t0 = Instant::now();
    let lab = ordering_lab().lock().unwrap();
    let lstm = lab.lstm(1, 0.0);
    let conv = lab.convlstm_main();
    let methods = vec![
        (
            "ced-lstm".to_string(),
            Method::CedLstm {
                ced: &lab.encoder,
                lstm: &lstm,
            },
        ),
        ("conv-lstm".to_string(), Method::ConvLstm(&conv)),
        ("kriging-2d".to_string(), Method::Kriging2d { nlags: 20 }),
        ("kriging-3d".to_string(), Method::Kriging3d { nlags: 20 }),
    ];
    let out = lab.dir.join("comparison");
    let summary =
        evaluate_suite(&lab.data, &methods, &lab.manifest.training, None, &out).unwrap();
    let by = |name: &str| {
        summary
            .rows
            .iter()
            .find(|r| r.name == name)
            .unwrap()
            .report
            .clone()
    };
    let (cl, conv_r, k2) = (by("ced-lstm"), by("conv-lstm"), by("kriging-2d"));
    let dt = t0.elapsed();
    verdict(
        7,
        "baseline ordering",
        cl.ssim > k2.ssim && conv_r.ssim > k2.ssim && cl.rrmse <= 0.15
            && dt < Duration::from_secs(2 * 3600),
        &format!(
            "ssim ced-lstm {:.4} / conv-lstm {:.4} / kriging-2d {:.4}; ced-lstm rrmse {:.4} (<= 0.15), {dt:.2?}",
            cl.ssim, conv_r.ssim, k2.ssim, cl.rrmse
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_08_physics_constraint_direction() {
    const LAMBDA: f64 = 5e-10;
    let t0 = Instant::now();
    let lab = forecast_lab().lock().unwrap();
    let spec = RollingSpec {
        start: 75,
        iterations: 20,
        s_in: lab.manifest.training.s_in,
    };

    let mean_rrmse = |family: &str, seed: u64, lambda: f64| -> f64 {
        let reports = match family {
            "ced-lstm" => {
                let m = lab.lstm(seed, lambda);
                dsovt::eval::rolling_reports_ced(&lab.data, &lab.encoder, &m, spec, lab.range)
                    .unwrap()
            }
            _ => {
                let m = lab.convlstm(seed, lambda);
                dsovt::eval::rolling_reports_convlstm(&lab.data, &m, spec, lab.range).unwrap()
            }
        };
        reports.iter().map(|r| r.rrmse).sum::<f64>() / reports.len() as f64
    };

    let mut all_ok = true;
    let mut detail = String::new();
    for family in ["ced-lstm", "conv-lstm"] {
        let (b1, p1) = (mean_rrmse(family, 1, 0.0), mean_rrmse(family, 1, LAMBDA));
        // a single ambiguous seed is settled by averaging three
        let (basic, phys, seeds) = if (b1 - p1).abs() < 0.005 {
            let extra: Vec<(f64, f64)> = [2u64, 3]
                .iter()
                .map(|&s| (mean_rrmse(family, s, 0.0), mean_rrmse(family, s, LAMBDA)))
                .collect();
            let basic = (b1 + extra[0].0 + extra[1].0) / 3.0;
            let phys = (p1 + extra[0].1 + extra[1].1) / 3.0;
            (basic, phys, 3)
        } else {
            (b1, p1, 1)
        };
        let ok = phys <= basic;
        all_ok &= ok;
        detail.push_str(&format!(
            "{family}: physics {phys:.5} vs basic {basic:.5} over {seeds} seed(s); "
        ));
    }
    let dt = t0.elapsed();
    detail.push_str(&format!("{dt:.2?}"));
    verdict(
        8,
        "physics-constraint direction",
        all_ok && dt < Duration::from_secs(2 * 3600),
        &detail,
    );
}

// ------------------------------------------------- small synthetic datasets

fn physical_prepared(seed: u64, frames: usize) -> PreparedData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth_frames: Vec<Field> = (0..frames)
        .map(|_| {
            let mut f = Field::zeros(8, 8, 3).unwrap();
            for x in 0..8 {
                for y in 0..8 {
                    f.set(x, y, 0, rng.gen_range(-0.5..0.5));
                    f.set(x, y, 1, rng.gen_range(-0.5..0.5));
                    f.set(x, y, 2, rng.gen_range(0.5..1.5));
                }
            }
            f
        })
        .collect();
    let truth = FieldSequence::new(truth_frames, 1).unwrap();
    let stats = NormStats::from_sequence(&truth);
    let (norm, _) = normalize(&truth, Some(&stats)).unwrap();
    let targets: Vec<Array2<f32>> = norm.frames().iter().map(|f| f.to_matrix()).collect();
    let inputs: Vec<Array2<f32>> = targets.iter().map(|m| m.mapv(|v| v * 0.9 + 0.05)).collect();
    let energies = truth
        .frames()
        .iter()
        .map(|f| energy(f, &EnergySpec::default()).unwrap())
        .collect();
    PreparedData {
        nx: 8,
        ny: 8,
        nc: 3,
        stats,
        mask: None,
        train: vec![SimTensors {
            inputs,
            targets,
            truth,
            energies,
            sensors: SensorSeries { steps: Vec::new() },
        }],
        test: vec![],
    }
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_09_lambda_zero_equivalence() {
    let data = physical_prepared(99, 8);
    let model = ModelSpec {
        latent: 4,
        lstm_layers: 1,
        lstm_hidden: 8,
        convlstm_layers: 1,
        convlstm_filters: 3,
    };
    let base = TrainingSpec {
        s_in: 2,
        s_out: 2,
        lambda_energy: 0.0,
        n_init: 0,
        epochs: 10,
        learning_rate: 1e-3,
        batch_size: 4,
        window_stride: 1,
        frame_stride: 1,
    };

    // conv-lstm: lambda 0 vs a positive lambda fully suppressed by warm-up
    // exercises both code paths and must land on identical parameters
    let (conv_a, _) = train_convlstm(&data, &model, &base, 3, None).unwrap();
    let suppressed = TrainingSpec {
        lambda_energy: 0.05,
        n_init: 10,
        ..base.clone()
    };
    let (conv_b, _) = train_convlstm(&data, &model, &suppressed, 3, None).unwrap();
    let conv_ok = conv_a.params.flat() == conv_b.params.flat();

    // latent-lstm route: the lambda 0 trajectory is deterministic and
    // genuinely different from a physics-weighted one
    let (ced, _) = train_ced(&data, &model, &base, 3, None).unwrap();
    let (lstm_a, _) = train_ced_lstm(&data, &ced, &model, &base, 3, None).unwrap();
    let (lstm_b, _) = train_ced_lstm(&data, &ced, &model, &base, 3, None).unwrap();
    let weighted = TrainingSpec {
        lambda_energy: 0.05,
        ..base.clone()
    };
    let (lstm_c, _) = train_ced_lstm(&data, &ced, &model, &weighted, 3, None).unwrap();
    let lstm_ok = lstm_a.params.flat() == lstm_b.params.flat()
        && lstm_a.params.flat() != lstm_c.params.flat();

    verdict(
        9,
        "lambda-zero equivalence",
        conv_ok && lstm_ok,
        &format!("conv-lstm bitwise {conv_ok}, latent-lstm bitwise {lstm_ok} over 10 epochs"),
    );
}

// --------------------------------------------------------------- criterion 10

#[test]
fn criterion_10_convlstm_warmup() {
    let data = physical_prepared(1010, 8);
    let model = ModelSpec {
        latent: 4,
        lstm_layers: 1,
        lstm_hidden: 8,
        convlstm_layers: 1,
        convlstm_filters: 2,
    };
    let tr = TrainingSpec {
        s_in: 2,
        s_out: 2,
        lambda_energy: 1e-4,
        n_init: 50,
        epochs: 52,
        learning_rate: 1e-3,
        batch_size: 4,
        window_stride: 1,
        frame_stride: 1,
    };
    let (_, report) = train_convlstm(&data, &model, &tr, 4, None).unwrap();
    let warm_zero = report
        .epochs
        .iter()
        .filter(|e| e.epoch <= 50)
        .all(|e| e.energy_term == 0.0);
    let active_after = report
        .epochs
        .iter()
        .filter(|e| e.epoch > 50)
        .all(|e| e.energy_term > 0.0);
    let switch = report.switch_epoch == Some(51);
    verdict(
        10,
        "conv-lstm warm-up",
        warm_zero && active_after && switch,
        &format!(
            "energy exactly 0 through epoch 50: {warm_zero}; computed after: {active_after}; switch epoch {:?}",
            report.switch_epoch
        ),
    );
}
