//! Image-quality metrics (SSIM, PSNR, R-RMSE, MSE), rolling-forecast engines
//! for both model families, and the comparison harness that writes CSV plot
//! data for methods side by side.
//!
//! All metrics skip grid cells marked invalid by a mask; SSIM renormalizes
//! its local Gaussian window over the valid cells that remain. The R-RMSE and
//! PSNR normalizer is the ground-truth value range over the evaluated frames.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;

use crate::data::{Field, Mask, NormStats};
use crate::error::{Error, Result};
use crate::kriging::{kriging_forecast_2d, kriging_forecast_3d};
use crate::manifest::TrainingSpec;
use crate::nn::{CedModel, ConvLstmModel, LstmModel};
use crate::train::{window_starts, PreparedData, SimTensors};

const SSIM_RADIUS: isize = 5; // 11x11 window
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_pair(a: &Field, b: &Field, data_range: f64, mask: Option<&Mask>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if !(data_range > 0.0) {
        return Err(Error::Validation(format!(
            "data range must be positive, got {data_range}"
        )));
    }
    if let Some(m) = mask {
        if (m.nx, m.ny) != (a.nx(), a.ny()) {
            return Err(Error::Shape("mask shape does not match fields".into()));
        }
    }
    Ok(())
}

fn cell_valid(mask: Option<&Mask>, x: usize, y: usize) -> bool {
    mask.map(|m| m.is_valid(x, y)).unwrap_or(true)
}

/// Mean squared error over valid cells, all channels pooled.
pub fn mse(a: &Field, b: &Field, mask: Option<&Mask>) -> Result<f64> {
    check_pair(a, b, 1.0, mask)?;
    let (nx, ny, nc) = a.shape();
    let mut sum = 0.0;
    let mut n = 0usize;
    for x in 0..nx {
        for y in 0..ny {
            if !cell_valid(mask, x, y) {
                continue;
            }
            for c in 0..nc {
                let d = (a.get(x, y, c) - b.get(x, y, c)) as f64;
                sum += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Validation("no valid cells to evaluate".into()));
    }
    Ok(sum / n as f64)
}

/// Mean local structural similarity: 11x11 Gaussian window (sigma 1.5),
/// stabilizers (0.01*range)^2 and (0.03*range)^2, channel-averaged. Window
/// weights are renormalized over in-bounds, unmasked cells.
pub fn ssim(a: &Field, b: &Field, data_range: f64, mask: Option<&Mask>) -> Result<f64> {
    check_pair(a, b, data_range, mask)?;
    let (nx, ny, nc) = a.shape();
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mut channel_mean = 0.0;
    for c in 0..nc {
        let mut total = 0.0;
        let mut centers = 0usize;
        for x in 0..nx {
            for y in 0..ny {
                if !cell_valid(mask, x, y) {
                    continue;
                }
                let (mut w_sum, mut sa, mut sb, mut saa, mut sbb, mut sab) =
                    (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for dx in -SSIM_RADIUS..=SSIM_RADIUS {
                    let xi = x as isize + dx;
                    if xi < 0 || xi >= nx as isize {
                        continue;
                    }
                    for dy in -SSIM_RADIUS..=SSIM_RADIUS {
                        let yi = y as isize + dy;
                        if yi < 0 || yi >= ny as isize {
                            continue;
                        }
                        if !cell_valid(mask, xi as usize, yi as usize) {
                            continue;
                        }
                        let w = (-((dx * dx + dy * dy) as f64)
                            / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
                            .exp();
                        let va = a.get(xi as usize, yi as usize, c) as f64;
                        let vb = b.get(xi as usize, yi as usize, c) as f64;
                        w_sum += w;
                        sa += w * va;
                        sb += w * vb;
                        saa += w * va * va;
                        sbb += w * vb * vb;
                        sab += w * va * vb;
                    }
                }
                let mu_a = sa / w_sum;
                let mu_b = sb / w_sum;
                let var_a = saa / w_sum - mu_a * mu_a;
                let var_b = sbb / w_sum - mu_b * mu_b;
                let cov = sab / w_sum - mu_a * mu_b;
                let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                total += num / den;
                centers += 1;
            }
        }
        if centers == 0 {
            return Err(Error::Validation("no valid cells to evaluate".into()));
        }
        channel_mean += total / centers as f64;
    }
    Ok(channel_mean / nc as f64)
}

/// Peak signal-to-noise ratio in dB; identical inputs yield the +inf sentinel.
pub fn psnr(a: &Field, b: &Field, data_range: f64, mask: Option<&Mask>) -> Result<f64> {
    check_pair(a, b, data_range, mask)?;
    let e = mse(a, b, mask)?;
    Ok(psnr_from_mse(e, data_range))
}

fn psnr_from_mse(mse: f64, data_range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (data_range * data_range / mse).log10()
    }
}

/// Root-mean-square error divided by the ground-truth value range.
pub fn rrmse(a: &Field, b: &Field, data_range: f64, mask: Option<&Mask>) -> Result<f64> {
    check_pair(a, b, data_range, mask)?;
    Ok(mse(a, b, mask)?.sqrt() / data_range)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub ssim: f64,
    pub psnr_db: f64,
    pub rrmse: f64,
    pub mse: f64,
}

pub fn metric_report(
    pred: &Field,
    truth: &Field,
    data_range: f64,
    mask: Option<&Mask>,
) -> Result<MetricReport> {
    let e = mse(pred, truth, mask)?;
    Ok(MetricReport {
        ssim: ssim(pred, truth, data_range, mask)?,
        psnr_db: psnr_from_mse(e, data_range),
        rrmse: e.sqrt() / data_range,
        mse: e,
    })
}

fn mean_report(frames: &[MetricReport], data_range: f64) -> MetricReport {
    let n = frames.len().max(1) as f64;
    let mse = frames.iter().map(|r| r.mse).sum::<f64>() / n;
    MetricReport {
        ssim: frames.iter().map(|r| r.ssim).sum::<f64>() / n,
        psnr_db: psnr_from_mse(mse, data_range),
        rrmse: mse.sqrt() / data_range,
        mse,
    }
}

/// One autoregressive long-horizon run: the predicted window of iteration k
/// is, bitwise, the input window of iteration k+1.
pub struct RollingRun {
    /// Input window of every iteration (kept so chaining can be audited).
    pub inputs: Vec<Vec<Array2<f32>>>,
    /// Predicted window of every iteration, in normalized model space.
    pub outputs: Vec<Vec<Array2<f32>>>,
}

/// Latent-space rolling forecast: advances the latent window with the
/// sequence model, feeding predictions back, and decodes nothing until the
/// caller asks (decoding is only needed for metrics).
pub fn rolling_forecast_ced(
    lstm: &LstmModel<f32>,
    init: &[Array2<f32>],
    iterations: usize,
) -> Result<RollingRun> {
    rolling(init, iterations, |window, s| {
        lstm.forward(window, s).outputs
    })
}

/// End-to-end rolling forecast: predicted dense fields are fed back directly
/// as the next input window (not re-tessellated observations).
pub fn rolling_forecast_convlstm(
    model: &ConvLstmModel<f32>,
    init: &[Array2<f32>],
    iterations: usize,
) -> Result<RollingRun> {
    rolling(init, iterations, |window, s| {
        model.forward(window, s).outputs
    })
}

fn rolling(
    init: &[Array2<f32>],
    iterations: usize,
    step: impl Fn(&[Array2<f32>], usize) -> Vec<Array2<f32>>,
) -> Result<RollingRun> {
    if iterations == 0 {
        return Err(Error::Validation("rolling forecast needs >= 1 iteration".into()));
    }
    if init.is_empty() {
        return Err(Error::Validation("rolling forecast needs a non-empty input window".into()));
    }
    let s = init.len();
    let mut window: Vec<Array2<f32>> = init.to_vec();
    let mut run = RollingRun {
        inputs: Vec::with_capacity(iterations),
        outputs: Vec::with_capacity(iterations),
    };
    for _ in 0..iterations {
        let out = step(&window, s);
        run.inputs.push(window.clone());
        run.outputs.push(out.clone());
        window = out;
    }
    Ok(run)
}

/// A forecasting method the comparison harness can evaluate.
pub enum Method<'a> {
    CedLstm {
        ced: &'a CedModel<f32>,
        lstm: &'a LstmModel<f32>,
    },
    ConvLstm(&'a ConvLstmModel<f32>),
    Kriging2d { nlags: usize },
    Kriging3d { nlags: usize },
    /// Copies the ground truth; sanity row (SSIM 1, R-RMSE 0, PSNR inf).
    Identity,
}

impl Method<'_> {
    pub fn default_name(&self) -> &'static str {
        match self {
            Method::CedLstm { .. } => "ced-lstm",
            Method::ConvLstm(_) => "conv-lstm",
            Method::Kriging2d { .. } => "kriging-2d",
            Method::Kriging3d { .. } => "kriging-3d",
            Method::Identity => "identity",
        }
    }
}

fn to_physical(m: &Array2<f32>, nx: usize, ny: usize, stats: &NormStats) -> Result<Field> {
    let mut field = Field::from_matrix(nx, ny, m)?;
    let nc = field.nc();
    let (fnx, fny) = (field.nx(), field.ny());
    for x in 0..fnx {
        for y in 0..fny {
            for c in 0..nc {
                let v = stats.denormalize_value(c, field.get(x, y, c));
                field.set(x, y, c, v);
            }
        }
    }
    Ok(field)
}

fn encode_window(ced: &CedModel<f32>, window: &[Array2<f32>]) -> Vec<Array2<f32>> {
    window.iter().map(|m| ced.encode(m).z).collect()
}

/// Predicts the physical fields for one window with the given method.
fn predict_window(
    method: &Method,
    sim: &SimTensors,
    start: usize,
    s_in: usize,
    s_out: usize,
    data: &PreparedData,
) -> Result<Vec<Field>> {
    let (nx, ny) = (data.nx, data.ny);
    let inputs = &sim.inputs[start..start + s_in];
    match method {
        Method::CedLstm { ced, lstm } => {
            let latents = encode_window(ced, inputs);
            let cache = lstm.forward(&latents, s_out);
            cache
                .outputs
                .iter()
                .map(|z| to_physical(&ced.decode(z).out, nx, ny, &data.stats))
                .collect()
        }
        Method::ConvLstm(model) => {
            let cache = model.forward(inputs, s_out);
            cache
                .outputs
                .iter()
                .map(|m| to_physical(m, nx, ny, &data.stats))
                .collect()
        }
        Method::Kriging2d { nlags } => {
            let steps = &sim.sensors.steps[start..start + s_in];
            kriging_forecast_2d(steps, nx, ny, *nlags, s_out)
        }
        Method::Kriging3d { nlags } => {
            let steps = &sim.sensors.steps[start..start + s_in];
            kriging_forecast_3d(steps, nx, ny, *nlags, s_out)
        }
        Method::Identity => Ok(sim.truth.frames()[start + s_in..start + s_in + s_out].to_vec()),
    }
}

/// Ground-truth value range (max - min over all channels and frames) of the
/// test split; the shared normalizer for PSNR, R-RMSE and SSIM stabilizers.
pub fn evaluation_range(sims: &[SimTensors]) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for sim in sims {
        for frame in sim.truth.frames() {
            for &v in frame.values() {
                lo = lo.min(v as f64);
                hi = hi.max(v as f64);
            }
        }
    }
    if !(hi > lo) {
        return Err(Error::Validation(
            "evaluation set has zero value range".into(),
        ));
    }
    Ok(hi - lo)
}

#[derive(Debug, Clone)]
pub struct MethodRow {
    pub name: String,
    pub report: MetricReport,
    pub infer_s: f64,
    pub windows: usize,
    /// Per-window mean squared errors, histogram raw material.
    pub window_mse: Vec<f64>,
}

pub struct SuiteSummary {
    pub data_range: f64,
    pub rows: Vec<MethodRow>,
    pub metrics_csv: PathBuf,
    pub hist_csv: PathBuf,
    pub rolling_csv: Option<PathBuf>,
}

/// Settings for the long-horizon part of the comparison.
#[derive(Debug, Clone, Copy)]
pub struct RollingSpec {
    /// Frame index at which the first input window starts.
    pub start: usize,
    pub iterations: usize,
    /// Window length; predictions are fed back verbatim, so input and output
    /// windows are the same size.
    pub s_in: usize,
}

/// Evaluates every method over all test-split windows, then (optionally) runs
/// rolling forecasts for the neural methods. Writes metrics.csv, hist.csv and
/// rolling.csv into `out_dir` and returns the aggregate rows.
pub fn evaluate_suite(
    data: &PreparedData,
    methods: &[(String, Method)],
    training: &TrainingSpec,
    rolling: Option<RollingSpec>,
    out_dir: &Path,
) -> Result<SuiteSummary> {
    if data.test.is_empty() {
        return Err(Error::Validation("manifest lists no test data".into()));
    }
    let (s_in, s_out) = (training.s_in, training.s_out);
    let data_range = evaluation_range(&data.test)?;
    let mask = data.mask.as_ref();

    let mut rows = Vec::with_capacity(methods.len());
    for (name, method) in methods {
        let mut frame_reports = Vec::new();
        let mut window_mse = Vec::new();
        let t0 = Instant::now();
        for sim in &data.test {
            let t = sim.truth.t();
            for start in window_starts(t, s_in, s_out, training.window_stride) {
                let preds = predict_window(method, sim, start, s_in, s_out, data)?;
                let mut wsum = 0.0;
                for (k, pred) in preds.iter().enumerate() {
                    let truth = sim.truth.frame(start + s_in + k);
                    let r = metric_report(pred, truth, data_range, mask)?;
                    wsum += r.mse;
                    frame_reports.push(r);
                }
                window_mse.push(wsum / preds.len().max(1) as f64);
            }
        }
        if frame_reports.is_empty() {
            return Err(Error::Validation(format!(
                "no evaluation windows fit the test data for method {name}"
            )));
        }
        rows.push(MethodRow {
            name: name.clone(),
            report: mean_report(&frame_reports, data_range),
            infer_s: t0.elapsed().as_secs_f64(),
            windows: window_mse.len(),
            window_mse,
        });
    }

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_csv = out_dir.join("metrics.csv");
    let mut text = String::from("method,ssim,psnr_db,rrmse,infer_s\n");
    for row in &rows {
        text.push_str(&format!(
            "{},{:.6},{},{:.6},{:.3}\n",
            row.name,
            row.report.ssim,
            fmt_db(row.report.psnr_db),
            row.report.rrmse,
            row.infer_s
        ));
    }
    std::fs::write(&metrics_csv, text).map_err(|e| Error::io(&metrics_csv, e))?;

    let hist_csv = out_dir.join("hist.csv");
    let mut text = String::from("bin_lo,bin_hi,count,variant\n");
    for row in &rows {
        for (lo, hi, count) in histogram(&row.window_mse, 20) {
            text.push_str(&format!("{lo:.6e},{hi:.6e},{count},{}\n", row.name));
        }
    }
    std::fs::write(&hist_csv, text).map_err(|e| Error::io(&hist_csv, e))?;

    let mut rolling_csv = None;
    if let Some(spec) = rolling {
        let mut text = String::from("iteration,ssim,psnr_db,rrmse,variant\n");
        let mut wrote = false;
        for (name, method) in methods {
            let reports = match method {
                Method::CedLstm { ced, lstm } => {
                    rolling_reports_ced(data, ced, lstm, spec, data_range)?
                }
                Method::ConvLstm(model) => rolling_reports_convlstm(data, model, spec, data_range)?,
                _ => continue,
            };
            for (k, r) in reports.iter().enumerate() {
                text.push_str(&format!(
                    "{},{:.6},{},{:.6},{}\n",
                    k + 1,
                    r.ssim,
                    fmt_db(r.psnr_db),
                    r.rrmse,
                    name
                ));
            }
            wrote = true;
        }
        if wrote {
            let path = out_dir.join("rolling.csv");
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            rolling_csv = Some(path);
        }
    }

    Ok(SuiteSummary {
        data_range,
        rows,
        metrics_csv,
        hist_csv,
        rolling_csv,
    })
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let hi = values.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    let width = hi / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = ((v / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k as f64 * width, (k + 1) as f64 * width, c))
        .collect()
}

/// Per-iteration metrics of latent-space rolling forecasts, frame-mean within
/// each iteration, averaged over all test simulations long enough to start.
pub fn rolling_reports_ced(
    data: &PreparedData,
    ced: &CedModel<f32>,
    lstm: &LstmModel<f32>,
    spec: RollingSpec,
    data_range: f64,
) -> Result<Vec<MetricReport>> {
    rolling_reports(data, spec, data_range, |sim| {
        let latents = encode_window(ced, &sim.inputs[spec.start..spec.start + spec.s_in]);
        let run = rolling_forecast_ced(lstm, &latents, spec.iterations)?;
        run.outputs
            .iter()
            .map(|window| {
                window
                    .iter()
                    .map(|z| to_physical(&ced.decode(z).out, data.nx, data.ny, &data.stats))
                    .collect::<Result<Vec<Field>>>()
            })
            .collect()
    })
}

/// Per-iteration metrics of end-to-end rolling forecasts, same protocol.
pub fn rolling_reports_convlstm(
    data: &PreparedData,
    model: &ConvLstmModel<f32>,
    spec: RollingSpec,
    data_range: f64,
) -> Result<Vec<MetricReport>> {
    rolling_reports(data, spec, data_range, |sim| {
        let run = rolling_forecast_convlstm(
            model,
            &sim.inputs[spec.start..spec.start + spec.s_in],
            spec.iterations,
        )?;
        run.outputs
            .iter()
            .map(|window| {
                window
                    .iter()
                    .map(|m| to_physical(m, data.nx, data.ny, &data.stats))
                    .collect::<Result<Vec<Field>>>()
            })
            .collect()
    })
}

fn rolling_reports(
    data: &PreparedData,
    spec: RollingSpec,
    data_range: f64,
    predict: impl Fn(&SimTensors) -> Result<Vec<Vec<Field>>>,
) -> Result<Vec<MetricReport>> {
    if spec.s_in == 0 || spec.iterations == 0 {
        return Err(Error::Validation(
            "rolling evaluation needs a window length and >= 1 iteration".into(),
        ));
    }
    let mask = data.mask.as_ref();
    let mut per_iter: Vec<Vec<MetricReport>> = vec![Vec::new(); spec.iterations];
    for sim in &data.test {
        let t = sim.truth.t().min(sim.inputs.len());
        let needed = spec.start + spec.s_in * (spec.iterations + 1);
        if needed > t {
            continue;
        }
        let windows = predict(sim)?;
        for (k, window) in windows.into_iter().enumerate() {
            let mut frames = Vec::with_capacity(window.len());
            for (j, pred) in window.iter().enumerate() {
                let truth = sim.truth.frame(spec.start + spec.s_in * (k + 1) + j);
                frames.push(metric_report(pred, truth, data_range, mask)?);
            }
            per_iter[k].push(mean_report(&frames, data_range));
        }
    }
    if per_iter[0].is_empty() {
        return Err(Error::Validation(
            "no test simulation is long enough for the rolling start index".into(),
        ));
    }
    Ok(per_iter
        .into_iter()
        .map(|reports| mean_report(&reports, data_range))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FieldSequence;
    use crate::nn::{ActivationSpec, ConvLstmSpec};
    use crate::voronoi::{Sensor, SensorSeries};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(seed: u64, nx: usize, ny: usize, nc: usize) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..nx * ny * nc).map(|_| rng.gen_range(0.0..1.0)).collect();
        Field::new(nx, ny, nc, values).unwrap()
    }

    /// Independently coded structural-similarity reference: separable 1-D
    /// Gaussian outer product, explicit per-window normalization and
    /// mean-subtracted moment sums.
    fn ssim_reference(a: &Field, b: &Field, range: f64, mask: Option<&Mask>) -> f64 {
        let (nx, ny, nc) = a.shape();
        let g1d: Vec<f64> = (-5..=5)
            .map(|d| (-(d * d) as f64 / (2.0 * 1.5 * 1.5)).exp())
            .collect();
        let c1 = (0.01 * range) * (0.01 * range);
        let c2 = (0.03 * range) * (0.03 * range);
        let valid = |x: usize, y: usize| mask.map(|m| m.is_valid(x, y)).unwrap_or(true);
        let mut per_channel = Vec::new();
        for c in 0..nc {
            let mut scores = Vec::new();
            for x in 0..nx {
                for y in 0..ny {
                    if !valid(x, y) {
                        continue;
                    }
                    let mut cells: Vec<(f64, f64, f64)> = Vec::new();
                    for (ix, wx) in g1d.iter().enumerate() {
                        let xi = x as isize + ix as isize - 5;
                        if xi < 0 || xi >= nx as isize {
                            continue;
                        }
                        for (iy, wy) in g1d.iter().enumerate() {
                            let yi = y as isize + iy as isize - 5;
                            if yi < 0 || yi >= ny as isize || !valid(xi as usize, yi as usize) {
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
                    scores.push(
                        ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                            / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)),
                    );
                }
            }
            per_channel.push(scores.iter().sum::<f64>() / scores.len() as f64);
        }
        per_channel.iter().sum::<f64>() / nc as f64
    }

    #[test]
    fn identical_fields_hit_the_metric_identities() {
        let x = random_field(3, 16, 16, 2);
        assert_eq!(ssim(&x, &x, 1.0, None).unwrap(), 1.0);
        assert_eq!(rrmse(&x, &x, 1.0, None).unwrap(), 0.0);
        assert!(psnr(&x, &x, 1.0, None).unwrap().is_infinite());
    }

    #[test]
    fn structural_change_lowers_similarity() {
        let x = random_field(5, 16, 16, 1);
        let flipped = Field::new(
            16,
            16,
            1,
            x.values().iter().map(|v| 1.0 - v).collect(),
        )
        .unwrap();
        assert!(ssim(&x, &flipped, 1.0, None).unwrap() < 1.0);
    }

    #[test]
    fn similarity_matches_an_independent_reference_implementation() {
        for seed in 0..10u64 {
            let a = random_field(seed * 2 + 1, 16, 16, 2);
            let b = random_field(seed * 2 + 2, 16, 16, 2);
            let ours = ssim(&a, &b, 1.0, None).unwrap();
            let theirs = ssim_reference(&a, &b, 1.0, None);
            assert!((ours - theirs).abs() < 1e-8, "{ours} vs {theirs}");
        }
    }

    #[test]
    fn psnr_follows_the_hand_formula() {
        let a = random_field(7, 8, 8, 1);
        let b = random_field(8, 8, 8, 1);
        let m = mse(&a, &b, None).unwrap();
        let expect = 10.0 * (4.0 / m).log10();
        assert!((psnr(&a, &b, 2.0, None).unwrap() - expect).abs() < 1e-10);
        // error energy equal to the squared range gives exactly 0 dB
        let zeros = Field::zeros(8, 8, 1).unwrap();
        let twos = Field::new(8, 8, 1, vec![2.0; 64]).unwrap();
        assert_eq!(psnr(&zeros, &twos, 2.0, None).unwrap(), 0.0);
    }

    #[test]
    fn relative_rmse_scales_by_the_range_and_ignores_shifts() {
        let zeros = Field::zeros(8, 8, 1).unwrap();
        let ones = Field::new(8, 8, 1, vec![1.0; 64]).unwrap();
        assert!((rrmse(&zeros, &ones, 2.0, None).unwrap() - 0.5).abs() < 1e-12);

        let a = random_field(11, 8, 8, 1);
        let b = random_field(12, 8, 8, 1);
        let shift = |f: &Field| {
            Field::new(8, 8, 1, f.values().iter().map(|v| v + 3.0).collect()).unwrap()
        };
        let base = rrmse(&a, &b, 1.0, None).unwrap();
        let moved = rrmse(&shift(&a), &shift(&b), 1.0, None).unwrap();
        assert!((base - moved).abs() < 1e-6);
    }

    #[test]
    fn masked_cells_do_not_influence_any_metric() {
        let a = random_field(21, 12, 12, 1);
        let b = random_field(22, 12, 12, 1);
        let mut mask = Mask::all_valid(12, 12);
        mask.valid[5] = false;
        mask.valid[40] = false;
        let mut a2 = a.clone();
        let mut b2 = b.clone();
        for &p in &[5usize, 40] {
            let (x, y) = (p / 12, p % 12);
            a2.set(x, y, 0, 99.0);
            b2.set(x, y, 0, -99.0);
        }
        assert_eq!(
            ssim(&a, &b, 1.0, Some(&mask)).unwrap(),
            ssim(&a2, &b2, 1.0, Some(&mask)).unwrap()
        );
        assert_eq!(
            mse(&a, &b, Some(&mask)).unwrap(),
            mse(&a2, &b2, Some(&mask)).unwrap()
        );
        assert_eq!(
            rrmse(&a, &b, 1.0, Some(&mask)).unwrap(),
            rrmse(&a2, &b2, 1.0, Some(&mask)).unwrap()
        );
        // masked version also matches the independent reference
        let ours = ssim(&a, &b, 1.0, Some(&mask)).unwrap();
        let theirs = ssim_reference(&a, &b, 1.0, Some(&mask));
        assert!((ours - theirs).abs() < 1e-8);
    }

    fn tiny_convlstm() -> ConvLstmModel<f32> {
        ConvLstmModel::new(
            ConvLstmSpec {
                nx: 8,
                ny: 8,
                nc: 1,
                layers: 1,
                filters: 2,
                activation: ActivationSpec::nonnegative(1),
            },
            9,
        )
        .unwrap()
    }

    #[test]
    fn rolling_windows_chain_bitwise() {
        let model = tiny_convlstm();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let init: Vec<Array2<f32>> = (0..2)
            .map(|_| Array2::from_shape_fn((64, 1), |_| rng.gen_range(0.0..1.0)))
            .collect();
        let run = rolling_forecast_convlstm(&model, &init, 4).unwrap();
        assert_eq!(run.outputs.len(), 4);
        for k in 0..3 {
            assert_eq!(run.inputs[k + 1], run.outputs[k]);
        }
        // one iteration is exactly one forward pass
        let single = rolling_forecast_convlstm(&model, &init, 1).unwrap();
        assert_eq!(single.outputs[0], model.forward(&init, 2).outputs);
    }

    fn synthetic_prepared_data(t: usize) -> PreparedData {
        let frames: Vec<Field> = (0..t).map(|k| random_field(100 + k as u64, 8, 8, 1)).collect();
        let sensors = SensorSeries {
            steps: frames
                .iter()
                .map(|f| {
                    [(1usize, 1usize), (6, 2), (3, 6), (7, 7)]
                        .iter()
                        .map(|&(i, j)| Sensor {
                            i,
                            j,
                            values: vec![f.get(i, j, 0)],
                        })
                        .collect()
                })
                .collect(),
        };
        let truth = FieldSequence::new(frames, 1).unwrap();
        let matrices: Vec<Array2<f32>> = truth.frames().iter().map(|f| f.to_matrix()).collect();
        let sim = SimTensors {
            inputs: matrices.clone(),
            targets: matrices,
            truth,
            energies: Vec::new(),
            sensors,
        };
        PreparedData {
            nx: 8,
            ny: 8,
            nc: 1,
            stats: NormStats {
                min: vec![0.0],
                max: vec![1.0],
            },
            mask: None,
            train: Vec::new(),
            test: vec![sim],
        }
    }

    #[test]
    fn suite_reports_a_perfect_sanity_row_and_counts_all_windows() {
        let data = synthetic_prepared_data(10);
        let training = TrainingSpec {
            s_in: 2,
            s_out: 2,
            lambda_energy: 0.0,
            n_init: 0,
            epochs: 0,
            learning_rate: 0.0,
            batch_size: 1,
            window_stride: 2,
            frame_stride: 1,
        };
        let model = tiny_convlstm();
        let methods = vec![
            ("identity".to_string(), Method::Identity),
            ("kriging-2d".to_string(), Method::Kriging2d { nlags: 3 }),
            ("conv-lstm".to_string(), Method::ConvLstm(&model)),
        ];
        let dir = tempfile::tempdir().unwrap();
        let rolling = Some(RollingSpec {
            start: 2,
            iterations: 2,
            s_in: 2,
        });
        let summary =
            evaluate_suite(&data, &methods, &training, rolling, dir.path()).unwrap();

        let identity = &summary.rows[0];
        assert!((identity.report.ssim - 1.0).abs() < 1e-12);
        assert_eq!(identity.report.rrmse, 0.0);
        assert!(identity.report.psnr_db.is_infinite());

        let metrics = std::fs::read_to_string(&summary.metrics_csv).unwrap();
        assert!(metrics.starts_with("method,ssim,psnr_db,rrmse,infer_s\n"));
        assert!(metrics.contains("identity,1.000000,inf,0.000000"));

        // histogram counts per variant sum to the evaluated window count
        let hist = std::fs::read_to_string(&summary.hist_csv).unwrap();
        for row in &summary.rows {
            let total: usize = hist
                .lines()
                .filter(|l| l.ends_with(&format!(",{}", row.name)))
                .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
                .sum();
            assert_eq!(total, row.windows);
        }

        let rolling_text =
            std::fs::read_to_string(summary.rolling_csv.as_ref().unwrap()).unwrap();
        assert!(rolling_text.starts_with("iteration,ssim,psnr_db,rrmse,variant\n"));
        assert_eq!(rolling_text.lines().count(), 3); // header + 2 iterations

        // determinism apart from the timing column
        let dir2 = tempfile::tempdir().unwrap();
        let again = evaluate_suite(&data, &methods, &training, rolling, dir2.path()).unwrap();
        for (a, b) in summary.rows.iter().zip(&again.rows) {
            assert_eq!(a.report, b.report);
            assert_eq!(a.window_mse, b.window_mse);
        }
    }
}
