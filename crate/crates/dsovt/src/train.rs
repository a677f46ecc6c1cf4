//! Loss functions, the energy-conservation constraint, and the three
//! training procedures (encoder-decoder, latent sequence model with frozen
//! decoder, and the end-to-end ConvLSTM with its warm-up schedule).
//!
//! The energy constraint penalizes the absolute difference between the mean
//! total shallow-water energy of the input window and of the predicted
//! window, evaluated on denormalized (physical) fields.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, NdFloat};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{normalize, read_tensor, Field, FieldSequence, Mask, MaskPolicy, NormStats};
use crate::error::{Error, Result};
use crate::manifest::{
    resolve, ExperimentManifest, ModelSpec, SensorSpec, SimEntry, SourceSpec, TrainingSpec,
};
use crate::nn::ced::{CedModel, CedSpec};
use crate::nn::convlstm::{ConvLstmModel, ConvLstmSpec};
use crate::nn::lstm::{LatentSeqSpec, LstmModel};
use crate::nn::{ActivationSpec, Adam, ParamSet};
use crate::voronoi::{
    sample_sensors_jittered, sample_sensors_random, tessellate_series, SensorSeries,
};

/// Shallow-water total-energy formula parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySpec {
    pub g: f64,
}

impl Default for EnergySpec {
    fn default() -> Self {
        Self { g: 1.0 }
    }
}

/// Discrete total mechanical energy Σ_cells [ ½·h·(u²+v²) + ½·g·h² ]
/// over a (u, v, h) field in physical units.
pub fn energy(field: &Field, spec: &EnergySpec) -> Result<f64> {
    let (nx, ny, nc) = field.shape();
    if nc != 3 {
        return Err(Error::Shape(format!(
            "energy needs (u, v, h) channels, field has {nc}"
        )));
    }
    let mut e = 0.0f64;
    for x in 0..nx {
        for y in 0..ny {
            let u = field.get(x, y, 0) as f64;
            let v = field.get(x, y, 1) as f64;
            let h = field.get(x, y, 2) as f64;
            e += 0.5 * h * (u * u + v * v) + 0.5 * spec.g * h * h;
        }
    }
    Ok(e)
}

/// |mean input energy − mean output energy| between two equally long windows.
pub fn energy_loss(inputs: &[Field], outputs: &[Field], spec: &EnergySpec) -> Result<f64> {
    if inputs.len() != outputs.len() || inputs.is_empty() {
        return Err(Error::Validation(format!(
            "energy loss needs equal nonempty windows, got {} and {}",
            inputs.len(),
            outputs.len()
        )));
    }
    let mean = |fields: &[Field]| -> Result<f64> {
        let mut acc = 0.0;
        for f in fields {
            acc += energy(f, spec)?;
        }
        Ok(acc / fields.len() as f64)
    };
    Ok((mean(inputs)? - mean(outputs)?).abs())
}

fn denorm_channel(stats: &NormStats, c: usize, v: f64) -> f64 {
    if stats.is_constant(c) {
        stats.min[c] as f64
    } else {
        v * stats.scale(c) as f64 + stats.min[c] as f64
    }
}

/// Energy of a normalized (pixels, 3) prediction after denormalization.
pub(crate) fn energy_of_normalized<F: NdFloat>(
    map: &Array2<F>,
    stats: &NormStats,
    g: f64,
) -> f64 {
    let mut e = 0.0f64;
    for row in map.rows() {
        let u = denorm_channel(stats, 0, row[0].to_f64().unwrap());
        let v = denorm_channel(stats, 1, row[1].to_f64().unwrap());
        let h = denorm_channel(stats, 2, row[2].to_f64().unwrap());
        e += 0.5 * h * (u * u + v * v) + 0.5 * g * h * h;
    }
    e
}

/// d(energy)/d(normalized map): the physical gradient times the per-channel
/// denormalization scale (zero for constant channels).
pub(crate) fn energy_grad_normalized<F: NdFloat>(
    map: &Array2<F>,
    stats: &NormStats,
    g: f64,
) -> Array2<F> {
    let mut grad = Array2::<F>::zeros(map.raw_dim());
    let (su, sv, sh) = (
        stats.scale(0) as f64,
        stats.scale(1) as f64,
        stats.scale(2) as f64,
    );
    for (p, row) in map.rows().into_iter().enumerate() {
        let u = denorm_channel(stats, 0, row[0].to_f64().unwrap());
        let v = denorm_channel(stats, 1, row[1].to_f64().unwrap());
        let h = denorm_channel(stats, 2, row[2].to_f64().unwrap());
        grad[[p, 0]] = F::from(h * u * su).unwrap();
        grad[[p, 1]] = F::from(h * v * sv).unwrap();
        grad[[p, 2]] = F::from((0.5 * (u * u + v * v) + g * h) * sh).unwrap();
    }
    grad
}

/// Valid sliding-window start indices for `t` frames.
pub fn window_starts(t: usize, s_in: usize, s_out: usize, stride: usize) -> Vec<usize> {
    if t < s_in + s_out {
        return Vec::new();
    }
    (0..=t - s_in - s_out).step_by(stride.max(1)).collect()
}

/// One simulation's training tensors: normalized tessellated inputs,
/// normalized ground-truth targets, the physical truth, and per-frame
/// physical energies (empty unless the field has (u, v, h) channels).
pub struct SimTensors {
    pub inputs: Vec<Array2<f32>>,
    pub targets: Vec<Array2<f32>>,
    pub truth: FieldSequence,
    pub energies: Vec<f64>,
    /// Raw per-step sensor observations (physical units), kept for the
    /// Kriging baselines which interpolate from scattered points directly.
    pub sensors: SensorSeries,
}

pub struct PreparedData {
    pub nx: usize,
    pub ny: usize,
    pub nc: usize,
    pub stats: NormStats,
    pub mask: Option<Mask>,
    pub train: Vec<SimTensors>,
    pub test: Vec<SimTensors>,
}

fn load_series(
    manifest: &ExperimentManifest,
    base: Option<&Path>,
    entry: &SimEntry,
) -> Result<(FieldSequence, Option<Mask>)> {
    let path = resolve(base, &entry.path);
    match &manifest.source {
        SourceSpec::Solver(_) => Ok((read_tensor(&path)?, None)),
        SourceSpec::Ingestion { mask_value, .. } => {
            let policy = match mask_value {
                Some(v) => MaskPolicy::MaskValue(*v),
                None => MaskPolicy::None,
            };
            let (seq, mask) = crate::data::ingest_grid_series(&path, policy)?;
            Ok((seq, Some(mask)))
        }
    }
}

fn stride_frames(seq: FieldSequence, stride: usize) -> Result<FieldSequence> {
    if stride <= 1 {
        return Ok(seq);
    }
    let dt = seq.dt_index * stride;
    let frames: Vec<Field> = seq.frames().iter().step_by(stride).cloned().collect();
    FieldSequence::new(frames, dt)
}

fn tessellated_inputs(
    truth: &FieldSequence,
    sensors: &SensorSpec,
    seed: u64,
    mask: Option<&Mask>,
) -> Result<(SensorSeries, FieldSequence)> {
    let (nx, ny, nc) = truth.shape();
    let series = match sensors {
        SensorSpec::Random { k } => sample_sensors_random(truth, *k, seed, mask)?,
        SensorSpec::Jittered { base_count, jitter } => {
            sample_sensors_jittered(truth, *base_count, *jitter, seed)?
        }
    };
    let tess = tessellate_series(&series, nx, ny, nc)?;
    Ok((series, tess))
}

/// Loads every simulation named by the manifest, builds per-timestep sensor
/// tessellations, and normalizes everything with statistics computed from the
/// training split (or the supplied override, e.g. at inference time).
pub fn prepare_data(
    manifest: &ExperimentManifest,
    base: Option<&Path>,
    stats_override: Option<&NormStats>,
) -> Result<PreparedData> {
    if manifest.train_sims.is_empty() {
        return Err(Error::Validation("manifest lists no training data".into()));
    }
    let fs = manifest.training.frame_stride;
    let mut mask = None;
    let mut load_split =
        |entries: &[SimEntry]| -> Result<Vec<(FieldSequence, FieldSequence, SensorSeries)>> {
        entries
            .iter()
            .map(|entry| {
                let (seq, m) = load_series(manifest, base, entry)?;
                if mask.is_none() {
                    mask = m;
                }
                let truth = stride_frames(seq, fs)?;
                let sensor_seed = manifest.seed.wrapping_add(entry.seed);
                let (sensors, tess) =
                    tessellated_inputs(&truth, &manifest.sensors, sensor_seed, mask.as_ref())?;
                Ok((truth, tess, sensors))
            })
            .collect()
    };
    let train_raw = load_split(&manifest.train_sims)?;
    let test_raw = load_split(&manifest.test_sims)?;

    let (nx, ny, nc) = train_raw[0].0.shape();
    let stats = match stats_override {
        Some(s) => s.clone(),
        None => {
            let mut min = vec![f32::INFINITY; nc];
            let mut max = vec![f32::NEG_INFINITY; nc];
            for (truth, _, _) in &train_raw {
                let s = NormStats::from_sequence(truth);
                for c in 0..nc {
                    min[c] = min[c].min(s.min[c]);
                    max[c] = max[c].max(s.max[c]);
                }
            }
            NormStats { min, max }
        }
    };

    let energy_spec = EnergySpec::default();
    let build = |raw: Vec<(FieldSequence, FieldSequence, SensorSeries)>| -> Result<Vec<SimTensors>> {
        raw.into_iter()
            .map(|(truth, tess, sensors)| {
                let (norm_truth, _) = normalize(&truth, Some(&stats))?;
                let (norm_tess, _) = normalize(&tess, Some(&stats))?;
                let energies = if nc == 3 {
                    truth
                        .frames()
                        .iter()
                        .map(|f| energy(f, &energy_spec))
                        .collect::<Result<Vec<_>>>()?
                } else {
                    Vec::new()
                };
                Ok(SimTensors {
                    inputs: norm_tess.frames().iter().map(|f| f.to_matrix()).collect(),
                    targets: norm_truth.frames().iter().map(|f| f.to_matrix()).collect(),
                    truth,
                    energies,
                    sensors,
                })
            })
            .collect()
    };
    let train = build(train_raw)?;
    let test = build(test_raw)?;
    Ok(PreparedData {
        nx,
        ny,
        nc,
        stats,
        mask,
        train,
        test,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub data_term: f64,
    pub energy_term: f64,
    pub total: f64,
    pub wall_ms: u128,
}

/// Per-epoch loss log. Epoch 0 is an evaluation pass over the training set
/// before any parameter update.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub seed: u64,
    pub switch_epoch: Option<usize>,
    pub epochs: Vec<EpochRecord>,
    pub params_path: Option<std::path::PathBuf>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,data_term,energy_term,total,wall_ms\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.data_term, e.energy_term, e.total, e.wall_ms
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::write_text(path, &self.to_csv())
    }
}

fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Divergence {
            context: format!("epoch {epoch}"),
            reason: format!("non-finite training loss {loss}"),
        });
    }
    Ok(())
}

/// Soft divergence guard on the 5-epoch moving average of the total loss.
/// The rise must be both relative (above twice the best average seen) and
/// material on the scale of the initial loss — near convergence the average
/// is so small that ordinary stochastic-gradient noise can double it, which
/// is not divergence.
struct TrendGuard {
    window: Vec<f64>,
    best: f64,
    initial: Option<f64>,
}

impl TrendGuard {
    fn new() -> Self {
        Self {
            window: Vec::new(),
            best: f64::INFINITY,
            initial: None,
        }
    }

    fn check(&mut self, total: f64, epoch: usize) -> Result<()> {
        self.window.push(total);
        if self.window.len() > 5 {
            self.window.remove(0);
        }
        if self.window.len() == 5 {
            let ma = self.window.iter().sum::<f64>() / 5.0;
            let initial = *self.initial.get_or_insert(ma);
            self.best = self.best.min(ma);
            if epoch > 10 && ma > 2.0 * self.best && ma > 0.1 * initial {
                return Err(Error::Divergence {
                    context: format!("epoch {epoch}"),
                    reason: format!(
                        "5-epoch moving average rose to {ma:.6} from best {:.6}",
                        self.best
                    ),
                });
            }
        }
        Ok(())
    }
}

fn activation_for(nc: usize) -> ActivationSpec {
    if nc == 3 {
        ActivationSpec::shallow_water()
    } else {
        ActivationSpec::nonnegative(nc)
    }
}

/// Trains the encoder-decoder to reconstruct ground truth from tessellated
/// inputs, minimizing per-pixel mean squared error with Adam.
pub fn train_ced(
    data: &PreparedData,
    model_cfg: &ModelSpec,
    tr: &TrainingSpec,
    seed: u64,
    init: Option<CedModel<f32>>,
) -> Result<(CedModel<f32>, TrainReport)> {
    let spec = CedSpec {
        nx: data.nx,
        ny: data.ny,
        nc: data.nc,
        latent: model_cfg.latent,
        activation: activation_for(data.nc),
    };
    let mut model = match init {
        Some(m) => {
            if m.spec != spec {
                return Err(Error::Compatibility(
                    "initial model does not match the manifest architecture".into(),
                ));
            }
            m
        }
        None => CedModel::new(spec, seed)?,
    };
    let samples: Vec<(usize, usize)> = data
        .train
        .iter()
        .enumerate()
        .flat_map(|(s, sim)| (0..sim.inputs.len()).map(move |t| (s, t)))
        .collect();
    if samples.is_empty() {
        return Err(Error::Validation("training split has no frames".into()));
    }

    let frame_loss = |model: &CedModel<f32>, s: usize, t: usize| -> f64 {
        let (_, dec) = model.forward(&data.train[s].inputs[t]);
        let diff = &dec.out - &data.train[s].targets[t];
        diff.mapv(|v| (v as f64) * (v as f64)).mean().unwrap()
    };

    let mut report = TrainReport {
        seed,
        switch_epoch: None,
        epochs: Vec::new(),
        params_path: None,
    };
    // epoch 0: evaluate before any update
    let t0 = Instant::now();
    let initial =
        samples.iter().map(|&(s, t)| frame_loss(&model, s, t)).sum::<f64>() / samples.len() as f64;
    check_finite(initial, 0)?;
    report.epochs.push(EpochRecord {
        epoch: 0,
        data_term: initial,
        energy_term: 0.0,
        total: initial,
        wall_ms: t0.elapsed().as_millis(),
    });

    let mut order = samples;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut adam = Adam::new(&model.params, tr.learning_rate as f32);
    let mut grads = model.params.zeros_like();
    let mut guard = TrendGuard::new();
    for epoch in 1..=tr.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(tr.batch_size.max(1)) {
            grads.fill_zero();
            for &(s, t) in batch {
                let (enc, dec) = model.forward(&data.train[s].inputs[t]);
                let diff = &dec.out - &data.train[s].targets[t];
                epoch_loss += diff.mapv(|v| (v as f64) * (v as f64)).mean().unwrap();
                let n = diff.len() as f32;
                let dout = diff.mapv(|v| 2.0 * v / n);
                model.backward(&enc, &dec, &dout, &mut grads);
            }
            grads.scale(1.0 / batch.len() as f32);
            adam.step(&mut model.params, &grads);
        }
        let data_term = epoch_loss / order.len() as f64;
        check_finite(data_term, epoch)?;
        guard.check(data_term, epoch)?;
        report.epochs.push(EpochRecord {
            epoch,
            data_term,
            energy_term: 0.0,
            total: data_term,
            wall_ms: t0.elapsed().as_millis(),
        });
    }
    Ok((model, report))
}

/// Per-window composite loss for the latent sequence model; forward only.
fn latent_window_loss<F: NdFloat>(
    lstm: &LstmModel<F>,
    decoder: &CedModel<F>,
    stats: &NormStats,
    lambda: f64,
    g: f64,
    inputs: &[Array2<F>],
    targets: &[Array2<F>],
    mean_in_energy: f64,
) -> (f64, f64) {
    let s_out = targets.len();
    let cache = lstm.forward(inputs, s_out);
    let mut data = 0.0f64;
    for (y, t) in cache.outputs.iter().zip(targets) {
        data += (y - t).mapv(|v| v * v).sum().to_f64().unwrap();
    }
    data /= s_out as f64;
    let mut e = 0.0f64;
    if lambda > 0.0 {
        let mut mean_out = 0.0f64;
        for y in &cache.outputs {
            let dec = decoder.decode(y);
            mean_out += energy_of_normalized(&dec.out, stats, g);
        }
        mean_out /= s_out as f64;
        e = (mean_in_energy - mean_out).abs();
    }
    (data, e)
}

/// Per-window composite gradient for the latent sequence model; the decoder
/// stays frozen (its gradients go to a scratch buffer and are discarded).
#[allow(clippy::too_many_arguments)]
fn latent_window_grad<F: NdFloat>(
    lstm: &LstmModel<F>,
    decoder: &CedModel<F>,
    stats: &NormStats,
    lambda: f64,
    g: f64,
    inputs: &[Array2<F>],
    targets: &[Array2<F>],
    mean_in_energy: f64,
    grads: &mut ParamSet<F>,
    decoder_scratch: &mut ParamSet<F>,
) -> (f64, f64) {
    let s_out = targets.len();
    let cache = lstm.forward(inputs, s_out);
    let inv = F::from(1.0 / s_out as f64).unwrap();
    let two = F::from(2.0).unwrap();
    let mut data = 0.0f64;
    let mut douts: Vec<Array2<F>> = cache
        .outputs
        .iter()
        .zip(targets)
        .map(|(y, t)| {
            let diff = y - t;
            data += diff.mapv(|v| v * v).sum().to_f64().unwrap();
            diff.mapv(|v| two * v * inv)
        })
        .collect();
    data /= s_out as f64;
    let mut e = 0.0f64;
    if lambda > 0.0 {
        let decs: Vec<_> = cache.outputs.iter().map(|y| decoder.decode(y)).collect();
        let mut mean_out = 0.0f64;
        for dec in &decs {
            mean_out += energy_of_normalized(&dec.out, stats, g);
        }
        mean_out /= s_out as f64;
        e = (mean_in_energy - mean_out).abs();
        let sign = if mean_out > mean_in_energy {
            1.0
        } else if mean_out < mean_in_energy {
            -1.0
        } else {
            0.0
        };
        let factor = F::from(lambda * sign / s_out as f64).unwrap();
        for (k, dec) in decs.iter().enumerate() {
            let dfield = energy_grad_normalized(&dec.out, stats, g).mapv(|v| v * factor);
            let dz = decoder.decode_backward(dec, &dfield, decoder_scratch);
            douts[k] += &dz;
        }
    }
    lstm.backward(&cache, &douts, grads);
    (data, e)
}

/// Trains the latent sequence model on encoder latents of the tessellated
/// inputs; with λ_energy > 0 predictions are decoded through the frozen
/// decoder and penalized for energy drift against the input window's
/// ground-truth energy.
pub fn train_ced_lstm(
    data: &PreparedData,
    ced: &CedModel<f32>,
    model_cfg: &ModelSpec,
    tr: &TrainingSpec,
    seed: u64,
    init: Option<LstmModel<f32>>,
) -> Result<(LstmModel<f32>, TrainReport)> {
    if ced.spec.latent != model_cfg.latent {
        return Err(Error::Compatibility(format!(
            "encoder latent {} does not match configured latent {}",
            ced.spec.latent, model_cfg.latent
        )));
    }
    let lambda = tr.lambda_energy;
    if lambda > 0.0 {
        if data.nc != 3 {
            return Err(Error::Validation(
                "the energy constraint needs (u, v, h) fields".into(),
            ));
        }
        if tr.s_in != tr.s_out {
            return Err(Error::Validation(
                "the energy constraint requires s_in == s_out".into(),
            ));
        }
    }
    let spec = LatentSeqSpec {
        latent: model_cfg.latent,
        layers: model_cfg.lstm_layers,
        hidden: model_cfg.lstm_hidden,
    };
    let mut model = match init {
        Some(m) => {
            if m.spec != spec {
                return Err(Error::Compatibility(
                    "initial model does not match the manifest architecture".into(),
                ));
            }
            m
        }
        None => LstmModel::new(spec, seed)?,
    };

    // frozen encoder: one latent per frame, computed once
    let latents: Vec<Vec<Array2<f32>>> = data
        .train
        .iter()
        .map(|sim| sim.inputs.iter().map(|x| ced.encode(x).z).collect())
        .collect();
    let windows: Vec<(usize, usize)> = data
        .train
        .iter()
        .enumerate()
        .flat_map(|(s, sim)| {
            window_starts(sim.inputs.len(), tr.s_in, tr.s_out, tr.window_stride)
                .into_iter()
                .map(move |i| (s, i))
        })
        .collect();
    if windows.is_empty() {
        return Err(Error::Validation(
            "no training windows: sequences shorter than s_in + s_out".into(),
        ));
    }
    let g = EnergySpec::default().g;
    let mean_in = |s: usize, i: usize| -> f64 {
        if lambda > 0.0 {
            let es = &data.train[s].energies[i..i + tr.s_in];
            es.iter().sum::<f64>() / tr.s_in as f64
        } else {
            0.0
        }
    };
    let window_slices = |s: usize, i: usize| -> (&[Array2<f32>], &[Array2<f32>]) {
        (
            &latents[s][i..i + tr.s_in],
            &latents[s][i + tr.s_in..i + tr.s_in + tr.s_out],
        )
    };

    let mut report = TrainReport {
        seed,
        switch_epoch: None,
        epochs: Vec::new(),
        params_path: None,
    };
    let t0 = Instant::now();
    let (mut d0, mut e0) = (0.0f64, 0.0f64);
    for &(s, i) in &windows {
        let (inp, tgt) = window_slices(s, i);
        let (d, e) =
            latent_window_loss(&model, ced, &data.stats, lambda, g, inp, tgt, mean_in(s, i));
        d0 += d;
        e0 += e;
    }
    d0 /= windows.len() as f64;
    e0 /= windows.len() as f64;
    check_finite(d0 + lambda * e0, 0)?;
    report.epochs.push(EpochRecord {
        epoch: 0,
        data_term: d0,
        energy_term: e0,
        total: d0 + lambda * e0,
        wall_ms: t0.elapsed().as_millis(),
    });

    let mut order = windows;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut adam = Adam::new(&model.params, tr.learning_rate as f32);
    let mut grads = model.params.zeros_like();
    let mut scratch = ced.params.zeros_like();
    let mut guard = TrendGuard::new();
    for epoch in 1..=tr.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let (mut epoch_d, mut epoch_e) = (0.0f64, 0.0f64);
        for batch in order.chunks(tr.batch_size.max(1)) {
            grads.fill_zero();
            for &(s, i) in batch {
                let (inp, tgt) = window_slices(s, i);
                let (d, e) = latent_window_grad(
                    &model,
                    ced,
                    &data.stats,
                    lambda,
                    g,
                    inp,
                    tgt,
                    mean_in(s, i),
                    &mut grads,
                    &mut scratch,
                );
                epoch_d += d;
                epoch_e += e;
            }
            grads.scale(1.0 / batch.len() as f32);
            adam.step(&mut model.params, &grads);
        }
        let data_term = epoch_d / order.len() as f64;
        let energy_term = epoch_e / order.len() as f64;
        let total = data_term + lambda * energy_term;
        check_finite(total, epoch)?;
        guard.check(total, epoch)?;
        report.epochs.push(EpochRecord {
            epoch,
            data_term,
            energy_term,
            total,
            wall_ms: t0.elapsed().as_millis(),
        });
    }
    Ok((model, report))
}

/// Per-window composite loss for the ConvLSTM; forward only.
fn conv_window_loss<F: NdFloat>(
    model: &ConvLstmModel<F>,
    stats: &NormStats,
    lambda: f64,
    g: f64,
    inputs: &[Array2<F>],
    targets: &[Array2<F>],
    mean_in_energy: f64,
) -> (f64, f64) {
    let s_out = targets.len();
    let cache = model.forward(inputs, s_out);
    let mut data = 0.0f64;
    for (y, t) in cache.outputs.iter().zip(targets) {
        data += (y - t).mapv(|v| v * v).sum().to_f64().unwrap();
    }
    data /= s_out as f64;
    let mut e = 0.0f64;
    if lambda > 0.0 {
        let mut mean_out = 0.0f64;
        for y in &cache.outputs {
            mean_out += energy_of_normalized(y, stats, g);
        }
        mean_out /= s_out as f64;
        e = (mean_in_energy - mean_out).abs();
    }
    (data, e)
}

/// Per-window composite gradient for the ConvLSTM.
fn conv_window_grad<F: NdFloat>(
    model: &ConvLstmModel<F>,
    stats: &NormStats,
    lambda: f64,
    g: f64,
    inputs: &[Array2<F>],
    targets: &[Array2<F>],
    mean_in_energy: f64,
    grads: &mut ParamSet<F>,
) -> (f64, f64) {
    let s_out = targets.len();
    let cache = model.forward(inputs, s_out);
    let inv = F::from(1.0 / s_out as f64).unwrap();
    let two = F::from(2.0).unwrap();
    let mut data = 0.0f64;
    let mut douts: Vec<Array2<F>> = cache
        .outputs
        .iter()
        .zip(targets)
        .map(|(y, t)| {
            let diff = y - t;
            data += diff.mapv(|v| v * v).sum().to_f64().unwrap();
            diff.mapv(|v| two * v * inv)
        })
        .collect();
    data /= s_out as f64;
    let mut e = 0.0f64;
    if lambda > 0.0 {
        let mut mean_out = 0.0f64;
        for y in &cache.outputs {
            mean_out += energy_of_normalized(y, stats, g);
        }
        mean_out /= s_out as f64;
        e = (mean_in_energy - mean_out).abs();
        let sign = if mean_out > mean_in_energy {
            1.0
        } else if mean_out < mean_in_energy {
            -1.0
        } else {
            0.0
        };
        let factor = F::from(lambda * sign / s_out as f64).unwrap();
        for (k, y) in cache.outputs.iter().enumerate() {
            let dfield = energy_grad_normalized(y, stats, g).mapv(|v| v * factor);
            douts[k] += &dfield;
        }
    }
    model.backward(&cache, &douts, grads);
    (data, e)
}

/// Trains the end-to-end ConvLSTM on tessellated input windows against
/// ground-truth targets. The energy term is identically zero for the first
/// `n_init` epochs (warm-up), then enters the composite loss.
pub fn train_convlstm(
    data: &PreparedData,
    model_cfg: &ModelSpec,
    tr: &TrainingSpec,
    seed: u64,
    init: Option<ConvLstmModel<f32>>,
) -> Result<(ConvLstmModel<f32>, TrainReport)> {
    let lambda = tr.lambda_energy;
    if lambda > 0.0 {
        if data.nc != 3 {
            return Err(Error::Validation(
                "the energy constraint needs (u, v, h) fields".into(),
            ));
        }
        if tr.s_in != tr.s_out {
            return Err(Error::Validation(
                "the energy constraint requires s_in == s_out".into(),
            ));
        }
    }
    let spec = ConvLstmSpec {
        nx: data.nx,
        ny: data.ny,
        nc: data.nc,
        layers: model_cfg.convlstm_layers,
        filters: model_cfg.convlstm_filters,
        activation: activation_for(data.nc),
    };
    let mut model = match init {
        Some(m) => {
            if m.spec != spec {
                return Err(Error::Compatibility(
                    "initial model does not match the manifest architecture".into(),
                ));
            }
            m
        }
        None => ConvLstmModel::new(spec, seed)?,
    };
    let windows: Vec<(usize, usize)> = data
        .train
        .iter()
        .enumerate()
        .flat_map(|(s, sim)| {
            window_starts(sim.inputs.len(), tr.s_in, tr.s_out, tr.window_stride)
                .into_iter()
                .map(move |i| (s, i))
        })
        .collect();
    if windows.is_empty() {
        return Err(Error::Validation(
            "no training windows: sequences shorter than s_in + s_out".into(),
        ));
    }
    let g = EnergySpec::default().g;
    let mean_in = |s: usize, i: usize, active: bool| -> f64 {
        if active {
            let es = &data.train[s].energies[i..i + tr.s_in];
            es.iter().sum::<f64>() / tr.s_in as f64
        } else {
            0.0
        }
    };

    let mut report = TrainReport {
        seed,
        switch_epoch: None,
        epochs: Vec::new(),
        params_path: None,
    };
    let t0 = Instant::now();
    let (mut d0, mut e0) = (0.0f64, 0.0f64);
    // warm-up covers epoch 0 whenever n_init >= 0; energy reported but only
    // active past n_init
    let lambda_at = |epoch: usize| -> f64 {
        if epoch <= tr.n_init {
            0.0
        } else {
            lambda
        }
    };
    for &(s, i) in &windows {
        let (d, e) = conv_window_loss(
            &model,
            &data.stats,
            lambda_at(0),
            g,
            &data.train[s].inputs[i..i + tr.s_in],
            &data.train[s].targets[i + tr.s_in..i + tr.s_in + tr.s_out],
            mean_in(s, i, lambda_at(0) > 0.0),
        );
        d0 += d;
        e0 += e;
    }
    d0 /= windows.len() as f64;
    e0 /= windows.len() as f64;
    check_finite(d0 + lambda_at(0) * e0, 0)?;
    report.epochs.push(EpochRecord {
        epoch: 0,
        data_term: d0,
        energy_term: e0,
        total: d0 + lambda_at(0) * e0,
        wall_ms: t0.elapsed().as_millis(),
    });

    let mut order = windows;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut adam = Adam::new(&model.params, tr.learning_rate as f32);
    let mut grads = model.params.zeros_like();
    let mut guard = TrendGuard::new();
    for epoch in 1..=tr.epochs {
        let t0 = Instant::now();
        let lam = lambda_at(epoch);
        if lam > 0.0 && report.switch_epoch.is_none() {
            report.switch_epoch = Some(epoch);
        }
        order.shuffle(&mut rng);
        let (mut epoch_d, mut epoch_e) = (0.0f64, 0.0f64);
        for batch in order.chunks(tr.batch_size.max(1)) {
            grads.fill_zero();
            for &(s, i) in batch {
                let (d, e) = conv_window_grad(
                    &model,
                    &data.stats,
                    lam,
                    g,
                    &data.train[s].inputs[i..i + tr.s_in],
                    &data.train[s].targets[i + tr.s_in..i + tr.s_in + tr.s_out],
                    mean_in(s, i, lam > 0.0),
                    &mut grads,
                );
                epoch_d += d;
                epoch_e += e;
            }
            grads.scale(1.0 / batch.len() as f32);
            adam.step(&mut model.params, &grads);
        }
        let data_term = epoch_d / order.len() as f64;
        let energy_term = epoch_e / order.len() as f64;
        let total = data_term + lam * energy_term;
        check_finite(total, epoch)?;
        guard.check(total, epoch)?;
        report.epochs.push(EpochRecord {
            epoch,
            data_term,
            energy_term,
            total,
            wall_ms: t0.elapsed().as_millis(),
        });
    }
    Ok((model, report))
}

/// Which loss a gradient check exercises.
#[derive(Debug, Clone, Copy)]
pub enum GradTarget {
    /// Plain reconstruction MSE through the encoder-decoder.
    CedReconstruction,
    /// Latent MSE + λ·energy drift through the frozen decoder.
    LatentComposite { lambda: f64 },
    /// Frame MSE + λ·energy drift, end to end.
    ConvComposite { lambda: f64 },
}

fn random_physical_frames(rng: &mut ChaCha8Rng, n: usize) -> Vec<Field> {
    (0..n)
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
        .collect()
}

/// Compares analytic gradients against central finite differences on tiny
/// double-precision models and returns the worst relative error over the
/// probed parameters (index stride `stride`, step 1e-4). Parameters whose
/// finite difference is not stable across step sizes sit on an activation
/// kink where the difference quotient itself is invalid; they are excluded.
pub fn grad_check(target: GradTarget, seed: u64, stride: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = random_physical_frames(&mut rng, 2);
    let seq = FieldSequence::new(frames.clone(), 1)?;
    let stats = NormStats::from_sequence(&seq);
    let (norm, _) = normalize(&seq, Some(&stats))?;
    let maps: Vec<Array2<f64>> = norm
        .frames()
        .iter()
        .map(|f| f.to_matrix().mapv(|v| v as f64))
        .collect();
    let g = EnergySpec::default().g;

    let ced_spec = CedSpec {
        nx: 8,
        ny: 8,
        nc: 3,
        latent: 4,
        activation: ActivationSpec::shallow_water(),
    };

    let check = |params_loss: &mut dyn FnMut(Option<usize>, f64) -> f64,
                 grads: &ParamSet<f64>,
                 count: usize|
     -> f64 {
        let mut worst = 0.0f64;
        let mut idx = 0usize;
        let fd_at = |f: &mut dyn FnMut(Option<usize>, f64) -> f64, i: usize, eps: f64| -> f64 {
            let lp = f(Some(i), eps);
            let lm = f(Some(i), -eps);
            (lp - lm) / (2.0 * eps)
        };
        while idx < count {
            let fd = fd_at(params_loss, idx, 1e-4);
            let an = grads.get_flat(idx);
            let denom = fd.abs().max(an.abs()).max(1e-6);
            let rel = (fd - an).abs() / denom;
            if rel > 1e-4 {
                let fd2 = fd_at(params_loss, idx, 1.25e-5);
                let stable = (fd - fd2).abs() / fd.abs().max(fd2.abs()).max(1e-6) < 1e-4;
                if stable {
                    worst = worst.max(rel);
                }
            } else {
                worst = worst.max(rel);
            }
            idx += stride.max(1);
        }
        worst
    };

    match target {
        GradTarget::CedReconstruction => {
            let mut model = CedModel::<f64>::new(ced_spec, seed.wrapping_add(1))?;
            let inputs = maps.clone();
            let targets: Vec<Array2<f64>> = maps.iter().rev().cloned().collect();
            let mut grads = model.params.zeros_like();
            for (x, t) in inputs.iter().zip(&targets) {
                let (enc, dec) = model.forward(x);
                let n = dec.out.len() as f64;
                let dout = (&dec.out - t).mapv(|v| 2.0 * v / (n * inputs.len() as f64));
                model.backward(&enc, &dec, &dout, &mut grads);
            }
            let count = model.params.param_count();
            let mut loss = |perturb: Option<usize>, eps: f64| -> f64 {
                let orig = perturb.map(|i| {
                    let o = model.params.get_flat(i);
                    model.params.set_flat(i, o + eps);
                    (i, o)
                });
                let mut acc = 0.0;
                for (x, t) in inputs.iter().zip(&targets) {
                    let (_, dec) = model.forward(x);
                    acc += (&dec.out - t).mapv(|v| v * v).mean().unwrap();
                }
                if let Some((i, o)) = orig {
                    model.params.set_flat(i, o);
                }
                acc / inputs.len() as f64
            };
            Ok(check(&mut loss, &grads, count))
        }
        GradTarget::LatentComposite { lambda } => {
            let decoder = CedModel::<f64>::new(ced_spec, seed.wrapping_add(1))?;
            let mut lstm = LstmModel::<f64>::new(
                LatentSeqSpec {
                    latent: 4,
                    layers: 2,
                    hidden: 8,
                },
                seed.wrapping_add(2),
            )?;
            let latents: Vec<Array2<f64>> = maps.iter().map(|m| decoder.encode(m).z).collect();
            let inputs = vec![latents[0].clone()];
            let targets = vec![latents[1].clone()];
            let mean_in = energy(&frames[0], &EnergySpec::default())?;
            let mut grads = lstm.params.zeros_like();
            let mut scratch = decoder.params.zeros_like();
            latent_window_grad(
                &lstm,
                &decoder,
                &stats,
                lambda,
                g,
                &inputs,
                &targets,
                mean_in,
                &mut grads,
                &mut scratch,
            );
            let count = lstm.params.param_count();
            let mut loss = |perturb: Option<usize>, eps: f64| -> f64 {
                let orig = perturb.map(|i| {
                    let o = lstm.params.get_flat(i);
                    lstm.params.set_flat(i, o + eps);
                    (i, o)
                });
                let (d, e) = latent_window_loss(
                    &lstm, &decoder, &stats, lambda, g, &inputs, &targets, mean_in,
                );
                if let Some((i, o)) = orig {
                    lstm.params.set_flat(i, o);
                }
                d + lambda * e
            };
            Ok(check(&mut loss, &grads, count))
        }
        GradTarget::ConvComposite { lambda } => {
            let mut model = ConvLstmModel::<f64>::new(
                ConvLstmSpec {
                    nx: 8,
                    ny: 8,
                    nc: 3,
                    layers: 2,
                    filters: 3,
                    activation: ActivationSpec::shallow_water(),
                },
                seed.wrapping_add(3),
            )?;
            let inputs = vec![maps[0].clone()];
            let targets = vec![maps[1].clone()];
            let mean_in = energy(&frames[0], &EnergySpec::default())?;
            let mut grads = model.params.zeros_like();
            conv_window_grad(
                &model, &stats, lambda, g, &inputs, &targets, mean_in, &mut grads,
            );
            let count = model.params.param_count();
            let mut loss = |perturb: Option<usize>, eps: f64| -> f64 {
                let orig = perturb.map(|i| {
                    let o = model.params.get_flat(i);
                    model.params.set_flat(i, o + eps);
                    (i, o)
                });
                let (d, e) =
                    conv_window_loss(&model, &stats, lambda, g, &inputs, &targets, mean_in);
                if let Some((i, o)) = orig {
                    model.params.set_flat(i, o);
                }
                d + lambda * e
            };
            Ok(check(&mut loss, &grads, count))
        }
    }
}
