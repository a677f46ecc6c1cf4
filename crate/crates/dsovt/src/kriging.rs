//! Ordinary-Kriging baselines with a spherical variogram.
//!
//! 2-D and 3-D (space-time, unit time scaling) share one solver: the
//! (K+1)x(K+1) system with a Lagrange multiplier is factorized once per
//! sensor set and the right-hand side varies per grid cell. Temporal
//! forecasting comes either from a per-cell linear regression over kriged
//! input steps (2-D route) or from querying future times directly (3-D).

use nalgebra::{DMatrix, DVector};

use crate::data::Field;
use crate::error::{Error, Result};
use crate::voronoi::Sensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LagBin {
    pub center: f64,
    pub semivariance: f64,
    pub pairs: usize,
}

/// Fitted spherical variogram: γ(0) = nugget, γ rises as
/// nugget + sill·(1.5·d/r − 0.5·(d/r)³) and plateaus at nugget + sill
/// for d ≥ range.
#[derive(Debug, Clone, PartialEq)]
pub struct VariogramModel {
    pub sill: f64,
    pub range: f64,
    pub nugget: f64,
    pub nlags: usize,
    /// Mean squared residual of the fit over non-empty bins.
    pub residual: f64,
    /// All-equal input values: nugget-only fallback, predictions constant.
    pub degenerate: bool,
    pub bins: Vec<LagBin>,
}

impl VariogramModel {
    pub fn gamma(&self, d: f64) -> f64 {
        if self.degenerate || d <= 0.0 {
            return self.nugget;
        }
        if d >= self.range {
            return self.nugget + self.sill;
        }
        let x = d / self.range;
        self.nugget + self.sill * (1.5 * x - 0.5 * x * x * x)
    }
}

fn fit_from_pairs(pairs: &[(f64, f64)], nlags: usize) -> Result<VariogramModel> {
    if nlags == 0 {
        return Err(Error::Validation("nlags must be >= 1".into()));
    }
    let max_d = pairs.iter().map(|p| p.0).fold(0.0f64, f64::max);
    if max_d <= 0.0 {
        return Err(Error::Validation(
            "all pairwise distances are zero; points coincide".into(),
        ));
    }
    let width = max_d / nlags as f64;
    let mut sums = vec![0.0f64; nlags];
    let mut counts = vec![0usize; nlags];
    for &(d, sv) in pairs {
        let k = ((d / width) as usize).min(nlags - 1);
        sums[k] += sv;
        counts[k] += 1;
    }
    let bins: Vec<LagBin> = (0..nlags)
        .map(|k| LagBin {
            center: (k as f64 + 0.5) * width,
            semivariance: if counts[k] > 0 {
                sums[k] / counts[k] as f64
            } else {
                0.0
            },
            pairs: counts[k],
        })
        .collect();
    let cloud: Vec<(f64, f64)> = bins
        .iter()
        .filter(|b| b.pairs > 0)
        .map(|b| (b.center, b.semivariance))
        .collect();

    // least squares over (nugget, sill) for each candidate range, keep the
    // best; nonneg constraints enforced by clamping and refitting
    let mut best: Option<(f64, f64, f64, f64)> = None; // (sse, nugget, sill, range)
    for step in 1..=100 {
        let range = max_d * step as f64 / 100.0;
        let basis: Vec<f64> = cloud
            .iter()
            .map(|&(d, _)| {
                if d >= range {
                    1.0
                } else {
                    let x = d / range;
                    1.5 * x - 0.5 * x * x * x
                }
            })
            .collect();
        let n = cloud.len() as f64;
        let sb: f64 = basis.iter().sum();
        let sbb: f64 = basis.iter().map(|b| b * b).sum();
        let sy: f64 = cloud.iter().map(|c| c.1).sum();
        let sby: f64 = basis.iter().zip(&cloud).map(|(b, c)| b * c.1).sum();
        let det = n * sbb - sb * sb;
        let (mut nugget, mut sill) = if det.abs() > 1e-12 {
            (
                (sbb * sy - sb * sby) / det,
                (n * sby - sb * sy) / det,
            )
        } else {
            (0.0, if sbb > 0.0 { sby / sbb } else { 0.0 })
        };
        if nugget < 0.0 {
            nugget = 0.0;
            sill = if sbb > 0.0 { sby / sbb } else { 0.0 };
        }
        if sill < 0.0 {
            sill = 0.0;
            nugget = sy / n;
        }
        let sse: f64 = cloud
            .iter()
            .zip(&basis)
            .map(|(&(_, y), &b)| {
                let fit = nugget + sill * b;
                (y - fit) * (y - fit)
            })
            .sum();
        if best.map(|b| sse < b.0).unwrap_or(true) {
            best = Some((sse, nugget, sill, range));
        }
    }
    let (sse, nugget, sill, range) = best.expect("candidate ranges exist");
    Ok(VariogramModel {
        sill,
        range,
        nugget,
        nlags,
        residual: sse / cloud.len().max(1) as f64,
        degenerate: false,
        bins,
    })
}

fn degenerate_model(nlags: usize, bins: Vec<LagBin>) -> VariogramModel {
    VariogramModel {
        sill: 0.0,
        range: 1.0,
        nugget: 0.0,
        nlags,
        residual: 0.0,
        degenerate: true,
        bins,
    }
}

fn all_equal(values: &[f64]) -> bool {
    values.windows(2).all(|w| (w[0] - w[1]).abs() <= 1e-12)
}

fn fit_variogram_nd(coords: &[[f64; 3]], values: &[f64], nlags: usize) -> Result<VariogramModel> {
    if coords.len() < 3 {
        return Err(Error::Validation(format!(
            "variogram fit needs at least 3 points, got {}",
            coords.len()
        )));
    }
    if coords.len() != values.len() {
        return Err(Error::Shape("coords and values differ in length".into()));
    }
    let mut pairs = Vec::with_capacity(coords.len() * (coords.len() - 1) / 2);
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            let d = dist(&coords[i], &coords[j]);
            let dz = values[i] - values[j];
            pairs.push((d, 0.5 * dz * dz));
        }
    }
    if all_equal(values) {
        // flat field: nothing to fit, report empty bins at the right count
        let max_d = pairs.iter().map(|p| p.0).fold(0.0f64, f64::max).max(1.0);
        let width = max_d / nlags.max(1) as f64;
        let bins = (0..nlags)
            .map(|k| LagBin {
                center: (k as f64 + 0.5) * width,
                semivariance: 0.0,
                pairs: 0,
            })
            .collect();
        return Ok(degenerate_model(nlags, bins));
    }
    fit_from_pairs(&pairs, nlags)
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dt) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    (dx * dx + dy * dy + dt * dt).sqrt()
}

pub fn fit_variogram(coords: &[(f64, f64)], values: &[f64], nlags: usize) -> Result<VariogramModel> {
    let c3: Vec<[f64; 3]> = coords.iter().map(|&(x, y)| [x, y, 0.0]).collect();
    fit_variogram_nd(&c3, values, nlags)
}

pub fn fit_variogram_3d(
    coords: &[(f64, f64, f64)],
    values: &[f64],
    nlags: usize,
) -> Result<VariogramModel> {
    let c3: Vec<[f64; 3]> = coords.iter().map(|&(x, y, t)| [x, y, t]).collect();
    fit_variogram_nd(&c3, values, nlags)
}

/// Exactly coincident points are averaged into one observation (with a
/// warning), since they would make the Kriging matrix singular.
fn dedupe(coords: &[[f64; 3]], values: &[f64]) -> (Vec<[f64; 3]>, Vec<f64>) {
    let mut out_c: Vec<[f64; 3]> = Vec::new();
    let mut out_sum: Vec<f64> = Vec::new();
    let mut out_n: Vec<usize> = Vec::new();
    let mut warned = false;
    'next: for (c, &v) in coords.iter().zip(values) {
        for (k, oc) in out_c.iter().enumerate() {
            if dist(c, oc) <= 1e-12 {
                if !warned {
                    eprintln!("warning: duplicate sensor positions averaged");
                    warned = true;
                }
                out_sum[k] += v;
                out_n[k] += 1;
                continue 'next;
            }
        }
        out_c.push(*c);
        out_sum.push(v);
        out_n.push(1);
    }
    let vals = out_sum
        .iter()
        .zip(&out_n)
        .map(|(s, &n)| s / n as f64)
        .collect();
    (out_c, vals)
}

/// Factorized ordinary-Kriging system for one sensor set; the same
/// factorization answers every grid-cell query.
pub struct KrigingSystem {
    points: Vec<[f64; 3]>,
    values: Vec<f64>,
    model: VariogramModel,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl KrigingSystem {
    pub fn new(coords: &[[f64; 3]], values: &[f64], model: &VariogramModel) -> Result<Self> {
        let (points, values) = dedupe(coords, values);
        let k = points.len();
        if k < 1 {
            return Err(Error::Validation("kriging needs at least one point".into()));
        }
        let mut a = DMatrix::<f64>::zeros(k + 1, k + 1);
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    a[(i, j)] = model.gamma(dist(&points[i], &points[j]));
                }
            }
            a[(i, k)] = 1.0;
            a[(k, i)] = 1.0;
        }
        let lu = a.lu();
        // probe solvability once; LU::solve returns None on singularity
        if lu.solve(&DVector::<f64>::zeros(k + 1)).is_none() {
            return Err(Error::Conditioning(
                "ordinary-kriging system is singular".into(),
            ));
        }
        Ok(Self {
            points,
            values,
            model: model.clone(),
            lu,
        })
    }

    /// Kriging weights and Lagrange multiplier for one query location.
    pub fn weights(&self, query: [f64; 3]) -> Result<(Vec<f64>, f64)> {
        let k = self.points.len();
        let mut b = DVector::<f64>::zeros(k + 1);
        for (i, p) in self.points.iter().enumerate() {
            b[i] = self.model.gamma(dist(p, &query));
        }
        b[k] = 1.0;
        let sol = self
            .lu
            .solve(&b)
            .ok_or_else(|| Error::Conditioning("kriging solve failed".into()))?;
        Ok((sol.as_slice()[..k].to_vec(), sol[k]))
    }

    /// Prediction and Kriging variance at one query location.
    pub fn predict(&self, query: [f64; 3]) -> Result<(f64, f64)> {
        let (w, mu) = self.weights(query)?;
        let mut pred = 0.0;
        let mut var = mu;
        for (i, (wi, p)) in w.iter().zip(&self.points).enumerate() {
            pred += wi * self.values[i];
            var += wi * self.model.gamma(dist(p, &query));
        }
        Ok((pred, var.max(0.0)))
    }
}

/// Ordinary Kriging of scattered 2-D observations onto an nx x ny grid.
/// Returns the predicted single-channel field and the per-cell variance.
pub fn krige2d(
    coords: &[(f64, f64)],
    values: &[f64],
    model: &VariogramModel,
    nx: usize,
    ny: usize,
) -> Result<(Field, Vec<f64>)> {
    if model.degenerate {
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        let mut field = Field::zeros(nx, ny, 1)?;
        field.values_mut().fill(mean as f32);
        return Ok((field, vec![0.0; nx * ny]));
    }
    let c3: Vec<[f64; 3]> = coords.iter().map(|&(x, y)| [x, y, 0.0]).collect();
    let sys = KrigingSystem::new(&c3, values, model)?;
    let mut field = Field::zeros(nx, ny, 1)?;
    let mut variance = vec![0.0f64; nx * ny];
    for x in 0..nx {
        for y in 0..ny {
            let (pred, var) = sys.predict([x as f64, y as f64, 0.0])?;
            field.set(x, y, 0, pred as f32);
            variance[x * ny + y] = var;
        }
    }
    Ok((field, variance))
}

/// Space-time ordinary Kriging: fields at each query time from (i, j, t)
/// observations, Euclidean distance with unit time scaling.
pub fn krige3d(
    coords: &[(f64, f64, f64)],
    values: &[f64],
    model: &VariogramModel,
    nx: usize,
    ny: usize,
    times: &[f64],
) -> Result<Vec<Field>> {
    if coords.len() < 4 {
        return Err(Error::Validation(format!(
            "space-time kriging needs at least 4 points, got {}",
            coords.len()
        )));
    }
    if model.degenerate {
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        let mut field = Field::zeros(nx, ny, 1)?;
        field.values_mut().fill(mean as f32);
        return Ok(vec![field; times.len()]);
    }
    let c3: Vec<[f64; 3]> = coords.iter().map(|&(x, y, t)| [x, y, t]).collect();
    let sys = KrigingSystem::new(&c3, values, model)?;
    times
        .iter()
        .map(|&t| {
            let mut field = Field::zeros(nx, ny, 1)?;
            for x in 0..nx {
                for y in 0..ny {
                    let (pred, _) = sys.predict([x as f64, y as f64, t])?;
                    field.set(x, y, 0, pred as f32);
                }
            }
            Ok(field)
        })
        .collect()
}

fn sensor_channel(step: &[Sensor], c: usize) -> (Vec<(f64, f64)>, Vec<f64>) {
    let coords = step.iter().map(|s| (s.i as f64, s.j as f64)).collect();
    let values = step.iter().map(|s| s.values[c] as f64).collect();
    (coords, values)
}

/// Kriging + linear-regression forecast: kriges every input step onto the
/// grid, fits a per-cell per-channel least-squares line over the step index,
/// and extrapolates it `s_out` steps past the inputs.
pub fn kriging_forecast_2d(
    steps: &[Vec<Sensor>],
    nx: usize,
    ny: usize,
    nlags: usize,
    s_out: usize,
) -> Result<Vec<Field>> {
    let s_in = steps.len();
    if s_in < 2 {
        return Err(Error::Validation(format!(
            "temporal regression needs at least 2 input steps, got {s_in}"
        )));
    }
    let nc = steps[0]
        .first()
        .map(|s| s.values.len())
        .ok_or_else(|| Error::Validation("input step has no sensors".into()))?;
    let mut interpolated: Vec<Field> = Vec::with_capacity(s_in);
    for step in steps {
        let mut frame = Field::zeros(nx, ny, nc)?;
        for c in 0..nc {
            let (coords, values) = sensor_channel(step, c);
            let model = fit_variogram(&coords, &values, nlags)?;
            let (kriged, _) = krige2d(&coords, &values, &model, nx, ny)?;
            for x in 0..nx {
                for y in 0..ny {
                    frame.set(x, y, c, kriged.get(x, y, 0));
                }
            }
        }
        interpolated.push(frame);
    }
    // per-cell OLS line z = a + b·t over t = 0..s_in-1
    let t_mean = (s_in as f64 - 1.0) / 2.0;
    let t_var: f64 = (0..s_in).map(|t| (t as f64 - t_mean).powi(2)).sum();
    let mut out = Vec::with_capacity(s_out);
    for k in 0..s_out {
        let tq = (s_in + k) as f64;
        let mut frame = Field::zeros(nx, ny, nc)?;
        for x in 0..nx {
            for y in 0..ny {
                for c in 0..nc {
                    let zs: Vec<f64> = (0..s_in)
                        .map(|t| interpolated[t].get(x, y, c) as f64)
                        .collect();
                    let z_mean = zs.iter().sum::<f64>() / s_in as f64;
                    let cov: f64 = zs
                        .iter()
                        .enumerate()
                        .map(|(t, z)| (t as f64 - t_mean) * (z - z_mean))
                        .sum();
                    let slope = if t_var > 0.0 { cov / t_var } else { 0.0 };
                    let pred = z_mean + slope * (tq - t_mean);
                    frame.set(x, y, c, pred as f32);
                }
            }
        }
        out.push(frame);
    }
    Ok(out)
}

/// Space-time Kriging forecast: fits one 3-D variogram per channel on all
/// input-step sensors and queries the next `s_out` integer times.
pub fn kriging_forecast_3d(
    steps: &[Vec<Sensor>],
    nx: usize,
    ny: usize,
    nlags: usize,
    s_out: usize,
) -> Result<Vec<Field>> {
    let s_in = steps.len();
    if s_in < 2 {
        return Err(Error::Validation(format!(
            "space-time kriging needs at least 2 input steps, got {s_in}"
        )));
    }
    let nc = steps[0]
        .first()
        .map(|s| s.values.len())
        .ok_or_else(|| Error::Validation("input step has no sensors".into()))?;
    let mut out: Vec<Field> = (0..s_out).map(|_| Field::zeros(nx, ny, nc)).collect::<Result<_>>()?;
    for c in 0..nc {
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for (t, step) in steps.iter().enumerate() {
            for s in step {
                coords.push((s.i as f64, s.j as f64, t as f64));
                values.push(s.values[c] as f64);
            }
        }
        let model = fit_variogram_3d(&coords, &values, nlags)?;
        let times: Vec<f64> = (0..s_out).map(|k| (s_in + k) as f64).collect();
        let fields = krige3d(&coords, &values, &model, nx, ny, &times)?;
        for (k, f) in fields.iter().enumerate() {
            for x in 0..nx {
                for y in 0..ny {
                    out[k].set(x, y, c, f.get(x, y, 0));
                }
            }
        }
    }
    Ok(out)
}
