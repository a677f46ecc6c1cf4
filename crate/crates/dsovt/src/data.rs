//! Core grid/field data model, min-max normalization and the DSVT on-disk
//! tensor container shared by every other module.
//!
//! A [`Field`] is one dense snapshot of shape `nx × ny × nc`, stored
//! row-major in (x, y, channel) order with the channel index fastest.
//! A [`FieldSequence`] is an ordered run of equally shaped fields.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DSVT_MAGIC: [u8; 4] = *b"DSVT";
pub const DSVT_VERSION: u8 = 1;
pub const DSVT_DTYPE_F32: u8 = 1;

/// Dense grid snapshot of shape `nx × ny × nc`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    nx: usize,
    ny: usize,
    nc: usize,
    values: Vec<f32>,
}

impl Field {
    /// Builds a field, enforcing the shape floor (8×8×1) and finiteness.
    pub fn new(nx: usize, ny: usize, nc: usize, values: Vec<f32>) -> Result<Self> {
        if nx < 8 || ny < 8 || nc < 1 {
            return Err(Error::Validation(format!(
                "field shape {nx}x{ny}x{nc} below minimum 8x8x1"
            )));
        }
        if values.len() != nx * ny * nc {
            return Err(Error::Shape(format!(
                "value buffer has {} entries, shape {nx}x{ny}x{nc} needs {}",
                values.len(),
                nx * ny * nc
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("field contains non-finite values".into()));
        }
        Ok(Self { nx, ny, nc, values })
    }

    pub fn zeros(nx: usize, ny: usize, nc: usize) -> Result<Self> {
        Self::new(nx, ny, nc, vec![0.0; nx * ny * nc])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn nc(&self) -> usize {
        self.nc
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Mutable access for in-place construction; callers must keep values finite.
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (x * self.ny + y) * self.nc + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.values[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        let i = self.idx(x, y, c);
        self.values[i] = v;
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nc)
    }

    /// View as a (pixels, channels) matrix with pixel index p = x * ny + y;
    /// the memory layouts coincide, so this is a straight copy.
    pub fn to_matrix(&self) -> ndarray::Array2<f32> {
        ndarray::Array2::from_shape_vec((self.nx * self.ny, self.nc), self.values.clone())
            .expect("field buffer is dense")
    }

    /// Inverse of [`Field::to_matrix`].
    pub fn from_matrix(nx: usize, ny: usize, m: &ndarray::Array2<f32>) -> Result<Self> {
        if m.nrows() != nx * ny {
            return Err(Error::Shape(format!(
                "matrix has {} pixels, grid {nx}x{ny} needs {}",
                m.nrows(),
                nx * ny
            )));
        }
        Self::new(nx, ny, m.ncols(), m.iter().copied().collect())
    }
}

/// Ordered run of equally shaped fields.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSequence {
    frames: Vec<Field>,
    /// Snapshot spacing in solver steps (informational).
    pub dt_index: usize,
}

impl FieldSequence {
    pub fn new(frames: Vec<Field>, dt_index: usize) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Validation("sequence needs at least one frame".into()))?;
        let shape = first.shape();
        if frames.iter().any(|f| f.shape() != shape) {
            return Err(Error::Shape("frames differ in shape".into()));
        }
        Ok(Self { frames, dt_index })
    }

    pub fn t(&self) -> usize {
        self.frames.len()
    }
    pub fn frames(&self) -> &[Field] {
        &self.frames
    }
    pub fn frame(&self, t: usize) -> &Field {
        &self.frames[t]
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        self.frames[0].shape()
    }
}

/// Per-channel min/max used for [0,1] normalization. Channels whose min and
/// max coincide are flagged constant and mapped to 0.5.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl NormStats {
    pub fn from_sequence(seq: &FieldSequence) -> Self {
        let nc = seq.shape().2;
        let mut min = vec![f32::INFINITY; nc];
        let mut max = vec![f32::NEG_INFINITY; nc];
        for frame in seq.frames() {
            for (i, v) in frame.values().iter().enumerate() {
                let c = i % nc;
                min[c] = min[c].min(*v);
                max[c] = max[c].max(*v);
            }
        }
        Self { min, max }
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    pub fn is_constant(&self, c: usize) -> bool {
        self.max[c] <= self.min[c]
    }

    #[inline]
    pub fn normalize_value(&self, c: usize, v: f32) -> f32 {
        if self.is_constant(c) {
            0.5
        } else {
            (v - self.min[c]) / (self.max[c] - self.min[c])
        }
    }

    #[inline]
    pub fn denormalize_value(&self, c: usize, v: f32) -> f32 {
        if self.is_constant(c) {
            self.min[c]
        } else {
            v * (self.max[c] - self.min[c]) + self.min[c]
        }
    }

    /// d(physical)/d(normalized) for channel `c`; zero-width channels give 0.
    #[inline]
    pub fn scale(&self, c: usize) -> f32 {
        if self.is_constant(c) {
            0.0
        } else {
            self.max[c] - self.min[c]
        }
    }
}

/// Per-channel min-max mapping into [0,1]. When `stats` is `None` the stats
/// are computed from `seq` itself and returned alongside the result.
pub fn normalize(seq: &FieldSequence, stats: Option<&NormStats>) -> Result<(FieldSequence, NormStats)> {
    let nc = seq.shape().2;
    let stats = match stats {
        Some(s) => {
            if s.channels() != nc {
                return Err(Error::Shape(format!(
                    "norm stats have {} channels, sequence has {nc}",
                    s.channels()
                )));
            }
            s.clone()
        }
        None => NormStats::from_sequence(seq),
    };
    let frames = seq
        .frames()
        .iter()
        .map(|f| {
            let mut out = f.clone();
            for (i, v) in out.values_mut().iter_mut().enumerate() {
                *v = stats.normalize_value(i % nc, *v);
            }
            out
        })
        .collect();
    Ok((FieldSequence::new(frames, seq.dt_index)?, stats))
}

/// Inverse of [`normalize`]. Constant channels come back at their stored min.
pub fn denormalize(seq: &FieldSequence, stats: &NormStats) -> Result<FieldSequence> {
    let nc = seq.shape().2;
    if stats.channels() != nc {
        return Err(Error::Shape(format!(
            "norm stats have {} channels, sequence has {nc}",
            stats.channels()
        )));
    }
    let frames = seq
        .frames()
        .iter()
        .map(|f| {
            let mut out = f.clone();
            for (i, v) in out.values_mut().iter_mut().enumerate() {
                *v = stats.denormalize_value(i % nc, *v);
            }
            out
        })
        .collect();
    FieldSequence::new(frames, seq.dt_index)
}

/// Writes `seq` into the DSVT container: magic "DSVT", version 1, dtype 1
/// (f32 LE), ndim 4, one reserved zero byte, four u32 LE dims (T, Nx, Ny, Nc),
/// then the payload row-major in (t, x, y, c) order.
pub fn write_tensor(path: &Path, seq: &FieldSequence) -> Result<()> {
    for frame in seq.frames() {
        if !frame.values().iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(
                "refusing to write non-finite values".into(),
            ));
        }
    }
    let (nx, ny, nc) = seq.shape();
    let mut buf = Vec::with_capacity(24 + seq.t() * nx * ny * nc * 4);
    buf.extend_from_slice(&DSVT_MAGIC);
    buf.push(DSVT_VERSION);
    buf.push(DSVT_DTYPE_F32);
    buf.push(4); // ndim
    buf.push(0); // reserved
    for dim in [seq.t() as u32, nx as u32, ny as u32, nc as u32] {
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    for frame in seq.frames() {
        for v in frame.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

/// Reads a DSVT container back into a [`FieldSequence`].
pub fn read_tensor(path: &Path) -> Result<FieldSequence> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 24];
    file.read_exact(&mut header)
        .map_err(|e| Error::io(path, e))?;
    if header[0..4] != DSVT_MAGIC {
        return Err(Error::format(path, "bad magic bytes"));
    }
    if header[4] != DSVT_VERSION {
        return Err(Error::format(path, format!("unknown version {}", header[4])));
    }
    if header[5] != DSVT_DTYPE_F32 {
        return Err(Error::format(path, format!("unknown dtype {}", header[5])));
    }
    if header[6] != 4 {
        return Err(Error::format(path, format!("unexpected ndim {}", header[6])));
    }
    let dim = |i: usize| u32::from_le_bytes(header[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (t, nx, ny, nc) = (dim(0), dim(1), dim(2), dim(3));
    let expected = (t * nx * ny * nc * 4) as u64;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    if payload.len() as u64 != expected {
        return Err(Error::Length {
            path: path.into(),
            expected: expected + 24,
            actual: payload.len() as u64 + 24,
        });
    }
    let per_frame = nx * ny * nc;
    let mut frames = Vec::with_capacity(t);
    for ti in 0..t {
        let mut values = Vec::with_capacity(per_frame);
        for i in 0..per_frame {
            let off = (ti * per_frame + i) * 4;
            values.push(f32::from_le_bytes(payload[off..off + 4].try_into().unwrap()));
        }
        frames.push(Field::new(nx, ny, nc, values)?);
    }
    FieldSequence::new(frames, 0)
}

/// Validity-mask policy for gridded-series ingestion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskPolicy {
    None,
    /// Cells exactly equal to the sentinel in any channel are invalid; their
    /// values are zeroed in the returned frames.
    MaskValue(f32),
}

/// Boolean validity grid, `true` = valid cell (e.g. ocean).
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub nx: usize,
    pub ny: usize,
    pub valid: Vec<bool>,
}

impl Mask {
    pub fn all_valid(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            valid: vec![true; nx * ny],
        }
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[x * self.ny + y]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Loads a gridded series from either a DSVT file or a directory of
/// `frame_%05d.csv` files (ny rows, nx·nc comma-separated values per row,
/// channel-major within a cell), applying the mask policy.
pub fn ingest_grid_series(path: &Path, policy: MaskPolicy) -> Result<(FieldSequence, Mask)> {
    let seq = if path.is_dir() {
        read_csv_frames(path)?
    } else {
        read_tensor(path)?
    };
    let (nx, ny, nc) = seq.shape();
    let mut mask = Mask::all_valid(nx, ny);
    let seq = match policy {
        MaskPolicy::None => seq,
        MaskPolicy::MaskValue(sentinel) => {
            for frame in seq.frames() {
                for x in 0..nx {
                    for y in 0..ny {
                        if (0..nc).any(|c| frame.get(x, y, c) == sentinel) {
                            mask.valid[x * ny + y] = false;
                        }
                    }
                }
            }
            // Zero out invalid cells across all frames once the mask is known.
            let frames = seq
                .frames()
                .iter()
                .cloned()
                .map(|mut f| {
                    for x in 0..nx {
                        for y in 0..ny {
                            if !mask.is_valid(x, y) {
                                for c in 0..nc {
                                    f.set(x, y, c, 0.0);
                                }
                            }
                        }
                    }
                    f
                })
                .collect();
            FieldSequence::new(frames, seq.dt_index)?
        }
    };
    Ok((seq, mask))
}

fn read_csv_frames(dir: &Path) -> Result<FieldSequence> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("frame_") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::format(dir, "no frame_*.csv files found"));
    }
    let mut frames = Vec::with_capacity(entries.len());
    let mut shape: Option<(usize, usize, usize)> = None;
    for path in &entries {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows: Vec<Vec<f32>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                line.split(',')
                    .map(|tok| {
                        tok.trim()
                            .parse::<f32>()
                            .map_err(|_| Error::format(path, format!("bad number {tok:?}")))
                    })
                    .collect::<Result<Vec<f32>>>()
            })
            .collect::<Result<_>>()?;
        let ny = rows.len();
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::format(path, "ragged rows"));
        }
        // Infer nc: frames carry nx*nc columns. nc comes from a previously
        // seen frame, or defaults to 1 channel for a fresh series.
        let (nx, nc) = match shape {
            Some((nx, sy, nc)) => {
                if sy != ny || width != nx * nc {
                    return Err(Error::Shape(format!(
                        "frame {} has shape {ny}x{width}, expected {sy}x{}",
                        path.display(),
                        nx * nc
                    )));
                }
                (nx, nc)
            }
            None => (width, 1),
        };
        shape.get_or_insert((nx, ny, nc));
        let mut field = Field::zeros(nx, ny, nc)?;
        for (y, row) in rows.iter().enumerate() {
            for x in 0..nx {
                for c in 0..nc {
                    field.set(x, y, c, row[x * nc + c]);
                }
            }
        }
        frames.push(field);
    }
    FieldSequence::new(frames, 0)
}

/// Writes the CSV-per-frame layout understood by [`ingest_grid_series`].
pub fn write_csv_frames(dir: &Path, seq: &FieldSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (nx, ny, nc) = seq.shape();
    for (t, frame) in seq.frames().iter().enumerate() {
        let path = dir.join(format!("frame_{t:05}.csv"));
        let mut out = String::new();
        for y in 0..ny {
            let mut cols = Vec::with_capacity(nx * nc);
            for x in 0..nx {
                for c in 0..nc {
                    cols.push(format!("{}", frame.get(x, y, c)));
                }
            }
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Convenience: writes `seq` and returns nothing, used by dataset generation.
pub fn write_tensor_create_dirs(path: &Path, seq: &FieldSequence) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_tensor(path, seq)
}

/// Writes a small text file, mapping IO errors onto crate errors.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
