//! Model container: a TOML spec header followed by the raw parameter payload.
//!
//! Layout: magic `DSVM`, version byte, 3 reserved zero bytes, u32 LE header
//! length, UTF-8 TOML header (model kind + architecture spec), then every
//! parameter tensor as float32 LE in the model's documented order (layer
//! order, weights before biases). Loading rebuilds the architecture from the
//! header and validates the payload length, so round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ced::{CedModel, CedSpec};
use crate::nn::convlstm::{ConvLstmModel, ConvLstmSpec};
use crate::nn::lstm::{LatentSeqSpec, LstmModel};
use crate::nn::ParamSet;

const MAGIC: &[u8; 4] = b"DSVM";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum SpecHeader {
    Ced { spec: CedSpec },
    LatentSeq { spec: LatentSeqSpec },
    ConvLstm { spec: ConvLstmSpec },
}

#[derive(Debug, Clone)]
pub enum ModelBundle {
    Ced(CedModel<f32>),
    Lstm(LstmModel<f32>),
    ConvLstm(ConvLstmModel<f32>),
}

impl ModelBundle {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelBundle::Ced(_) => "ced",
            ModelBundle::Lstm(_) => "latent-seq",
            ModelBundle::ConvLstm(_) => "conv-lstm",
        }
    }

    fn params(&self) -> &ParamSet<f32> {
        match self {
            ModelBundle::Ced(m) => &m.params,
            ModelBundle::Lstm(m) => &m.params,
            ModelBundle::ConvLstm(m) => &m.params,
        }
    }

    fn header(&self) -> SpecHeader {
        match self {
            ModelBundle::Ced(m) => SpecHeader::Ced {
                spec: m.spec.clone(),
            },
            ModelBundle::Lstm(m) => SpecHeader::LatentSeq {
                spec: m.spec.clone(),
            },
            ModelBundle::ConvLstm(m) => SpecHeader::ConvLstm {
                spec: m.spec.clone(),
            },
        }
    }

    pub fn into_ced(self) -> Result<CedModel<f32>> {
        match self {
            ModelBundle::Ced(m) => Ok(m),
            other => Err(Error::Compatibility(format!(
                "expected a ced model, found {}",
                other.kind()
            ))),
        }
    }

    pub fn into_lstm(self) -> Result<LstmModel<f32>> {
        match self {
            ModelBundle::Lstm(m) => Ok(m),
            other => Err(Error::Compatibility(format!(
                "expected a latent-seq model, found {}",
                other.kind()
            ))),
        }
    }

    pub fn into_convlstm(self) -> Result<ConvLstmModel<f32>> {
        match self {
            ModelBundle::ConvLstm(m) => Ok(m),
            other => Err(Error::Compatibility(format!(
                "expected a conv-lstm model, found {}",
                other.kind()
            ))),
        }
    }

    /// Checks the latent width against an expected value (models without a
    /// latent space fail outright).
    pub fn require_latent(&self, z: usize) -> Result<()> {
        let found = match self {
            ModelBundle::Ced(m) => m.spec.latent,
            ModelBundle::Lstm(m) => m.spec.latent,
            ModelBundle::ConvLstm(_) => {
                return Err(Error::Compatibility(
                    "conv-lstm models have no latent space".into(),
                ))
            }
        };
        if found != z {
            return Err(Error::Compatibility(format!(
                "expected latent size {z}, model has {found}"
            )));
        }
        Ok(())
    }
}

pub fn save_model(bundle: &ModelBundle, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
        }
    }
    let header = toml::to_string(&bundle.header())
        .map_err(|e| Error::Validation(format!("spec header serialization: {e}")))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    emit(MAGIC)?;
    emit(&[VERSION, 0, 0, 0])?;
    emit(&(header.len() as u32).to_le_bytes())?;
    emit(header.as_bytes())?;
    for t in &bundle.params().tensors {
        for &v in t.as_slice() {
            emit(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelBundle> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| Error::format(path, "file shorter than the fixed header"))?;
    if &head[0..4] != MAGIC {
        return Err(Error::format(path, "bad magic, not a model container"));
    }
    if head[4] != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported container version {}", head[4]),
        ));
    }
    let hlen = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let mut hbytes = vec![0u8; hlen];
    r.read_exact(&mut hbytes)
        .map_err(|_| Error::format(path, "truncated spec header"))?;
    let htext = String::from_utf8(hbytes)
        .map_err(|_| Error::format(path, "spec header is not valid UTF-8"))?;
    let header: SpecHeader =
        toml::from_str(&htext).map_err(|e| Error::format(path, format!("spec header: {e}")))?;

    // fresh model gives the canonical tensor shapes for this architecture
    let mut bundle = match header {
        SpecHeader::Ced { spec } => ModelBundle::Ced(CedModel::new(spec, 0)?),
        SpecHeader::LatentSeq { spec } => ModelBundle::Lstm(LstmModel::new(spec, 0)?),
        SpecHeader::ConvLstm { spec } => ModelBundle::ConvLstm(ConvLstmModel::new(spec, 0)?),
    };
    let params = match &mut bundle {
        ModelBundle::Ced(m) => &mut m.params,
        ModelBundle::Lstm(m) => &mut m.params,
        ModelBundle::ConvLstm(m) => &mut m.params,
    };
    let expected = params.param_count() * 4;
    let mut payload = Vec::with_capacity(expected);
    r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() != expected {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: expected as u64,
            actual: payload.len() as u64,
        });
    }
    let mut off = 0;
    for t in &mut params.tensors {
        for v in t.as_slice_mut() {
            *v = f32::from_le_bytes(payload[off..off + 4].try_into().unwrap());
            off += 4;
        }
    }
    Ok(bundle)
}
