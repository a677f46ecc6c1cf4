//! Model architectures and their forward/backward passes.
//!
//! Parameters live in [`ParamSet`], an ordered list of matrices and vectors
//! (layer order, weights before biases) shared by the Adam optimizer, the
//! gradient checker and the model container format.

pub mod bundle;
pub mod ced;
pub mod convlstm;
pub mod lstm;
pub mod ops;

use ndarray::{Array1, Array2, NdFloat};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bundle::{load_model, save_model, ModelBundle};
pub use ced::{CedModel, CedSpec};
pub use convlstm::{ConvLstmModel, ConvLstmSpec};
pub use lstm::{LatentSeqSpec, LstmModel};

/// Per-channel output activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelActivation {
    /// tanh, range [-1, 1]; used for velocity channels.
    BoundedSymmetric,
    /// ReLU, range [0, inf); used for water height and SST.
    Nonnegative,
    /// Identity clamped at zero from below.
    LinearNonnegativeClamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec(pub Vec<ChannelActivation>);

impl ActivationSpec {
    /// Shallow-water default: tanh on (u, v), nonnegative on h.
    pub fn shallow_water() -> Self {
        Self(vec![
            ChannelActivation::BoundedSymmetric,
            ChannelActivation::BoundedSymmetric,
            ChannelActivation::Nonnegative,
        ])
    }

    /// Single nonnegative channel (e.g. sea surface temperature).
    pub fn nonnegative(nc: usize) -> Self {
        Self(vec![ChannelActivation::Nonnegative; nc])
    }

    pub fn channels(&self) -> usize {
        self.0.len()
    }

    /// Applies the per-channel activation to a (pixels, nc) map in place.
    pub fn apply<F: NdFloat>(&self, pre: &mut Array2<F>) {
        for (c, act) in self.0.iter().enumerate() {
            for v in pre.column_mut(c) {
                *v = match act {
                    ChannelActivation::BoundedSymmetric => v.tanh(),
                    ChannelActivation::Nonnegative | ChannelActivation::LinearNonnegativeClamp => {
                        if *v > F::zero() {
                            *v
                        } else {
                            F::zero()
                        }
                    }
                };
            }
        }
    }

    /// Chain-rule factor given the activated output.
    pub fn backward<F: NdFloat>(&self, out: &Array2<F>, dout: &Array2<F>) -> Array2<F> {
        let mut dpre = dout.clone();
        for (c, act) in self.0.iter().enumerate() {
            let out_col = out.column(c);
            for (g, &o) in dpre.column_mut(c).iter_mut().zip(out_col.iter()) {
                match act {
                    ChannelActivation::BoundedSymmetric => {
                        *g = *g * (F::one() - o * o);
                    }
                    ChannelActivation::Nonnegative | ChannelActivation::LinearNonnegativeClamp => {
                        if o <= F::zero() {
                            *g = F::zero();
                        }
                    }
                }
            }
        }
        dpre
    }
}

/// One parameter tensor: matrix (weights) or vector (bias).
#[derive(Debug, Clone, PartialEq)]
pub enum PTensor<F> {
    M(Array2<F>),
    V(Array1<F>),
}

impl<F: NdFloat> PTensor<F> {
    pub fn len(&self) -> usize {
        match self {
            PTensor::M(m) => m.len(),
            PTensor::V(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_slice(&self) -> &[F] {
        match self {
            PTensor::M(m) => m.as_slice().expect("contiguous"),
            PTensor::V(v) => v.as_slice().expect("contiguous"),
        }
    }

    pub fn as_slice_mut(&mut self) -> &mut [F] {
        match self {
            PTensor::M(m) => m.as_slice_mut().expect("contiguous"),
            PTensor::V(v) => v.as_slice_mut().expect("contiguous"),
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            PTensor::M(m) => PTensor::M(Array2::zeros(m.raw_dim())),
            PTensor::V(v) => PTensor::V(Array1::zeros(v.raw_dim())),
        }
    }
}

/// Ordered parameter collection. Models document their tensor order as
/// layer order with each layer's weights preceding its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    pub tensors: Vec<PTensor<F>>,
}

impl<F: NdFloat> ParamSet<F> {
    pub fn new() -> Self {
        Self { tensors: Vec::new() }
    }

    pub fn mat(&self, i: usize) -> &Array2<F> {
        match &self.tensors[i] {
            PTensor::M(m) => m,
            PTensor::V(_) => panic!("tensor {i} is a vector"),
        }
    }

    pub fn vec(&self, i: usize) -> &Array1<F> {
        match &self.tensors[i] {
            PTensor::V(v) => v,
            PTensor::M(_) => panic!("tensor {i} is a matrix"),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self.tensors.iter().map(|t| t.zeros_like()).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Accumulates `other * scale` into self (used for gradient accumulation).
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.as_slice_mut().iter_mut().zip(b.as_slice()) {
                *x = *x + *y * scale;
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for t in &mut self.tensors {
            for x in t.as_slice_mut() {
                *x = *x * s;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            for x in t.as_slice_mut() {
                *x = F::zero();
            }
        }
    }

    pub fn flat(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in &self.tensors {
            out.extend_from_slice(t.as_slice());
        }
        out
    }

    pub fn get_flat(&self, idx: usize) -> F {
        let mut i = idx;
        for t in &self.tensors {
            if i < t.len() {
                return t.as_slice()[i];
            }
            i -= t.len();
        }
        panic!("flat index {idx} out of range");
    }

    pub fn set_flat(&mut self, idx: usize, value: F) {
        let mut i = idx;
        for t in &mut self.tensors {
            if i < t.len() {
                t.as_slice_mut()[i] = value;
                return;
            }
            i -= t.len();
        }
        panic!("flat index {idx} out of range");
    }

    /// Adds a matrix gradient into tensor `i`.
    pub fn acc_mat(&mut self, i: usize, d: &Array2<F>) {
        match &mut self.tensors[i] {
            PTensor::M(m) => *m += d,
            PTensor::V(_) => panic!("tensor {i} is a vector"),
        }
    }

    /// Adds a vector gradient into tensor `i`.
    pub fn acc_vec(&mut self, i: usize, d: &Array1<F>) {
        match &mut self.tensors[i] {
            PTensor::V(v) => *v += d,
            PTensor::M(_) => panic!("tensor {i} is a matrix"),
        }
    }

    /// Shape signature used by the container format for compatibility checks.
    pub fn shape_signature(&self) -> Vec<Vec<usize>> {
        self.tensors
            .iter()
            .map(|t| match t {
                PTensor::M(m) => vec![m.nrows(), m.ncols()],
                PTensor::V(v) => vec![v.len()],
            })
            .collect()
    }
}

impl<F: NdFloat> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Glorot-style uniform initialization: U(-a, a) with a = sqrt(6/(fan_in+fan_out)).
/// Samples are drawn in f64 so f32 and f64 instantiations see the same values.
pub fn glorot_mat<F: NdFloat>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
) -> Array2<F> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| {
        F::from(rng.gen_range(-a..a)).unwrap()
    })
}

pub fn zero_bias<F: NdFloat>(n: usize) -> Array1<F> {
    Array1::zeros(n)
}

/// Adam optimizer: adaptive per-parameter first/second moments with bias
/// correction (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    step: u64,
    m: ParamSet<F>,
    v: ParamSet<F>,
}

impl<F: NdFloat> Adam<F> {
    pub fn new(params: &ParamSet<F>, lr: F) -> Self {
        Self {
            lr,
            beta1: F::from(0.9).unwrap(),
            beta2: F::from(0.999).unwrap(),
            eps: F::from(1e-8).unwrap(),
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &ParamSet<F>) {
        self.step += 1;
        let t = F::from(self.step as f64).unwrap();
        let bc1 = F::one() - self.beta1.powf(t);
        let bc2 = F::one() - self.beta2.powf(t);
        for ((p, g), (m, v)) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(self.m.tensors.iter_mut().zip(&mut self.v.tensors))
        {
            let (ps, gs) = (p.as_slice_mut(), g.as_slice());
            let (ms, vs) = (m.as_slice_mut(), v.as_slice_mut());
            for i in 0..ps.len() {
                ms[i] = self.beta1 * ms[i] + (F::one() - self.beta1) * gs[i];
                vs[i] = self.beta2 * vs[i] + (F::one() - self.beta2) * gs[i] * gs[i];
                let m_hat = ms[i] / bc1;
                let v_hat = vs[i] / bc2;
                ps[i] = ps[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
