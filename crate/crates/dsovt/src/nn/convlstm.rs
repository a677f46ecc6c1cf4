//! Convolutional LSTM operating directly on gridded fields.
//!
//! Each layer computes its gates as 3x3 convolutions over both the input and
//! the previous hidden state (gate order i, f, g, o along the channel axis).
//! A 1x1 convolution head with per-channel activations maps the top hidden
//! state back to field channels. Sequencing matches the latent LSTM: `s_in`
//! observed frames, then autoregressive feedback for `s_out` predictions.

use ndarray::{s, Array2, Axis, NdFloat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{conv3x3, conv3x3_backward};
use crate::nn::{glorot_mat, zero_bias, ActivationSpec, PTensor, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLstmSpec {
    pub nx: usize,
    pub ny: usize,
    pub nc: usize,
    pub layers: usize,
    pub filters: usize,
    pub activation: ActivationSpec,
}

impl ConvLstmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 8 || self.ny < 8 {
            return Err(Error::Validation("grid must be at least 8x8".into()));
        }
        if self.nc == 0 || self.layers == 0 || self.filters == 0 {
            return Err(Error::Validation(
                "channels, layers and filters must all be >= 1".into(),
            ));
        }
        if self.activation.channels() != self.nc {
            return Err(Error::Validation(format!(
                "activation spec covers {} channels, field has {}",
                self.activation.channels(),
                self.nc
            )));
        }
        Ok(())
    }
}

/// Tensor order: per layer (Wx, Wh, b) bottom to top, then head (W, b).
#[derive(Debug, Clone)]
pub struct ConvLstmModel<F> {
    pub spec: ConvLstmSpec,
    pub params: ParamSet<F>,
}

fn sigmoid<F: NdFloat>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

struct LayerStep<F> {
    x: Array2<F>,
    h_prev: Array2<F>,
    c_prev: Array2<F>,
    i: Array2<F>,
    f: Array2<F>,
    g: Array2<F>,
    o: Array2<F>,
    c: Array2<F>,
    tanh_c: Array2<F>,
    h: Array2<F>,
}

pub struct ConvLstmCache<F> {
    steps: Vec<Vec<LayerStep<F>>>,
    /// One predicted field map (pixels, nc) per output step.
    pub outputs: Vec<Array2<F>>,
    s_in: usize,
}

impl<F: NdFloat> ConvLstmModel<F> {
    pub fn new(spec: ConvLstmSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        for l in 0..spec.layers {
            let cin = if l == 0 { spec.nc } else { spec.filters };
            let m = spec.filters;
            p.tensors.push(PTensor::M(glorot_mat(
                &mut rng,
                9 * cin,
                4 * m,
                9 * cin,
                9 * m,
            )));
            p.tensors.push(PTensor::M(glorot_mat(
                &mut rng,
                9 * m,
                4 * m,
                9 * m,
                9 * m,
            )));
            p.tensors.push(PTensor::V(zero_bias(4 * m)));
        }
        p.tensors.push(PTensor::M(glorot_mat(
            &mut rng,
            spec.filters,
            spec.nc,
            spec.filters,
            spec.nc,
        )));
        p.tensors.push(PTensor::V(zero_bias(spec.nc)));
        Ok(Self { spec, params: p })
    }

    fn wx(&self, l: usize) -> &Array2<F> {
        self.params.mat(3 * l)
    }
    fn wh(&self, l: usize) -> &Array2<F> {
        self.params.mat(3 * l + 1)
    }
    fn b(&self, l: usize) -> &ndarray::Array1<F> {
        self.params.vec(3 * l + 2)
    }
    fn head_w(&self) -> &Array2<F> {
        self.params.mat(3 * self.spec.layers)
    }
    fn head_b(&self) -> &ndarray::Array1<F> {
        self.params.vec(3 * self.spec.layers + 1)
    }

    fn cell_step(
        &self,
        l: usize,
        x: &Array2<F>,
        h_prev: &Array2<F>,
        c_prev: &Array2<F>,
    ) -> LayerStep<F> {
        let (nx, ny, m) = (self.spec.nx, self.spec.ny, self.spec.filters);
        let mut a = conv3x3(x, nx, ny, self.wx(l), self.b(l));
        let zero4 = ndarray::Array1::<F>::zeros(4 * m);
        a += &conv3x3(h_prev, nx, ny, self.wh(l), &zero4);
        let i = a.slice(s![.., 0..m]).mapv(sigmoid);
        let f = a.slice(s![.., m..2 * m]).mapv(sigmoid);
        let g = a.slice(s![.., 2 * m..3 * m]).mapv(|v| v.tanh());
        let o = a.slice(s![.., 3 * m..4 * m]).mapv(sigmoid);
        let c = &f * c_prev + &i * &g;
        let tanh_c = c.mapv(|v| v.tanh());
        let h = &o * &tanh_c;
        LayerStep {
            x: x.clone(),
            h_prev: h_prev.clone(),
            c_prev: c_prev.clone(),
            i,
            f,
            g,
            o,
            c,
            tanh_c,
            h,
        }
    }

    /// Runs `s_in` observed frames then autoregressive continuation,
    /// producing `s_out` predicted field maps.
    pub fn forward(&self, inputs: &[Array2<F>], s_out: usize) -> ConvLstmCache<F> {
        let s_in = inputs.len();
        assert!(s_in >= 1 && s_out >= 1);
        let pixels = self.spec.nx * self.spec.ny;
        let m = self.spec.filters;
        let mut h: Vec<Array2<F>> = vec![Array2::zeros((pixels, m)); self.spec.layers];
        let mut c: Vec<Array2<F>> = vec![Array2::zeros((pixels, m)); self.spec.layers];
        let mut steps = Vec::new();
        let mut outputs = Vec::new();
        let mut fed_back: Option<Array2<F>> = None;
        for k in 0..s_in + s_out - 1 {
            let x0 = if k < s_in {
                inputs[k].clone()
            } else {
                fed_back.clone().expect("previous output")
            };
            let mut layer_steps = Vec::with_capacity(self.spec.layers);
            let mut x = x0;
            for l in 0..self.spec.layers {
                let step = self.cell_step(l, &x, &h[l], &c[l]);
                x = step.h.clone();
                h[l] = step.h.clone();
                c[l] = step.c.clone();
                layer_steps.push(step);
            }
            steps.push(layer_steps);
            if k >= s_in - 1 {
                let mut y = h[self.spec.layers - 1].dot(self.head_w()) + self.head_b();
                self.spec.activation.apply(&mut y);
                fed_back = Some(y.clone());
                outputs.push(y);
            }
        }
        ConvLstmCache {
            steps,
            outputs,
            s_in,
        }
    }

    /// Full backpropagation through time including the feedback path.
    pub fn backward(
        &self,
        cache: &ConvLstmCache<F>,
        douts: &[Array2<F>],
        grads: &mut ParamSet<F>,
    ) {
        assert_eq!(douts.len(), cache.outputs.len());
        let (nx, ny) = (self.spec.nx, self.spec.ny);
        let (layers, m) = (self.spec.layers, self.spec.filters);
        let pixels = nx * ny;
        let total = cache.steps.len();
        let s_in = cache.s_in;
        let mut dh: Vec<Array2<F>> = vec![Array2::zeros((pixels, m)); layers];
        let mut dc: Vec<Array2<F>> = vec![Array2::zeros((pixels, m)); layers];
        let mut dfeedback: Option<Array2<F>> = None;
        for k in (0..total).rev() {
            if k >= s_in - 1 {
                let out_idx = k - (s_in - 1);
                let mut dy = douts[out_idx].clone();
                if let Some(fb) = dfeedback.take() {
                    dy += &fb;
                }
                let out = &cache.outputs[out_idx];
                let dpre = self.spec.activation.backward(out, &dy);
                let h_top = &cache.steps[k][layers - 1].h;
                grads.acc_mat(3 * layers, &h_top.t().dot(&dpre));
                grads.acc_vec(3 * layers + 1, &dpre.sum_axis(Axis(0)));
                dh[layers - 1] += &dpre.dot(&self.head_w().t());
            }
            for l in (0..layers).rev() {
                let st = &cache.steps[k][l];
                let one = F::one();
                let dho = dh[l].clone();
                let d_o = &dho * &st.tanh_c;
                let mut d_c = dc[l].clone();
                d_c += &(&dho * &st.o * &st.tanh_c.mapv(|t| one - t * t));
                let d_f = &d_c * &st.c_prev;
                let d_i = &d_c * &st.g;
                let d_g = &d_c * &st.i;
                let dc_prev = &d_c * &st.f;
                let da_i = d_i * &st.i.mapv(|v| v * (one - v));
                let da_f = d_f * &st.f.mapv(|v| v * (one - v));
                let da_g = d_g * &st.g.mapv(|v| one - v * v);
                let da_o = d_o * &st.o.mapv(|v| v * (one - v));
                let mut da = Array2::<F>::zeros((pixels, 4 * m));
                da.slice_mut(s![.., 0..m]).assign(&da_i);
                da.slice_mut(s![.., m..2 * m]).assign(&da_f);
                da.slice_mut(s![.., 2 * m..3 * m]).assign(&da_g);
                da.slice_mut(s![.., 3 * m..4 * m]).assign(&da_o);
                let (dx, dwx, db) = conv3x3_backward(&st.x, nx, ny, self.wx(l), &da);
                let (dh_prev, dwh, _) = conv3x3_backward(&st.h_prev, nx, ny, self.wh(l), &da);
                grads.acc_mat(3 * l, &dwx);
                grads.acc_mat(3 * l + 1, &dwh);
                grads.acc_vec(3 * l + 2, &db);
                dh[l] = dh_prev;
                dc[l] = dc_prev;
                if l > 0 {
                    dh[l - 1] += &dx;
                } else if k >= s_in {
                    dfeedback = Some(match dfeedback.take() {
                        Some(mut acc) => {
                            acc += &dx;
                            acc
                        }
                        None => dx,
                    });
                }
            }
        }
    }
}
