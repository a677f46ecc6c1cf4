//! Stacked LSTM over latent vectors with a linear head.
//!
//! The model consumes `s_in` latent vectors, then continues autoregressively:
//! each predicted latent is fed back as the next input. Predictions start at
//! the last input step, so `s_in + s_out - 1` recurrent steps produce `s_out`
//! outputs. Backpropagation runs through the feedback path as well.

use ndarray::{s, Array2, Axis, NdFloat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{glorot_mat, zero_bias, PTensor, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSeqSpec {
    pub latent: usize,
    pub layers: usize,
    pub hidden: usize,
}

impl LatentSeqSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.layers == 0 || self.hidden == 0 {
            return Err(Error::Validation(
                "latent, layers and hidden must all be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Tensor order: per layer (Wx, Wh, b) bottom to top, then head (W, b).
/// Gate blocks along the 4*hidden axis are ordered i, f, g, o.
#[derive(Debug, Clone)]
pub struct LstmModel<F> {
    pub spec: LatentSeqSpec,
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

pub struct LstmCache<F> {
    steps: Vec<Vec<LayerStep<F>>>,
    /// One predicted latent per output step.
    pub outputs: Vec<Array2<F>>,
    s_in: usize,
}

impl<F: NdFloat> LstmModel<F> {
    pub fn new(spec: LatentSeqSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        for l in 0..spec.layers {
            let n = if l == 0 { spec.latent } else { spec.hidden };
            let m = spec.hidden;
            p.tensors
                .push(PTensor::M(glorot_mat(&mut rng, n, 4 * m, n, m)));
            p.tensors
                .push(PTensor::M(glorot_mat(&mut rng, m, 4 * m, m, m)));
            p.tensors.push(PTensor::V(zero_bias(4 * m)));
        }
        p.tensors.push(PTensor::M(glorot_mat(
            &mut rng,
            spec.hidden,
            spec.latent,
            spec.hidden,
            spec.latent,
        )));
        p.tensors.push(PTensor::V(zero_bias(spec.latent)));
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
        let m = self.spec.hidden;
        let a = x.dot(self.wx(l)) + h_prev.dot(self.wh(l)) + self.b(l);
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

    /// Runs `s_in` given latents then `s_out - 1` autoregressive steps,
    /// producing `s_out` predicted latents.
    pub fn forward(&self, inputs: &[Array2<F>], s_out: usize) -> LstmCache<F> {
        let s_in = inputs.len();
        assert!(s_in >= 1 && s_out >= 1);
        let m = self.spec.hidden;
        let mut h: Vec<Array2<F>> = vec![Array2::zeros((1, m)); self.spec.layers];
        let mut c: Vec<Array2<F>> = vec![Array2::zeros((1, m)); self.spec.layers];
        let mut steps = Vec::new();
        let mut outputs = Vec::new();
        let total = s_in + s_out - 1;
        let mut fed_back: Option<Array2<F>> = None;
        for k in 0..total {
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
                let y = h[self.spec.layers - 1].dot(self.head_w()) + self.head_b();
                fed_back = Some(y.clone());
                outputs.push(y);
            }
        }
        LstmCache {
            steps,
            outputs,
            s_in,
        }
    }

    /// Full backpropagation through time, including the feedback path.
    /// `douts` holds one gradient per predicted latent.
    pub fn backward(&self, cache: &LstmCache<F>, douts: &[Array2<F>], grads: &mut ParamSet<F>) {
        assert_eq!(douts.len(), cache.outputs.len());
        let (layers, m) = (self.spec.layers, self.spec.hidden);
        let total = cache.steps.len();
        let s_in = cache.s_in;
        let mut dh: Vec<Array2<F>> = vec![Array2::zeros((1, m)); layers];
        let mut dc: Vec<Array2<F>> = vec![Array2::zeros((1, m)); layers];
        // gradient flowing into the output fed back as the next step's input
        let mut dfeedback: Option<Array2<F>> = None;
        for k in (0..total).rev() {
            if k >= s_in - 1 {
                let out_idx = k - (s_in - 1);
                let mut dy = douts[out_idx].clone();
                // output k was fed back as input to step k+1 (unless last)
                if let Some(fb) = dfeedback.take() {
                    dy += &fb;
                }
                let h_top = &cache.steps[k][layers - 1].h;
                grads.acc_mat(3 * layers, &h_top.t().dot(&dy));
                grads.acc_vec(3 * layers + 1, &dy.sum_axis(Axis(0)));
                dh[layers - 1] += &dy.dot(&self.head_w().t());
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
                let mut da = Array2::<F>::zeros((1, 4 * m));
                da.slice_mut(s![.., 0..m]).assign(&da_i);
                da.slice_mut(s![.., m..2 * m]).assign(&da_f);
                da.slice_mut(s![.., 2 * m..3 * m]).assign(&da_g);
                da.slice_mut(s![.., 3 * m..4 * m]).assign(&da_o);
                grads.acc_mat(3 * l, &st.x.t().dot(&da));
                grads.acc_mat(3 * l + 1, &st.h_prev.t().dot(&da));
                grads.acc_vec(3 * l + 2, &da.sum_axis(Axis(0)));
                let dx = da.dot(&self.wx(l).t());
                dh[l] = da.dot(&self.wh(l).t());
                dc[l] = dc_prev;
                if l > 0 {
                    dh[l - 1] += &dx;
                } else if k >= s_in {
                    // input was the previous step's prediction
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
