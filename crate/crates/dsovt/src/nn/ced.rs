//! Convolutional encoder-decoder (CED).
//!
//! Encoder: three (3x3 conv + ReLU + 2x2 max-pool) stages with 32/64/128
//! filters, then a dense ReLU layer to the latent vector. Decoder mirrors it:
//! dense ReLU back to an (nx/8, ny/8, 128) map, three (3x3 conv + ReLU + 2x2
//! nearest upsample) stages with 128/64/32 filters, and a final 3x3 conv with
//! per-channel output activations.

use ndarray::{Array2, Axis, NdFloat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{
    conv3x3, conv3x3_backward, maxpool2x2, maxpool2x2_backward, relu, relu_backward, upsample2x2,
    upsample2x2_backward,
};
use crate::nn::{glorot_mat, zero_bias, ActivationSpec, PTensor, ParamSet};

const FILTERS: [usize; 3] = [32, 64, 128];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CedSpec {
    pub nx: usize,
    pub ny: usize,
    pub nc: usize,
    pub latent: usize,
    pub activation: ActivationSpec,
}

impl CedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx % 8 != 0 || self.ny % 8 != 0 || self.nx < 8 || self.ny < 8 {
            return Err(Error::Validation(format!(
                "grid {}x{} must have both sides divisible by 8",
                self.nx, self.ny
            )));
        }
        if self.nc == 0 || self.latent == 0 {
            return Err(Error::Validation(
                "channel count and latent size must be >= 1".into(),
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

    /// Flattened bottleneck width: (nx/8) * (ny/8) * 128.
    pub fn bottleneck(&self) -> usize {
        (self.nx / 8) * (self.ny / 8) * FILTERS[2]
    }
}

/// Tensor order: conv1 w/b, conv2 w/b, conv3 w/b, dense_enc w/b,
/// dense_dec w/b, conv4 w/b, conv5 w/b, conv6 w/b, conv7 w/b.
mod t {
    pub const C1W: usize = 0;
    pub const C1B: usize = 1;
    pub const C2W: usize = 2;
    pub const C2B: usize = 3;
    pub const C3W: usize = 4;
    pub const C3B: usize = 5;
    pub const DEW: usize = 6;
    pub const DEB: usize = 7;
    pub const DDW: usize = 8;
    pub const DDB: usize = 9;
    pub const C4W: usize = 10;
    pub const C4B: usize = 11;
    pub const C5W: usize = 12;
    pub const C5B: usize = 13;
    pub const C6W: usize = 14;
    pub const C6B: usize = 15;
    pub const C7W: usize = 16;
    pub const C7B: usize = 17;
}

#[derive(Debug, Clone)]
pub struct CedModel<F> {
    pub spec: CedSpec,
    pub params: ParamSet<F>,
}

/// Intermediate activations kept for the encoder backward pass.
pub struct EncCache<F> {
    input: Array2<F>,
    a1: Array2<F>,
    am1: Vec<u32>,
    p1: Array2<F>,
    a2: Array2<F>,
    am2: Vec<u32>,
    p2: Array2<F>,
    a3: Array2<F>,
    am3: Vec<u32>,
    flat: Array2<F>,
    pub z: Array2<F>,
}

/// Intermediate activations kept for the decoder backward pass.
pub struct DecCache<F> {
    z: Array2<F>,
    d: Array2<F>,
    a4: Array2<F>,
    u4: Array2<F>,
    a5: Array2<F>,
    u5: Array2<F>,
    a6: Array2<F>,
    u6: Array2<F>,
    pub out: Array2<F>,
}

impl<F: NdFloat> CedModel<F> {
    /// Fresh model with seeded Glorot-uniform weights and zero biases.
    pub fn new(spec: CedSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let push_conv = |p: &mut ParamSet<F>, rng: &mut ChaCha8Rng, cin: usize, cout: usize| {
            p.tensors.push(PTensor::M(glorot_mat(
                rng,
                9 * cin,
                cout,
                9 * cin,
                9 * cout,
            )));
            p.tensors.push(PTensor::V(zero_bias(cout)));
        };
        let push_dense = |p: &mut ParamSet<F>, rng: &mut ChaCha8Rng, n: usize, m: usize| {
            p.tensors.push(PTensor::M(glorot_mat(rng, n, m, n, m)));
            p.tensors.push(PTensor::V(zero_bias(m)));
        };
        push_conv(&mut p, &mut rng, spec.nc, FILTERS[0]);
        push_conv(&mut p, &mut rng, FILTERS[0], FILTERS[1]);
        push_conv(&mut p, &mut rng, FILTERS[1], FILTERS[2]);
        push_dense(&mut p, &mut rng, spec.bottleneck(), spec.latent);
        push_dense(&mut p, &mut rng, spec.latent, spec.bottleneck());
        push_conv(&mut p, &mut rng, FILTERS[2], FILTERS[2]);
        push_conv(&mut p, &mut rng, FILTERS[2], FILTERS[1]);
        push_conv(&mut p, &mut rng, FILTERS[1], FILTERS[0]);
        push_conv(&mut p, &mut rng, FILTERS[0], spec.nc);
        Ok(Self { spec, params: p })
    }

    pub fn latent_size(&self) -> usize {
        self.spec.latent
    }

    /// Encodes an (nx*ny, nc) map to a (1, latent) vector.
    pub fn encode(&self, input: &Array2<F>) -> EncCache<F> {
        let s = &self.spec;
        let p = &self.params;
        let a1 = relu(conv3x3(input, s.nx, s.ny, p.mat(t::C1W), p.vec(t::C1B)));
        let (p1, am1) = maxpool2x2(&a1, s.nx, s.ny);
        let a2 = relu(conv3x3(&p1, s.nx / 2, s.ny / 2, p.mat(t::C2W), p.vec(t::C2B)));
        let (p2, am2) = maxpool2x2(&a2, s.nx / 2, s.ny / 2);
        let a3 = relu(conv3x3(&p2, s.nx / 4, s.ny / 4, p.mat(t::C3W), p.vec(t::C3B)));
        let (p3, am3) = maxpool2x2(&a3, s.nx / 4, s.ny / 4);
        let flat = p3
            .into_shape((1, s.bottleneck()))
            .expect("bottleneck reshape");
        let z = relu(flat.dot(p.mat(t::DEW)) + p.vec(t::DEB));
        EncCache {
            input: input.clone(),
            a1,
            am1,
            p1,
            a2,
            am2,
            p2,
            a3,
            am3,
            flat,
            z,
        }
    }

    /// Decodes a (1, latent) vector to an (nx*ny, nc) map.
    pub fn decode(&self, z: &Array2<F>) -> DecCache<F> {
        let s = &self.spec;
        let p = &self.params;
        let d = relu(z.dot(p.mat(t::DDW)) + p.vec(t::DDB));
        let r = d
            .clone()
            .into_shape(((s.nx / 8) * (s.ny / 8), FILTERS[2]))
            .expect("decoder reshape");
        let a4 = relu(conv3x3(&r, s.nx / 8, s.ny / 8, p.mat(t::C4W), p.vec(t::C4B)));
        let u4 = upsample2x2(&a4, s.nx / 8, s.ny / 8);
        let a5 = relu(conv3x3(&u4, s.nx / 4, s.ny / 4, p.mat(t::C5W), p.vec(t::C5B)));
        let u5 = upsample2x2(&a5, s.nx / 4, s.ny / 4);
        let a6 = relu(conv3x3(&u5, s.nx / 2, s.ny / 2, p.mat(t::C6W), p.vec(t::C6B)));
        let u6 = upsample2x2(&a6, s.nx / 2, s.ny / 2);
        let mut out = conv3x3(&u6, s.nx, s.ny, p.mat(t::C7W), p.vec(t::C7B));
        s.activation.apply(&mut out);
        DecCache {
            z: z.clone(),
            d,
            a4,
            u4,
            a5,
            u5,
            a6,
            u6,
            out,
        }
    }

    pub fn forward(&self, input: &Array2<F>) -> (EncCache<F>, DecCache<F>) {
        let enc = self.encode(input);
        let dec = self.decode(&enc.z);
        (enc, dec)
    }

    /// Decoder backward: accumulates parameter gradients into `grads` and
    /// returns the gradient with respect to the latent vector.
    pub fn decode_backward(
        &self,
        cache: &DecCache<F>,
        dout: &Array2<F>,
        grads: &mut ParamSet<F>,
    ) -> Array2<F> {
        let s = &self.spec;
        let p = &self.params;
        let dpre7 = s.activation.backward(&cache.out, dout);
        let (du6, dw7, db7) = conv3x3_backward(&cache.u6, s.nx, s.ny, p.mat(t::C7W), &dpre7);
        grads.acc_mat(t::C7W, &dw7);
        grads.acc_vec(t::C7B, &db7);

        let da6 = upsample2x2_backward(&du6, s.nx / 2, s.ny / 2);
        let dpre6 = relu_backward(&cache.a6, &da6);
        let (du5, dw6, db6) =
            conv3x3_backward(&cache.u5, s.nx / 2, s.ny / 2, p.mat(t::C6W), &dpre6);
        grads.acc_mat(t::C6W, &dw6);
        grads.acc_vec(t::C6B, &db6);

        let da5 = upsample2x2_backward(&du5, s.nx / 4, s.ny / 4);
        let dpre5 = relu_backward(&cache.a5, &da5);
        let (du4, dw5, db5) =
            conv3x3_backward(&cache.u4, s.nx / 4, s.ny / 4, p.mat(t::C5W), &dpre5);
        grads.acc_mat(t::C5W, &dw5);
        grads.acc_vec(t::C5B, &db5);

        let da4 = upsample2x2_backward(&du4, s.nx / 8, s.ny / 8);
        let dpre4 = relu_backward(&cache.a4, &da4);
        let r = cache
            .d
            .clone()
            .into_shape(((s.nx / 8) * (s.ny / 8), FILTERS[2]))
            .expect("decoder reshape");
        let (dr, dw4, db4) = conv3x3_backward(&r, s.nx / 8, s.ny / 8, p.mat(t::C4W), &dpre4);
        grads.acc_mat(t::C4W, &dw4);
        grads.acc_vec(t::C4B, &db4);

        let dd = dr.into_shape((1, s.bottleneck())).expect("reshape");
        let dpre_d = relu_backward(&cache.d, &dd);
        grads.acc_mat(t::DDW, &cache.z.t().dot(&dpre_d));
        grads.acc_vec(t::DDB, &dpre_d.sum_axis(Axis(0)));
        dpre_d.dot(&p.mat(t::DDW).t())
    }

    /// Encoder backward: accumulates parameter gradients into `grads` and
    /// returns the gradient with respect to the input map.
    pub fn encode_backward(
        &self,
        cache: &EncCache<F>,
        dz: &Array2<F>,
        grads: &mut ParamSet<F>,
    ) -> Array2<F> {
        let s = &self.spec;
        let p = &self.params;
        let dpre_z = relu_backward(&cache.z, dz);
        let p3_pixels = (s.nx / 8) * (s.ny / 8);
        grads.acc_mat(t::DEW, &cache.flat.t().dot(&dpre_z));
        grads.acc_vec(t::DEB, &dpre_z.sum_axis(Axis(0)));
        let dflat = dpre_z.dot(&p.mat(t::DEW).t());
        let dp3 = dflat
            .into_shape((p3_pixels, FILTERS[2]))
            .expect("reshape");

        let da3 = maxpool2x2_backward(&dp3, &cache.am3, s.nx / 4, s.ny / 4);
        let dpre3 = relu_backward(&cache.a3, &da3);
        let (dp2, dw3, db3) =
            conv3x3_backward(&cache.p2, s.nx / 4, s.ny / 4, p.mat(t::C3W), &dpre3);
        grads.acc_mat(t::C3W, &dw3);
        grads.acc_vec(t::C3B, &db3);

        let da2 = maxpool2x2_backward(&dp2, &cache.am2, s.nx / 2, s.ny / 2);
        let dpre2 = relu_backward(&cache.a2, &da2);
        let (dp1, dw2, db2) =
            conv3x3_backward(&cache.p1, s.nx / 2, s.ny / 2, p.mat(t::C2W), &dpre2);
        grads.acc_mat(t::C2W, &dw2);
        grads.acc_vec(t::C2B, &db2);

        let da1 = maxpool2x2_backward(&dp1, &cache.am1, s.nx, s.ny);
        let dpre1 = relu_backward(&cache.a1, &da1);
        let (dinput, dw1, db1) = conv3x3_backward(&cache.input, s.nx, s.ny, p.mat(t::C1W), &dpre1);
        grads.acc_mat(t::C1W, &dw1);
        grads.acc_vec(t::C1B, &db1);
        dinput
    }

    /// Full backward through decoder then encoder.
    pub fn backward(
        &self,
        enc: &EncCache<F>,
        dec: &DecCache<F>,
        dout: &Array2<F>,
        grads: &mut ParamSet<F>,
    ) -> Array2<F> {
        let dz = self.decode_backward(dec, dout, grads);
        self.encode_backward(enc, &dz, grads)
    }
}
