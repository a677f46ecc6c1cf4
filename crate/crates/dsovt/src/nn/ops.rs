//! Low-level differentiable building blocks: 3x3 same-padding convolution
//! via im2col + GEMM, 2x2 max-pool, 2x2 nearest upsampling and dense layers.
//!
//! Feature maps are `Array2<F>` of shape (pixels, channels) with pixel index
//! p = x * h + y, matching the Field memory layout. Geometry (w, h) travels
//! alongside. Everything is generic over `f32`/`f64` so gradients can be
//! verified against central finite differences in double precision.

use ndarray::{Array1, Array2, NdFloat};

pub const KERNEL_OFFSETS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Gathers 3x3 neighborhoods (zero-padded) into a (pixels, 9*cin) matrix.
pub fn im2col3<F: NdFloat>(input: &Array2<F>, w: usize, h: usize) -> Array2<F> {
    let cin = input.ncols();
    let mut cols = Array2::<F>::zeros((w * h, 9 * cin));
    for (o, &(dx, dy)) in KERNEL_OFFSETS.iter().enumerate() {
        for x in 0..w as isize {
            let sx = x + dx;
            if sx < 0 || sx >= w as isize {
                continue;
            }
            for y in 0..h as isize {
                let sy = y + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let p = (x as usize) * h + y as usize;
                let sp = (sx as usize) * h + sy as usize;
                for c in 0..cin {
                    cols[[p, o * cin + c]] = input[[sp, c]];
                }
            }
        }
    }
    cols
}

/// Transpose of [`im2col3`]: scatter-adds column gradients back to pixels.
pub fn col2im3<F: NdFloat>(dcols: &Array2<F>, w: usize, h: usize, cin: usize) -> Array2<F> {
    let mut dinput = Array2::<F>::zeros((w * h, cin));
    for (o, &(dx, dy)) in KERNEL_OFFSETS.iter().enumerate() {
        for x in 0..w as isize {
            let sx = x + dx;
            if sx < 0 || sx >= w as isize {
                continue;
            }
            for y in 0..h as isize {
                let sy = y + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let p = (x as usize) * h + y as usize;
                let sp = (sx as usize) * h + sy as usize;
                for c in 0..cin {
                    dinput[[sp, c]] = dinput[[sp, c]] + dcols[[p, o * cin + c]];
                }
            }
        }
    }
    dinput
}

/// 3x3 same-padding convolution. `weights` is (9*cin, cout), `bias` (cout).
pub fn conv3x3<F: NdFloat>(
    input: &Array2<F>,
    w: usize,
    h: usize,
    weights: &Array2<F>,
    bias: &Array1<F>,
) -> Array2<F> {
    let cols = im2col3(input, w, h);
    let mut out = cols.dot(weights);
    out += bias;
    out
}

/// Backward pass of [`conv3x3`]; returns (d_input, d_weights, d_bias).
pub fn conv3x3_backward<F: NdFloat>(
    input: &Array2<F>,
    w: usize,
    h: usize,
    weights: &Array2<F>,
    dout: &Array2<F>,
) -> (Array2<F>, Array2<F>, Array1<F>) {
    let cols = im2col3(input, w, h);
    let dweights = cols.t().dot(dout);
    let dbias = dout.sum_axis(ndarray::Axis(0));
    let dcols = dout.dot(&weights.t());
    let dinput = col2im3(&dcols, w, h, input.ncols());
    (dinput, dweights, dbias)
}

/// 2x2 max-pool. Returns the pooled map plus per-output argmax pixel indices
/// (one per output element) for the backward pass. Requires even w and h.
pub fn maxpool2x2<F: NdFloat>(input: &Array2<F>, w: usize, h: usize) -> (Array2<F>, Vec<u32>) {
    let c = input.ncols();
    let (ow, oh) = (w / 2, h / 2);
    let mut out = Array2::<F>::zeros((ow * oh, c));
    let mut argmax = vec![0u32; ow * oh * c];
    for ox in 0..ow {
        for oy in 0..oh {
            let op = ox * oh + oy;
            for ch in 0..c {
                let mut best = F::neg_infinity();
                let mut best_p = 0usize;
                for dx in 0..2 {
                    for dy in 0..2 {
                        let p = (2 * ox + dx) * h + 2 * oy + dy;
                        let v = input[[p, ch]];
                        if v > best {
                            best = v;
                            best_p = p;
                        }
                    }
                }
                out[[op, ch]] = best;
                argmax[op * c + ch] = best_p as u32;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2x2_backward<F: NdFloat>(
    dout: &Array2<F>,
    argmax: &[u32],
    w: usize,
    h: usize,
) -> Array2<F> {
    let c = dout.ncols();
    let mut dinput = Array2::<F>::zeros((w * h, c));
    for op in 0..dout.nrows() {
        for ch in 0..c {
            let p = argmax[op * c + ch] as usize;
            dinput[[p, ch]] = dinput[[p, ch]] + dout[[op, ch]];
        }
    }
    dinput
}

/// 2x2 nearest-neighbor upsampling: output (2w * 2h, c).
pub fn upsample2x2<F: NdFloat>(input: &Array2<F>, w: usize, h: usize) -> Array2<F> {
    let c = input.ncols();
    let (ow, oh) = (2 * w, 2 * h);
    let mut out = Array2::<F>::zeros((ow * oh, c));
    for x in 0..ow {
        for y in 0..oh {
            let p = x * oh + y;
            let sp = (x / 2) * h + y / 2;
            for ch in 0..c {
                out[[p, ch]] = input[[sp, ch]];
            }
        }
    }
    out
}

pub fn upsample2x2_backward<F: NdFloat>(dout: &Array2<F>, w: usize, h: usize) -> Array2<F> {
    let c = dout.ncols();
    let oh = 2 * h;
    let mut dinput = Array2::<F>::zeros((w * h, c));
    for x in 0..2 * w {
        for y in 0..oh {
            let p = x * oh + y;
            let sp = (x / 2) * h + y / 2;
            for ch in 0..c {
                dinput[[sp, ch]] = dinput[[sp, ch]] + dout[[p, ch]];
            }
        }
    }
    dinput
}

/// ReLU applied in place; returns the activated map.
pub fn relu<F: NdFloat>(mut x: Array2<F>) -> Array2<F> {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
    x
}

/// Gradient mask of ReLU given its output.
pub fn relu_backward<F: NdFloat>(out: &Array2<F>, dout: &Array2<F>) -> Array2<F> {
    let mut dx = dout.clone();
    dx.zip_mut_with(out, |g, &o| {
        if o <= F::zero() {
            *g = F::zero();
        }
    });
    dx
}
