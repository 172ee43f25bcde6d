//! Forward and backward rules for embedding, 1-d convolution, max-pooling,
//! dense layers, activations and the class-weighted log loss.
//!
//! Shapes follow the text-sequence convention: a sequence activation is an
//! `L×D` tensor (one row per position), convolution kernels are `C×K×D` and
//! dense weights are `In×Out`.

use super::{axpy, dot, Real, Tensor};
use crate::error::{Error, Result};

/// Probability clip applied before taking logarithms in the loss.
pub const LOSS_CLIP: f64 = 1e-7;

/// Gathers one embedding row per token id.
pub fn embed_forward<T: Real>(ids: &[usize], table: &Tensor<T>) -> Result<Tensor<T>> {
    let rows = table.rows();
    let dim = table.row_len();
    let mut out = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        if id >= rows {
            return Err(Error::IdOutOfRange { id, rows });
        }
        out.extend_from_slice(table.row(id));
    }
    Tensor::from_vec(&[ids.len(), dim], out)
}

/// Scatter-adds per-position gradients back onto the embedding table.
pub fn embed_backward<T: Real>(ids: &[usize], grad_x: &Tensor<T>, grad_table: &mut Tensor<T>) {
    for (pos, &id) in ids.iter().enumerate() {
        let src = grad_x.row(pos);
        for (g, &s) in grad_table.row_mut(id).iter_mut().zip(src) {
            *g += s;
        }
    }
}

/// Valid (unpadded) stride-1 convolution along the sequence axis.
///
/// `out[i, c] = bias[c] + Σ_{k,d} kernels[c, k, d] · x[i + k, d]`
pub fn conv_forward<T: Real>(x: &Tensor<T>, kernels: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let (len, dim) = (x.rows(), x.row_len());
    let (channels, klen, kdim) = conv_dims(kernels)?;
    if kdim != dim {
        return Err(Error::Shape(format!(
            "kernel depth {kdim} does not match input width {dim}"
        )));
    }
    if bias.len() != channels {
        return Err(Error::Shape(format!(
            "conv bias has {} entries for {channels} channels",
            bias.len()
        )));
    }
    if len < klen {
        return Err(Error::Shape(format!(
            "sequence length {len} shorter than kernel length {klen}"
        )));
    }
    let out_len = len - klen + 1;
    let window = klen * dim;
    let xs = x.data();
    let mut out = Vec::with_capacity(out_len * channels);
    for i in 0..out_len {
        let patch = &xs[i * dim..i * dim + window];
        for c in 0..channels {
            let mut acc = bias[c];
            for (&w, &v) in kernels.row(c).iter().zip(patch) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
    Tensor::from_vec(&[out_len, channels], out)
}

/// Accumulates kernel, bias and (optionally) input gradients of
/// [`conv_forward`].
pub fn conv_backward<T: Real>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_kernels: &mut Tensor<T>,
    grad_bias: &mut [T],
    mut grad_x: Option<&mut Tensor<T>>,
) {
    let dim = x.row_len();
    let channels = kernels.rows();
    let window = kernels.row_len();
    let xs = x.data();
    for i in 0..grad_out.rows() {
        let g_row = grad_out.row(i);
        let patch = &xs[i * dim..i * dim + window];
        for c in 0..channels {
            let g = g_row[c];
            if g == T::zero() {
                continue;
            }
            grad_bias[c] += g;
            axpy(g, patch, grad_kernels.row_mut(c));
            if let Some(gx) = grad_x.as_deref_mut() {
                axpy(g, kernels.row(c), &mut gx.data_mut()[i * dim..i * dim + window]);
            }
        }
    }
}

fn conv_dims<T: Real>(kernels: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *kernels.shape() {
        [c, k, d] => Ok((c, k, d)),
        ref s => Err(Error::Shape(format!("conv kernels must be C×K×D, got {s:?}"))),
    }
}

/// Stride-1 max-pooling along the sequence axis.
///
/// Returns the pooled tensor and, for every output cell, the input row that
/// supplied the maximum (lowest row on ties).
pub fn maxpool_forward<T: Real>(x: &Tensor<T>, pool: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (len, channels) = (x.rows(), x.row_len());
    if pool == 0 || len < pool {
        return Err(Error::Shape(format!(
            "cannot pool {len} rows with window {pool}"
        )));
    }
    let out_len = len - pool + 1;
    let mut out = Vec::with_capacity(out_len * channels);
    let mut argmax = Vec::with_capacity(out_len * channels);
    let xs = x.data();
    for i in 0..out_len {
        for c in 0..channels {
            let mut best = i;
            let mut best_val = xs[i * channels + c];
            for r in i + 1..i + pool {
                let v = xs[r * channels + c];
                if v > best_val {
                    best = r;
                    best_val = v;
                }
            }
            out.push(best_val);
            argmax.push(best);
        }
    }
    Ok((Tensor::from_vec(&[out_len, channels], out)?, argmax))
}

/// Routes pooled gradients back to the recorded argmax rows.
pub fn maxpool_backward<T: Real>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    in_rows: usize,
) -> Tensor<T> {
    let channels = grad_out.row_len();
    let mut grad = Tensor::zeros(&[in_rows, channels]);
    let gd = grad.data_mut();
    for (cell, (&g, &src)) in grad_out.data().iter().zip(argmax).enumerate() {
        gd[src * channels + cell % channels] += g;
    }
    grad
}

/// Affine map `y = xᵀW + b` with `W` stored `In×Out`.
pub fn dense_forward<T: Real>(x: &[T], w: &Tensor<T>, b: &[T]) -> Result<Vec<T>> {
    let (fan_in, fan_out) = dense_dims(w)?;
    if x.len() != fan_in || b.len() != fan_out {
        return Err(Error::Shape(format!(
            "dense layer {fan_in}×{fan_out} applied to input {} with bias {}",
            x.len(),
            b.len()
        )));
    }
    // Accumulated in f64: with fan-in in the tens of thousands, f32 rounding
    // of the running sums would dominate the output error.
    let mut acc: Vec<f64> = b.iter().map(|v| v.as_f64()).collect();
    for (i, &xi) in x.iter().enumerate() {
        if xi != T::zero() {
            let xi = xi.as_f64();
            for (a, &wv) in acc.iter_mut().zip(w.row(i)) {
                *a += xi * wv.as_f64();
            }
        }
    }
    Ok(acc.into_iter().map(T::lit).collect())
}

/// Accumulates weight and bias gradients and returns `dL/dx`.
pub fn dense_backward<T: Real>(
    x: &[T],
    w: &Tensor<T>,
    grad_out: &[T],
    grad_w: &mut Tensor<T>,
    grad_b: &mut [T],
) -> Vec<T> {
    for (gb, &g) in grad_b.iter_mut().zip(grad_out) {
        *gb += g;
    }
    let mut grad_x = Vec::with_capacity(x.len());
    for (i, &xi) in x.iter().enumerate() {
        if xi != T::zero() {
            axpy(xi, grad_out, grad_w.row_mut(i));
        }
        grad_x.push(dot(w.row(i), grad_out));
    }
    grad_x
}

fn dense_dims<T: Real>(w: &Tensor<T>) -> Result<(usize, usize)> {
    match *w.shape() {
        [i, o] => Ok((i, o)),
        ref s => Err(Error::Shape(format!("dense weights must be In×Out, got {s:?}"))),
    }
}

#[inline]
pub fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Derivative of ReLU; the subgradient at zero is taken to be zero.
#[inline]
pub fn relu_grad<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Class-weighted binary cross-entropy on a probability.
///
/// `loss = −[w_pos · y · ln p + (1 − y) · ln(1 − p)]`, with `p` clipped to
/// `[LOSS_CLIP, 1 − LOSS_CLIP]`.
pub fn weighted_bce<T: Real>(p: T, y: u8, w_pos: T) -> T {
    let eps = T::lit(LOSS_CLIP);
    let p = p.max(eps).min(T::one() - eps);
    if y == 1 {
        -w_pos * p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// `dL/dp` of [`weighted_bce`]; zero where the clip is active.
pub fn weighted_bce_grad<T: Real>(p: T, y: u8, w_pos: T) -> T {
    let eps = T::lit(LOSS_CLIP);
    if p < eps || p > T::one() - eps {
        return T::zero();
    }
    if y == 1 {
        -w_pos / p
    } else {
        T::one() / (T::one() - p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    // Triple loop straight from the definition, used as the reference.
    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64]) -> Vec<f64> {
        let (c, kl, d) = (k.shape()[0], k.shape()[1], k.shape()[2]);
        let l = x.rows();
        let mut out = vec![0.0; (l - kl + 1) * c];
        for i in 0..l - kl + 1 {
            for ch in 0..c {
                let mut s = b[ch];
                for kk in 0..kl {
                    for dd in 0..d {
                        s += k.data()[ch * kl * d + kk * d + dd] * x.data()[(i + kk) * d + dd];
                    }
                }
                out[i * c + ch] = s;
            }
        }
        out
    }

    #[test]
    fn embedding_gathers_rows() {
        let table = t(&[3, 2], &[0.0, 0.5, 1.0, 1.5, 2.0, 2.5]);
        let out = embed_forward(&[2, 1], &table).unwrap();
        assert_eq!(out.data(), &[2.0, 2.5, 1.0, 1.5]);
        let pads = embed_forward(&[0, 0], &table).unwrap();
        assert_eq!(pads.data(), &[0.0, 0.5, 0.0, 0.5]);
        assert!(matches!(
            embed_forward(&[3], &table),
            Err(Error::IdOutOfRange { id: 3, rows: 3 })
        ));
    }

    #[test]
    fn one_hot_table_lookup() {
        let mut eye = Tensor::<f64>::zeros(&[5, 5]);
        for i in 0..5 {
            eye.row_mut(i)[i] = 1.0;
        }
        let out = embed_forward(&[3], &eye).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn conv_matches_naive_loops_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = random(&[17, 4], &mut rng);
            let k = random(&[3, 5, 4], &mut rng);
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = conv_forward(&x, &k, &b).unwrap();
            assert_eq!(fast.shape(), &[13, 3]);
            assert_eq!(fast.data(), naive_conv(&x, &k, &b).as_slice());
        }
    }

    #[test]
    fn conv_output_shape_for_default_dimensions() {
        let x = Tensor::<f32>::zeros(&[500, 10]);
        let k = Tensor::<f32>::zeros(&[32, 5, 10]);
        let out = conv_forward(&x, &k, &[0.25; 32]).unwrap();
        assert_eq!(out.shape(), &[496, 32]);
        assert!(out.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn degenerate_conv_is_scaled_slice() {
        let x = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let k = t(&[1, 1, 2], &[0.0, 2.0]);
        let out = conv_forward(&x, &k, &[1.0]).unwrap();
        assert_eq!(out.data(), &[5.0, 9.0, 13.0]);
    }

    #[test]
    fn conv_rejects_short_input_and_bad_depth() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let k = Tensor::<f64>::zeros(&[1, 3, 3]);
        assert!(conv_forward(&x, &k, &[0.0]).is_err());
        let k = Tensor::<f64>::zeros(&[1, 1, 4]);
        assert!(conv_forward(&x, &k, &[0.0]).is_err());
    }

    #[test]
    fn maxpool_shapes_and_ties() {
        let x = Tensor::<f32>::zeros(&[496, 32]);
        let (out, arg) = maxpool_forward(&x, 3).unwrap();
        assert_eq!(out.shape(), &[494, 32]);
        // constant input: every window picks its first row
        for i in 0..494 {
            assert!(arg[i * 32..(i + 1) * 32].iter().all(|&a| a == i));
        }
        let x = t(&[3, 1], &[1.0, 3.0, 2.0]);
        let (out, arg) = maxpool_forward(&x, 3).unwrap();
        assert_eq!(out.data(), &[3.0]);
        assert_eq!(arg, vec![1]);
        assert!(maxpool_forward(&t(&[2, 1], &[1.0, 2.0]), 3).is_err());
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let x = t(&[4, 1], &[1.0, 3.0, 2.0, 0.0]);
        let (_, arg) = maxpool_forward(&x, 2).unwrap();
        let g = maxpool_backward(&t(&[3, 1], &[1.0, 10.0, 100.0]), &arg, 4);
        assert_eq!(g.data(), &[0.0, 11.0, 100.0, 0.0]);
    }

    #[test]
    fn dense_identity_and_outer_product_gradient() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(dense_forward(&[3.0, -4.0], &eye, &[0.0, 0.0]).unwrap(), vec![3.0, -4.0]);
        assert!(dense_forward(&[1.0], &eye, &[0.0, 0.0]).is_err());

        let x = [1.0, 2.0, -1.0];
        let w = t(&[3, 2], &[0.5, -0.5, 1.0, 2.0, 0.0, 1.0]);
        let g = [2.0, -3.0];
        let mut gw = Tensor::zeros(&[3, 2]);
        let mut gb = vec![0.0; 2];
        let gx = dense_backward(&x, &w, &g, &mut gw, &mut gb);
        assert_eq!(gw.data(), &[2.0, -3.0, 4.0, -6.0, -2.0, 3.0]);
        assert_eq!(gb, vec![2.0, -3.0]);
        assert_eq!(gx, vec![2.5, -4.0, -3.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[8, 3], &mut rng);
        let k = random(&[2, 3, 3], &mut rng);
        let mut gk = Tensor::zeros(&[2, 3, 3]);
        let mut gb = vec![0.0; 2];
        let mut gx = Tensor::zeros(&[8, 3]);
        conv_backward(&x, &k, &Tensor::zeros(&[6, 2]), &mut gk, &mut gb, Some(&mut gx));
        assert!(gk.data().iter().chain(&gb).chain(gx.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(relu(-2.0f64), 0.0);
        assert_eq!(relu(3.0f64), 3.0);
        assert_eq!(relu_grad(0.0f64), 0.0);
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(800.0f64) <= 1.0);
        assert!(sigmoid(-30.0f32) > 0.0 && sigmoid(15.0f32) < 1.0);
    }

    #[test]
    fn weighted_loss_values() {
        let ln2 = std::f64::consts::LN_2;
        assert_abs_diff_eq!(weighted_bce(0.5, 1, 1.0), ln2, epsilon = 1e-15);
        assert_abs_diff_eq!(weighted_bce(0.5, 0, 7.0), ln2, epsilon = 1e-15);
        let w = 15311.0 / 1659.0;
        assert_abs_diff_eq!(w, 9.229, epsilon = 1e-3);
        assert_abs_diff_eq!(weighted_bce(0.5, 1, w), 6.397093, epsilon = 1e-6);
        assert!(weighted_bce(0.0f32, 1, 1.0).is_finite());
        assert!(weighted_bce(1.0f32, 0, 1.0).is_finite());
    }

    #[test]
    fn loss_gradient_matches_central_difference() {
        for &(p, y, w) in &[(0.3, 1u8, 2.5), (0.8, 0, 9.2), (0.55, 1, 1.0)] {
            let h = 1e-6;
            let fd = (weighted_bce(p + h, y, w) - weighted_bce(p - h, y, w)) / (2.0 * h);
            assert_abs_diff_eq!(weighted_bce_grad(p, y, w), fd, epsilon = 1e-6);
        }
    }
}
