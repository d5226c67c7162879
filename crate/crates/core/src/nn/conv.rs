//! 2-D convolution over `C x H x W` inputs, lowered to im2col plus a
//! blocked matrix product.

use super::gemm::{gemm_acc, gemm_acc_lda};

const DW_BLOCK: usize = 512;
use crate::error::{Error, Result};
use crate::tensor::{LayerGeometry, LayerKind, Real, Tensor};

pub(crate) struct ConvDims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
    pub ho: usize,
    pub wo: usize,
}

pub(crate) fn conv_dims<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &LayerGeometry,
) -> Result<ConvDims> {
    if geom.kind != LayerKind::Conv {
        return Err(Error::config("conv2d called with a non-conv geometry"));
    }
    if input.rank() != 3 || weights.rank() != 4 || bias.rank() != 1 {
        return Err(Error::config(format!(
            "conv2d expects CxHxW input, FxCxkxk weights and F bias, got {:?}, {:?}, {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let ws = weights.shape();
    let (f, k) = (ws[0], ws[2]);
    if ws[1] != c || ws[2] != geom.kernel || ws[3] != geom.kernel || bias.shape()[0] != f {
        return Err(Error::config(format!(
            "conv2d weights {:?} / bias {:?} do not match {c} input channels and kernel {}",
            ws,
            bias.shape(),
            geom.kernel
        )));
    }
    let ho = geom.output_extent(h)?;
    let wo = geom.output_extent(w)?;
    Ok(ConvDims {
        c,
        h,
        w,
        f,
        k,
        s: geom.stride,
        p: geom.padding,
        ho,
        wo,
    })
}

/// Output indices `j` in `0..out_len` for which `j * stride + offset` lands
/// inside `0..in_len`.
#[inline]
pub(crate) fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let last = in_len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last / s + 1).min(out_len as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

/// Unrolls the input into a `(C*k*k) x (Ho*Wo)` matrix whose row `(c,u,v)`
/// holds the input value each output position multiplies with tap `(c,u,v)`,
/// zero where the tap falls in the padding.
fn im2col<T: Real>(x: &[T], d: &ConvDims) -> Vec<T> {
    let n = d.ho * d.wo;
    let mut cols = vec![T::zero(); d.c * d.k * d.k * n];
    for c in 0..d.c {
        let in_plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for u in 0..d.k {
            let (i_lo, i_hi) = valid_range(d.ho, d.h, d.s, u as isize - d.p as isize);
            for v in 0..d.k {
                let row = (c * d.k + u) * d.k + v;
                let dst = &mut cols[row * n..(row + 1) * n];
                let off = v as isize - d.p as isize;
                let (j_lo, j_hi) = valid_range(d.wo, d.w, d.s, off);
                if j_lo >= j_hi {
                    continue;
                }
                let start = (j_lo as isize * d.s as isize + off) as usize;
                for i in i_lo..i_hi {
                    let iy = i * d.s + u - d.p;
                    let src = &in_plane[iy * d.w + start..(iy + 1) * d.w];
                    let out = &mut dst[i * d.wo + j_lo..i * d.wo + j_hi];
                    if d.s == 1 {
                        out.copy_from_slice(&src[..j_hi - j_lo]);
                    } else {
                        for (o, &v) in out.iter_mut().zip(src.iter().step_by(d.s)) {
                            *o = v;
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds column rows back onto the input grid.
fn col2im<T: Real>(cols: &[T], d: &ConvDims) -> Vec<T> {
    let n = d.ho * d.wo;
    let mut x = vec![T::zero(); d.c * d.h * d.w];
    for c in 0..d.c {
        let in_plane = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for u in 0..d.k {
            let (i_lo, i_hi) = valid_range(d.ho, d.h, d.s, u as isize - d.p as isize);
            for v in 0..d.k {
                let row = (c * d.k + u) * d.k + v;
                let src = &cols[row * n..(row + 1) * n];
                let off = v as isize - d.p as isize;
                let (j_lo, j_hi) = valid_range(d.wo, d.w, d.s, off);
                if j_lo >= j_hi {
                    continue;
                }
                let start = (j_lo as isize * d.s as isize + off) as usize;
                for i in i_lo..i_hi {
                    let iy = i * d.s + u - d.p;
                    let dst = &mut in_plane[iy * d.w + start..(iy + 1) * d.w];
                    let g = &src[i * d.wo + j_lo..i * d.wo + j_hi];
                    if d.s == 1 {
                        for (o, &gv) in dst[..g.len()].iter_mut().zip(g) {
                            *o = *o + gv;
                        }
                    } else {
                        for (o, &gv) in dst.iter_mut().step_by(d.s).zip(g) {
                            *o = *o + gv;
                        }
                    }
                }
            }
        }
    }
    x
}

/// `out[f,i,j] = bias[f] + sum_{c,u,v} input[c, i*s-p+u, j*s-p+v] * weights[f,c,u,v]`,
/// reading out-of-bounds input as zero. Terms are added in `(c,u,v)` order.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &LayerGeometry,
) -> Result<Tensor<T>> {
    let d = conv_dims(input, weights, bias, geom)?;
    input.ensure_finite("conv2d_forward input")?;

    let n = d.ho * d.wo;
    let kd = d.c * d.k * d.k;
    let cols = im2col(input.data(), &d);
    let mut out = vec![T::zero(); d.f * n];
    for (plane, &b) in out.chunks_mut(n).zip(bias.data()) {
        plane.fill(b);
    }
    gemm_acc(d.f, n, kd, weights.data(), &cols, &mut out);
    Tensor::from_vec(&[d.f, d.ho, d.wo], out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    geom: &LayerGeometry,
    d_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (d_in, d_w, d_b) = conv2d_backward_impl(input, weights, geom, d_out, true)?;
    Ok((d_in.expect("input gradient requested"), d_w, d_b))
}

pub(crate) fn conv2d_backward_impl<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    geom: &LayerGeometry,
    d_out: &Tensor<T>,
    want_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let bias_shape = Tensor::<T>::zeros(&[weights.shape().first().copied().unwrap_or(1).max(1)]);
    let d = conv_dims(input, weights, &bias_shape, geom)?;
    if d_out.shape() != [d.f, d.ho, d.wo] {
        return Err(Error::config(format!(
            "conv2d_backward: upstream gradient {:?} does not match output {:?}",
            d_out.shape(),
            [d.f, d.ho, d.wo]
        )));
    }

    let n = d.ho * d.wo;
    let kd = d.c * d.k * d.k;
    let g = d_out.data();

    let d_b: Vec<T> = g
        .chunks(n)
        .map(|plane| T::from_f64(plane.iter().map(|v| v.as_f64()).sum()))
        .collect();

    // dW^T = cols * g^T, summed over output positions in blocks whose
    // partial products are flushed into 64-bit accumulators.
    let cols = im2col(input.data(), &d);
    let mut g_t = vec![T::zero(); n * d.f];
    for f in 0..d.f {
        for (j, &v) in g[f * n..(f + 1) * n].iter().enumerate() {
            g_t[j * d.f + f] = v;
        }
    }
    let mut dw_t = vec![0.0f64; kd * d.f];
    let mut block = vec![T::zero(); kd * d.f];
    let mut j0 = 0;
    while j0 < n {
        let len = DW_BLOCK.min(n - j0);
        block.fill(T::zero());
        gemm_acc_lda(kd, d.f, len, &cols[j0..], n, &g_t[j0 * d.f..], &mut block);
        for (acc, &v) in dw_t.iter_mut().zip(&block) {
            *acc += v.as_f64();
        }
        j0 += len;
    }
    let mut d_w = vec![T::zero(); d.f * kd];
    for f in 0..d.f {
        for r in 0..kd {
            d_w[f * kd + r] = T::from_f64(dw_t[r * d.f + f]);
        }
    }

    let d_in = if want_input_grad {
        let wt = weights.data();
        let mut w_t = vec![T::zero(); kd * d.f];
        for f in 0..d.f {
            for r in 0..kd {
                w_t[r * d.f + f] = wt[f * kd + r];
            }
        }
        let mut d_cols = vec![T::zero(); kd * n];
        gemm_acc(kd, n, d.f, &w_t, g, &mut d_cols);
        Some(Tensor::from_vec(input.shape(), col2im(&d_cols, &d))?)
    } else {
        None
    };

    Ok((
        d_in,
        Tensor::from_vec(weights.shape(), d_w)?,
        Tensor::from_vec(&[d.f], d_b)?,
    ))
}
