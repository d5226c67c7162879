//! Small register-blocked matrix kernels for the convolution layers.
//!
//! `gemm_acc` keeps a tile of `C` in registers and walks the shared dimension
//! in ascending order, so every output element sees its products in exactly
//! the order a naive triple loop would add them.

use crate::tensor::Real;

const MR: usize = 4;
const NR: usize = 16;
const HALF: usize = NR / 2;

/// `c[m x n] += a[m x kd] * b[kd x n]`, all row-major.
pub(crate) fn gemm_acc<T: Real>(m: usize, n: usize, kd: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_acc_lda(m, n, kd, a, kd, b, c)
}

/// [`gemm_acc`] where row `i` of `a` starts at `a[i * lda]`.
pub(crate) fn gemm_acc_lda<T: Real>(
    m: usize,
    n: usize,
    kd: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    c: &mut [T],
) {
    assert!(lda >= kd && b.len() >= kd * n && c.len() >= m * n);
    assert!(m == 0 || a.len() >= (m - 1) * lda + kd);
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { gemm_avx2(m, n, kd, a, lda, b, c) };
            return;
        }
    }
    gemm_generic(m, n, kd, a, lda, b, c)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_avx2<T: Real>(m: usize, n: usize, kd: usize, a: &[T], lda: usize, b: &[T], c: &mut [T]) {
    gemm_generic(m, n, kd, a, lda, b, c)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_generic<T: Real>(m: usize, n: usize, kd: usize, a: &[T], lda: usize, b: &[T], c: &mut [T]) {
    // Column panels outermost so a `kd x NR` slice of `b` stays cached
    // while every row block consumes it.
    let mut j0 = 0;
    while j0 < n {
        let w = if n - j0 >= NR {
            NR
        } else if n - j0 >= NR / 2 {
            NR / 2
        } else {
            n - j0
        };
        let mut i0 = 0;
        while i0 < m {
            let rows = if m - i0 >= MR { MR } else { 1 };
            match (rows, w) {
                (MR, NR) => tile::<T, MR, NR>(i0, j0, n, kd, a, lda, b, c),
                (MR, HALF) => tile::<T, MR, HALF>(i0, j0, n, kd, a, lda, b, c),
                (MR, _) => tile_edge::<T, MR>(i0, j0, w, n, kd, a, lda, b, c),
                (_, NR) => tile::<T, 1, NR>(i0, j0, n, kd, a, lda, b, c),
                (_, HALF) => tile::<T, 1, HALF>(i0, j0, n, kd, a, lda, b, c),
                _ => tile_edge::<T, 1>(i0, j0, w, n, kd, a, lda, b, c),
            }
            i0 += rows;
        }
        j0 += w;
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn tile<T: Real, const R: usize, const W: usize>(
    i0: usize,
    j0: usize,
    n: usize,
    kd: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    c: &mut [T],
) {
    let mut acc = [[T::zero(); W]; R];
    for (r, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&c[(i0 + r) * n + j0..(i0 + r) * n + j0 + W]);
    }
    let a_rows: [&[T]; R] = std::array::from_fn(|r| &a[(i0 + r) * lda..(i0 + r) * lda + kd]);
    for k in 0..kd {
        let brow: &[T; W] = b[k * n + j0..k * n + j0 + W].try_into().expect("tile width");
        for r in 0..R {
            let av = a_rows[r][k];
            for l in 0..W {
                acc[r][l] = acc[r][l] + av * brow[l];
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        c[(i0 + r) * n + j0..(i0 + r) * n + j0 + W].copy_from_slice(row);
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn tile_edge<T: Real, const R: usize>(
    i0: usize,
    j0: usize,
    w: usize,
    n: usize,
    kd: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    c: &mut [T],
) {
    let mut acc = [[T::zero(); NR]; R];
    for (r, row) in acc.iter_mut().enumerate() {
        row[..w].copy_from_slice(&c[(i0 + r) * n + j0..(i0 + r) * n + j0 + w]);
    }
    for k in 0..kd {
        let brow = &b[k * n + j0..k * n + j0 + w];
        for (r, row) in acc.iter_mut().enumerate() {
            let av = a[(i0 + r) * lda + k];
            for (acc_l, &bv) in row[..w].iter_mut().zip(brow) {
                *acc_l = *acc_l + av * bv;
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        c[(i0 + r) * n + j0..(i0 + r) * n + j0 + w].copy_from_slice(&row[..w]);
    }
}
