//! Oracles shared by the property tests and the acceptance target.
#![allow(dead_code)]

use spamcam::nn::{conv2d_backward, conv2d_forward};
use spamcam::pooling::{local_avg_pool, local_avg_pool_backward, pool_forward, PoolContext};
use spamcam::rng::SplitMix64;
use spamcam::{CamMap, LayerGeometry, PixelBox, PoolingKind, SpamConfig, Tensor};

pub fn random_map(side: usize, rng: &mut SplitMix64) -> CamMap<f64> {
    CamMap::from_fn(side, |_, _| rng.uniform(-1.0, 1.0))
}

/// Strictly increasing kernel list drawn from `1..=side`.
pub fn random_pyramid(side: usize, rng: &mut SplitMix64) -> SpamConfig {
    let mut ks: Vec<usize> = (1..=side).filter(|_| rng.below(2) == 0).collect();
    if ks.is_empty() {
        ks.push(1 + rng.below(side as u64) as usize);
    }
    SpamConfig::new(ks).unwrap()
}

/// Smallest gap between the best and second-best window of any max that
/// the pooled value takes. Perturbations well below it cannot flip a max.
pub fn max_margin(kind: &PoolingKind, cam: &CamMap<f64>) -> f64 {
    let kernels: Vec<usize> = match kind {
        PoolingKind::Gmp => vec![1],
        PoolingKind::Gap => return f64::INFINITY,
        PoolingKind::Spam(cfg) => cfg.kernels().to_vec(),
    };
    let mut margin = f64::INFINITY;
    for k in kernels {
        let mut v: Vec<f64> = local_avg_pool(cam, k).unwrap().values().to_vec();
        if v.len() < 2 {
            continue;
        }
        v.sort_by(|a, b| b.total_cmp(a));
        margin = margin.min(v[0] - v[1]);
    }
    margin
}

/// Largest relative error between `analytic` and central differences of
/// the pooled value, over every cell.
pub fn fd_relative_error(kind: &PoolingKind, cam: &CamMap<f64>, analytic: &CamMap<f64>, h: f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..cam.values().len() {
        let mut up = cam.clone();
        up.values_mut()[i] += h;
        let mut dn = cam.clone();
        dn.values_mut()[i] -= h;
        let numeric = (pool_forward(kind, &up).unwrap().0 - pool_forward(kind, &dn).unwrap().0) / (2.0 * h);
        let a = analytic.values()[i];
        let scale = a.abs().max(numeric.abs());
        if scale > 0.0 {
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

/// SPAM backward rebuilt from its parts: route `g / P` to each step's max
/// window in the pooled map, then push it back through that step's average
/// pool and sum over steps.
pub fn spam_backward_composed(ctx: &PoolContext, cam: &CamMap<f64>, g: f64) -> CamMap<f64> {
    let n = cam.side();
    let p = ctx.steps.len() as f64;
    let mut total = CamMap::zeros(n);
    for step in &ctx.steps {
        let pooled = local_avg_pool(cam, step.kernel).unwrap();
        let (_, row, col) = pooled.argmax();
        let mut d = CamMap::zeros(pooled.side());
        d.set(row, col, g / p);
        let back = local_avg_pool_backward(&d, n, step.kernel).unwrap();
        for (t, b) in total.values_mut().iter_mut().zip(back.values()) {
            *t += b;
        }
    }
    total
}

/// Random conv-only stack with `k` in {1,3,5,7}, `s` in {1,2}, `p` in
/// {0,1,2}, listed input side first, plus an input side that leaves an
/// output of at least one cell.
pub fn random_geometry(rng: &mut SplitMix64) -> (Vec<LayerGeometry>, usize) {
    loop {
        let depth = 1 + rng.below(5) as usize;
        let layers: Vec<LayerGeometry> = (0..depth)
            .map(|_| {
                let k = [1, 3, 5, 7][rng.below(4) as usize];
                let s = 1 + rng.below(2) as usize;
                let p = rng.below(3) as usize;
                LayerGeometry::conv(k, s, p)
            })
            .collect();
        let side = 8 + rng.below(40) as usize;
        let mut e = side;
        let mut ok = true;
        for g in &layers {
            match g.output_extent(e) {
                Ok(o) => e = o,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return (layers, side);
        }
    }
}

/// Bounding box of the nonzero input gradient of output cell `(cx, cy)`
/// through single-channel all-ones convolutions on an all-ones image. A
/// max-pool layer reads the same window as a conv of its geometry, so it is
/// replaced by one.
pub fn gradient_support(layers: &[LayerGeometry], side: usize, cx: usize, cy: usize) -> Option<PixelBox> {
    let layers: Vec<LayerGeometry> = layers.iter().map(|g| LayerGeometry::conv(g.kernel, g.stride, g.padding)).collect();
    let mut inputs = Vec::new();
    let mut x = Tensor::<f64>::full(&[1, side, side], 1.0);
    let bias = Tensor::<f64>::zeros(&[1]);
    for g in &layers {
        let w = Tensor::<f64>::full(&[1, 1, g.kernel, g.kernel], 1.0);
        let y = conv2d_forward(&x, &w, &bias, g).unwrap();
        inputs.push(x);
        x = y;
    }
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let mut d = Tensor::<f64>::zeros(&[1, h, w]);
    d.data_mut()[cy * w + cx] = 1.0;
    for (g, input) in layers.iter().zip(&inputs).rev() {
        let wt = Tensor::<f64>::full(&[1, 1, g.kernel, g.kernel], 1.0);
        d = conv2d_backward(input, &wt, g, &d).unwrap().0;
    }
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..side {
        for xx in 0..side {
            if d.data()[y * side + xx] != 0.0 {
                x0 = x0.min(xx);
                y0 = y0.min(y);
                x1 = x1.max(xx + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    (x0 != usize::MAX).then(|| PixelBox::new(x0, y0, x1, y1).unwrap())
}

/// Output side of `layers` on a square input.
pub fn output_side(layers: &[LayerGeometry], side: usize) -> usize {
    layers.iter().fold(side, |e, g| g.output_extent(e).unwrap())
}
