//! Global pooling of a class activation map into one scalar.
//!
//! * GMP returns the map maximum and sends the whole upstream gradient to it.
//! * GAP returns the map mean and spreads the gradient evenly.
//! * SPAM runs local average pools of increasing kernel size (stride 1, no
//!   padding), takes the global max of each, and averages those maxima. Its
//!   gradient lands on the maximizing window of every pyramid step, so cells
//!   near the peak collect more of it than cells further out.
//!
//! A one-step pyramid with kernel 1 is GMP and one with kernel `N` is GAP.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Square single-channel activation map.
#[derive(Debug, Clone, PartialEq)]
pub struct CamMap<T = f32> {
    side: usize,
    values: Vec<T>,
}

impl<T: Real> CamMap<T> {
    pub fn new(side: usize, values: Vec<T>) -> Result<Self> {
        if side == 0 {
            return Err(Error::config("activation map must have side >= 1"));
        }
        if values.len() != side * side {
            return Err(Error::config(format!(
                "activation map of side {side} needs {} values, got {}",
                side * side,
                values.len()
            )));
        }
        Ok(Self { side, values })
    }

    pub fn zeros(side: usize) -> Self {
        Self {
            side,
            values: vec![T::zero(); side * side],
        }
    }

    pub fn from_fn(side: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(side * side);
        for r in 0..side {
            for c in 0..side {
                values.push(f(r, c));
            }
        }
        Self { side, values }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.side + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: T) {
        self.values[row * self.side + col] = v;
    }

    /// Largest value and its first row-major position.
    pub fn argmax(&self) -> (T, usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (self.values[best], best / self.side, best % self.side)
    }

    pub fn max_value(&self) -> T {
        self.argmax().0
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sum_f64(&self) -> f64 {
        self.values.iter().map(|v| v.as_f64()).sum()
    }

    pub fn cast<U: Real>(&self) -> CamMap<U> {
        CamMap {
            side: self.side,
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Kernel sizes of the SPAM average-pooling pyramid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpamConfig {
    kernels: Vec<usize>,
}

impl SpamConfig {
    /// Kernels must be non-empty, at least 1 and strictly increasing.
    pub fn new(kernels: Vec<usize>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::config("SPAM pyramid needs at least one step"));
        }
        if kernels[0] == 0 {
            return Err(Error::config("SPAM kernel sizes must be >= 1"));
        }
        if kernels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "SPAM kernel sizes must be strictly increasing, got {kernels:?}"
            )));
        }
        Ok(Self { kernels })
    }

    /// The `{1, 2, 5, N}` pyramid, dropping steps that do not fit an `N x N` map.
    pub fn default_for(side: usize) -> Self {
        Self::clamped(&[1, 2, 5, side], side)
    }

    /// Keeps the kernels that fit an `N x N` map, warning about the rest.
    pub fn clamped(kernels: &[usize], side: usize) -> Self {
        let mut kept: Vec<usize> = Vec::new();
        for &k in kernels {
            if k == 0 || k > side {
                eprintln!("warning: SPAM kernel {k} does not fit a {side}x{side} map, dropping it");
                continue;
            }
            if kept.last().is_some_and(|&last| last >= k) {
                continue;
            }
            kept.push(k);
        }
        if kept.is_empty() {
            kept.push(side.max(1));
        }
        Self { kernels: kept }
    }

    pub fn kernels(&self) -> &[usize] {
        &self.kernels
    }

    pub fn steps(&self) -> usize {
        self.kernels.len()
    }

    pub fn validate_for(&self, side: usize) -> Result<()> {
        match self.kernels.iter().find(|&&k| k > side) {
            Some(k) => Err(Error::config(format!(
                "SPAM kernel {k} exceeds activation map side {side}"
            ))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for SpamConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.kernels.iter().map(|k| k.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PoolingKind {
    Gmp,
    Gap,
    Spam(SpamConfig),
}

impl PoolingKind {
    pub fn name(&self) -> &'static str {
        match self {
            PoolingKind::Gmp => "gmp",
            PoolingKind::Gap => "gap",
            PoolingKind::Spam(_) => "spam",
        }
    }
}

/// Pooling family without a pyramid attached, as named on command lines and in
/// config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolingName {
    Gmp,
    Gap,
    Spam,
}

impl FromStr for PoolingName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gmp" | "max" => Ok(PoolingName::Gmp),
            "gap" | "avg" | "average" => Ok(PoolingName::Gap),
            "spam" => Ok(PoolingName::Spam),
            other => Err(Error::config(format!("unknown pooling kind '{other}' (expected gmp, gap or spam)"))),
        }
    }
}

impl fmt::Display for PoolingName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingName::Gmp => "gmp",
            PoolingName::Gap => "gap",
            PoolingName::Spam => "spam",
        })
    }
}

/// Maximizing window of one pyramid step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PyramidStep {
    pub kernel: usize,
    pub row: usize,
    pub col: usize,
}

/// What a pooling forward pass remembers for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolContext {
    pub kind: PoolingKind,
    pub side: usize,
    /// GMP: the argmax as a kernel-1 window. GAP: the whole map. SPAM: one
    /// entry per pyramid step.
    pub steps: Vec<PyramidStep>,
}

pub fn gmp_forward<T: Real>(cam: &CamMap<T>) -> (T, PoolContext) {
    let (v, row, col) = cam.argmax();
    (
        v,
        PoolContext {
            kind: PoolingKind::Gmp,
            side: cam.side(),
            steps: vec![PyramidStep { kernel: 1, row, col }],
        },
    )
}

/// `g` at the recorded maximum, zero elsewhere.
pub fn gmp_backward<T: Real>(ctx: &PoolContext, g: T) -> CamMap<T> {
    let mut out = CamMap::zeros(ctx.side);
    let step = ctx.steps[0];
    out.set(step.row, step.col, g);
    out
}

pub fn gap_forward<T: Real>(cam: &CamMap<T>) -> (T, PoolContext) {
    let n = cam.side();
    let mean = window_sum(cam, 0, 0, n) / (n * n) as f64;
    (
        T::from_f64(mean),
        PoolContext {
            kind: PoolingKind::Gap,
            side: n,
            steps: vec![PyramidStep { kernel: n, row: 0, col: 0 }],
        },
    )
}

/// `g / N^2` everywhere.
pub fn gap_backward<T: Real>(ctx: &PoolContext, g: T) -> CamMap<T> {
    let n = ctx.side;
    let share = g / T::from_f64((n * n) as f64);
    CamMap::new(n, vec![share; n * n]).expect("side >= 1")
}

/// Sum of a `k x k` window in row-major order with a 64-bit accumulator.
fn window_sum<T: Real>(cam: &CamMap<T>, row: usize, col: usize, k: usize) -> f64 {
    let n = cam.side();
    let mut acc = 0.0f64;
    for r in row..row + k {
        for v in &cam.values()[r * n + col..r * n + col + k] {
            acc += v.as_f64();
        }
    }
    acc
}

/// Stride-1, unpadded `K x K` mean filter: side `N - K + 1`.
pub fn local_avg_pool<T: Real>(cam: &CamMap<T>, kernel: usize) -> Result<CamMap<T>> {
    let n = cam.side();
    if kernel == 0 || kernel > n {
        return Err(Error::config(format!(
            "local average kernel {kernel} out of range 1..={n}"
        )));
    }
    let m = n - kernel + 1;
    let area = (kernel * kernel) as f64;
    Ok(CamMap::from_fn(m, |r, c| T::from_f64(window_sum(cam, r, c, kernel) / area)))
}

/// Adjoint of [`local_avg_pool`]: every window hands `d / K^2` to each of its cells.
pub fn local_avg_pool_backward<T: Real>(d_out: &CamMap<T>, side: usize, kernel: usize) -> Result<CamMap<T>> {
    if kernel == 0 || kernel > side || d_out.side() != side - kernel + 1 {
        return Err(Error::config(format!(
            "local average backward: gradient of side {} does not match side {side} with kernel {kernel}",
            d_out.side()
        )));
    }
    let area = T::from_f64((kernel * kernel) as f64);
    let mut out = CamMap::zeros(side);
    for r in 0..d_out.side() {
        for c in 0..d_out.side() {
            let share = d_out.get(r, c) / area;
            for y in r..r + kernel {
                for x in c..c + kernel {
                    let cur = out.get(y, x);
                    out.set(y, x, cur + share);
                }
            }
        }
    }
    Ok(out)
}

/// Mean over pyramid steps of the max of each local average pool.
pub fn spam_forward<T: Real>(cam: &CamMap<T>, cfg: &SpamConfig) -> Result<(T, PoolContext)> {
    let n = cam.side();
    cfg.validate_for(n)?;
    let mut steps = Vec::with_capacity(cfg.steps());
    let mut acc = 0.0f64;
    for &k in cfg.kernels() {
        let pooled = local_avg_pool(cam, k)?;
        let (v, row, col) = pooled.argmax();
        acc += v.as_f64();
        steps.push(PyramidStep { kernel: k, row, col });
    }
    let out = acc / cfg.steps() as f64;
    Ok((
        T::from_f64(out),
        PoolContext {
            kind: PoolingKind::Spam(cfg.clone()),
            side: n,
            steps,
        },
    ))
}

/// Closed-form SPAM gradient: each cell collects `g / (P * K_p^2)` from every
/// step whose maximizing `K_p x K_p` window covers it.
pub fn spam_backward<T: Real>(ctx: &PoolContext, g: T) -> CamMap<T> {
    let p = ctx.steps.len();
    let mut out = CamMap::zeros(ctx.side);
    for step in &ctx.steps {
        let share = g / T::from_f64((p * step.kernel * step.kernel) as f64);
        for y in step.row..step.row + step.kernel {
            for x in step.col..step.col + step.kernel {
                let cur = out.get(y, x);
                out.set(y, x, cur + share);
            }
        }
    }
    out
}

/// Forward pass for any pooling kind.
pub fn pool_forward<T: Real>(kind: &PoolingKind, cam: &CamMap<T>) -> Result<(T, PoolContext)> {
    if cam.side() == 0 {
        return Err(Error::config("cannot pool an empty map"));
    }
    match kind {
        PoolingKind::Gmp => Ok(gmp_forward(cam)),
        PoolingKind::Gap => Ok(gap_forward(cam)),
        PoolingKind::Spam(cfg) => spam_forward(cam, cfg),
    }
}

/// Backward pass for whatever kind produced `ctx`.
pub fn pool_backward<T: Real>(ctx: &PoolContext, g: T) -> CamMap<T> {
    match ctx.kind {
        PoolingKind::Gmp => gmp_backward(ctx, g),
        PoolingKind::Gap => gap_backward(ctx, g),
        PoolingKind::Spam(_) => spam_backward(ctx, g),
    }
}

/// Gradient map of a pooling layer for a synthetic unit-peak Gaussian bump
/// centred at `peak`, scaled so its largest value is 1.
pub fn gradient_field(kind: &PoolingKind, side: usize, peak: (usize, usize)) -> Result<CamMap<f64>> {
    if side == 0 || peak.0 >= side || peak.1 >= side {
        return Err(Error::config(format!(
            "peak {peak:?} outside a {side}x{side} map"
        )));
    }
    let sigma = (side as f64 / 4.0).max(0.5);
    let cam = CamMap::from_fn(side, |r, c| {
        let dy = r as f64 - peak.0 as f64;
        let dx = c as f64 - peak.1 as f64;
        (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
    });
    let (_, ctx) = pool_forward(kind, &cam)?;
    let mut grad = pool_backward(&ctx, 1.0);
    let top = grad.max_value();
    if top > 0.0 {
        for v in grad.values_mut() {
            *v /= top;
        }
    }
    Ok(grad)
}
