//! The CAM network: a small convolutional backbone, a 1x1 convolution down
//! to a single activation map, global pooling and a two-logit softmax head.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::{conv2d_backward_impl, conv2d_forward, maxpool_backward, maxpool_forward, relu, relu_backward, softmax2_xent, MaxPoolIndices};
use crate::pooling::{pool_backward, pool_forward, CamMap, PoolContext, PoolingKind, PoolingName, SpamConfig};
use crate::rng::SplitMix64;
use crate::tensor::{LayerGeometry, LayerKind, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    Conv { geom: LayerGeometry, out_channels: usize, relu: bool },
    MaxPool { geom: LayerGeometry },
}

impl LayerSpec {
    pub fn conv(kernel: usize, stride: usize, padding: usize, out_channels: usize, relu: bool) -> Self {
        LayerSpec::Conv {
            geom: LayerGeometry::conv(kernel, stride, padding),
            out_channels,
            relu,
        }
    }

    pub fn maxpool(kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::MaxPool {
            geom: LayerGeometry::maxpool(kernel, stride, padding),
        }
    }

    pub fn geometry(&self) -> LayerGeometry {
        match *self {
            LayerSpec::Conv { geom, .. } | LayerSpec::MaxPool { geom } => geom,
        }
    }
}

/// Network layout: input shape, backbone, CAM layer and pooling.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetConfig {
    /// `(channels, height, width)`.
    pub input: (usize, usize, usize),
    pub backbone: Vec<LayerSpec>,
    /// Number of CAM channels; one per positive class.
    pub cam_channels: usize,
    pub pooling: PoolingKind,
}

impl NetConfig {
    /// FC-less LeNet-style backbone for 128x128 single-digit canvases.
    /// The CAM comes out at 11x11.
    pub fn mnist128(pooling: PoolingName) -> Self {
        let backbone = vec![
            LayerSpec::conv(5, 1, 0, 8, true),
            LayerSpec::maxpool(2, 2, 0),
            LayerSpec::conv(5, 1, 0, 16, true),
            LayerSpec::maxpool(2, 2, 0),
            LayerSpec::conv(3, 1, 0, 32, true),
            LayerSpec::maxpool(2, 2, 0),
            LayerSpec::conv(3, 1, 0, 32, true),
        ];
        Self::with_default_pyramid((1, 128, 128), backbone, pooling).expect("mnist128 layout is valid")
    }

    /// Builds a config, resolving SPAM to the default `{1, 2, 5, N}` pyramid.
    pub fn with_default_pyramid(input: (usize, usize, usize), backbone: Vec<LayerSpec>, pooling: PoolingName) -> Result<Self> {
        let mut cfg = Self {
            input,
            backbone,
            cam_channels: 1,
            pooling: PoolingKind::Gmp,
        };
        let n = cfg.cam_side()?;
        cfg.pooling = match pooling {
            PoolingName::Gmp => PoolingKind::Gmp,
            PoolingName::Gap => PoolingKind::Gap,
            PoolingName::Spam => PoolingKind::Spam(SpamConfig::default_for(n)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cam_geometry(&self) -> LayerGeometry {
        LayerGeometry::conv(1, 1, 0)
    }

    /// Spatial shapes `(channels, height, width)` after every backbone layer.
    pub fn shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let (mut c, mut h, mut w) = self.input;
        let mut out = Vec::with_capacity(self.backbone.len());
        for (i, layer) in self.backbone.iter().enumerate() {
            let geom = layer.geometry();
            let ctx = |e: Error| Error::config(format!("backbone layer {i}: {e}"));
            h = geom.output_extent(h).map_err(ctx)?;
            w = geom.output_extent(w).map_err(ctx)?;
            if let LayerSpec::Conv { out_channels, .. } = layer {
                c = *out_channels;
            }
            out.push((c, h, w));
        }
        Ok(out)
    }

    /// Side `N` of the square activation map.
    pub fn cam_side(&self) -> Result<usize> {
        let (_, h, w) = self.shapes()?.last().copied().unwrap_or(self.input);
        if h != w {
            return Err(Error::config(format!("activation map is {h}x{w}, expected square")));
        }
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config("input extents must be positive"));
        }
        for layer in &self.backbone {
            layer.geometry().validate()?;
            if let LayerSpec::Conv { geom, out_channels, .. } = layer {
                if geom.kind != LayerKind::Conv || *out_channels == 0 {
                    return Err(Error::config("conv layers need a conv geometry and >= 1 output channel"));
                }
            }
            if let LayerSpec::MaxPool { geom } = layer {
                if geom.kind != LayerKind::MaxPool {
                    return Err(Error::config("maxpool layers need a maxpool geometry"));
                }
            }
        }
        if self.cam_channels != 1 {
            return Err(Error::config("exactly one CAM channel (single positive class) is supported"));
        }
        let n = self.cam_side()?;
        if n < 2 {
            return Err(Error::config(format!("activation map side {n} is below 2")));
        }
        if let PoolingKind::Spam(cfg) = &self.pooling {
            cfg.validate_for(n)?;
        }
        Ok(())
    }

    /// Geometries from the CAM layer down to the input, as walked by
    /// receptive-field backprojection.
    pub fn geometries_cam_to_input(&self) -> Vec<LayerGeometry> {
        let mut out = vec![self.cam_geometry()];
        out.extend(self.backbone.iter().rev().map(|l| l.geometry()));
        out
    }

    /// Shapes of every parameter tensor, in [`Params`] order.
    pub fn param_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::new();
        let mut c = self.input.0;
        for layer in &self.backbone {
            if let LayerSpec::Conv { geom, out_channels, .. } = layer {
                shapes.push(vec![*out_channels, c, geom.kernel, geom.kernel]);
                shapes.push(vec![*out_channels]);
                c = *out_channels;
            }
        }
        shapes.push(vec![self.cam_channels, c, 1, 1]);
        shapes.push(vec![self.cam_channels]);
        shapes.push(vec![2]);
        shapes.push(vec![2]);
        Ok(shapes)
    }

    /// Canonical `key = value` text, one layer per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let (c, h, w) = self.input;
        let _ = writeln!(s, "input = {c}x{h}x{w}");
        for layer in &self.backbone {
            match layer {
                LayerSpec::Conv { geom, out_channels, relu } => {
                    let _ = writeln!(
                        s,
                        "layer = conv k={} s={} p={} out={}{}",
                        geom.kernel,
                        geom.stride,
                        geom.padding,
                        out_channels,
                        if *relu { " relu" } else { "" }
                    );
                }
                LayerSpec::MaxPool { geom } => {
                    let _ = writeln!(s, "layer = maxpool k={} s={} p={}", geom.kernel, geom.stride, geom.padding);
                }
            }
        }
        let _ = writeln!(s, "cam = conv k=1 s=1 p=0 out={}", self.cam_channels);
        match &self.pooling {
            PoolingKind::Spam(cfg) => {
                let _ = writeln!(s, "pooling = spam {cfg}");
            }
            other => {
                let _ = writeln!(s, "pooling = {}", other.name());
            }
        }
        s
    }

    /// Parses [`NetConfig::to_text`] output. Lines with other keys are ignored
    /// so the block can share a file with metadata.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut input = None;
        let mut backbone = Vec::new();
        let mut cam_channels = None;
        let mut pooling = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::format(format!("net config line {}: {msg}: '{line}'", lineno + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "input" => {
                    let dims: Vec<usize> = value
                        .split('x')
                        .map(|d| d.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("bad input extents"))?;
                    if dims.len() != 3 {
                        return Err(bad("input needs CxHxW"));
                    }
                    input = Some((dims[0], dims[1], dims[2]));
                }
                "layer" | "cam" => {
                    let mut parts = value.split_whitespace();
                    let kind = parts.next().ok_or_else(|| bad("missing layer kind"))?;
                    let (mut k, mut s, mut p, mut out, mut act) = (None, None, None, None, false);
                    for part in parts {
                        if part == "relu" {
                            act = true;
                            continue;
                        }
                        let (name, v) = part.split_once('=').ok_or_else(|| bad("bad layer field"))?;
                        let v: usize = v.parse().map_err(|_| bad("bad layer number"))?;
                        match name {
                            "k" => k = Some(v),
                            "s" => s = Some(v),
                            "p" => p = Some(v),
                            "out" => out = Some(v),
                            _ => return Err(bad("unknown layer field")),
                        }
                    }
                    let (k, s, p) = (
                        k.ok_or_else(|| bad("missing k"))?,
                        s.ok_or_else(|| bad("missing s"))?,
                        p.ok_or_else(|| bad("missing p"))?,
                    );
                    match (key, kind) {
                        ("layer", "conv") => backbone.push(LayerSpec::conv(k, s, p, out.ok_or_else(|| bad("missing out"))?, act)),
                        ("layer", "maxpool") => backbone.push(LayerSpec::maxpool(k, s, p)),
                        ("cam", "conv") => {
                            if (k, s, p) != (1, 1, 0) {
                                return Err(bad("CAM layer must be a 1x1 stride-1 convolution"));
                            }
                            cam_channels = Some(out.ok_or_else(|| bad("missing out"))?);
                        }
                        _ => return Err(bad("unknown layer kind")),
                    }
                }
                "pooling" => {
                    let mut parts = value.split_whitespace();
                    let name: PoolingName = parts.next().ok_or_else(|| bad("missing pooling kind"))?.parse()?;
                    pooling = Some(match name {
                        PoolingName::Gmp => PoolingKind::Gmp,
                        PoolingName::Gap => PoolingKind::Gap,
                        PoolingName::Spam => {
                            let ks = parts.next().ok_or_else(|| bad("spam needs kernel sizes"))?;
                            let kernels = ks
                                .split(',')
                                .map(|k| k.trim().parse::<usize>())
                                .collect::<std::result::Result<Vec<_>, _>>()
                                .map_err(|_| bad("bad spam kernel list"))?;
                            PoolingKind::Spam(SpamConfig::new(kernels)?)
                        }
                    });
                }
                _ => {}
            }
        }
        let cfg = Self {
            input: input.ok_or_else(|| Error::format("net config has no input line"))?,
            backbone,
            cam_channels: cam_channels.ok_or_else(|| Error::format("net config has no cam line"))?,
            pooling: pooling.ok_or_else(|| Error::format("net config has no pooling line"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Affine map from the pooled CAM value to the negative and positive logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassHead {
    pub w_pos: f64,
    pub w_neg: f64,
    pub b_pos: f64,
    pub b_neg: f64,
}

impl ClassHead {
    /// Pooled value at which both logits tie: `(b_neg - b_pos) / (w_pos - w_neg)`.
    pub fn threshold(&self) -> Result<f64> {
        cam_threshold(self)
    }
}

pub fn cam_threshold(head: &ClassHead) -> Result<f64> {
    let dw = head.w_pos - head.w_neg;
    if dw == 0.0 {
        return Err(Error::DegenerateHead(head.w_pos));
    }
    Ok((head.b_neg - head.b_pos) / dw)
}

/// All network parameters in a fixed order: `(weight, bias)` for each
/// backbone conv, then the CAM conv, then the head weights `[w_neg, w_pos]`
/// and biases `[b_neg, b_pos]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T = f32> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> Params<T> {
    pub fn zeros(cfg: &NetConfig) -> Result<Self> {
        Ok(Self {
            tensors: cfg.param_shapes()?.iter().map(|s| Tensor::zeros(s)).collect(),
        })
    }

    /// Uniform `+-sqrt(6 / (fan_in + fan_out))` conv weights and zero biases.
    /// The head starts at `w_neg = -1, w_pos = 1` so the pooled value is
    /// evidence for the positive class from the first step.
    pub fn init(cfg: &NetConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(cfg)?;
        let mut rng = SplitMix64::new(seed);
        let n_convs = params.tensors.len() / 2 - 1;
        for layer in 0..n_convs {
            let w = &mut params.tensors[2 * layer];
            let s = w.shape().to_vec();
            let fan_in = (s[1] * s[2] * s[3]) as f64;
            let fan_out = (s[0] * s[2] * s[3]) as f64;
            let bound = (6.0 / (fan_in + fan_out)).sqrt();
            for v in w.data_mut() {
                *v = T::from_f64(rng.uniform(-bound, bound));
            }
        }
        params.set_head(ClassHead {
            w_pos: 1.0,
            w_neg: -1.0,
            b_pos: 0.0,
            b_neg: 0.0,
        });
        Ok(params)
    }

    pub fn check_shapes(&self, cfg: &NetConfig) -> Result<()> {
        let shapes = cfg.param_shapes()?;
        if shapes.len() != self.tensors.len() {
            return Err(Error::config(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for (i, (s, t)) in shapes.iter().zip(&self.tensors).enumerate() {
            if s.as_slice() != t.shape() {
                return Err(Error::config(format!(
                    "parameter {i} has shape {:?}, config expects {s:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn head(&self) -> ClassHead {
        let n = self.tensors.len();
        let w = self.tensors[n - 2].data();
        let b = self.tensors[n - 1].data();
        ClassHead {
            w_neg: w[0].as_f64(),
            w_pos: w[1].as_f64(),
            b_neg: b[0].as_f64(),
            b_pos: b[1].as_f64(),
        }
    }

    pub fn set_head(&mut self, head: ClassHead) {
        let n = self.tensors.len();
        self.tensors[n - 2].data_mut().copy_from_slice(&[T::from_f64(head.w_neg), T::from_f64(head.w_pos)]);
        self.tensors[n - 1].data_mut().copy_from_slice(&[T::from_f64(head.b_neg), T::from_f64(head.b_pos)]);
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }
}

/// Intermediate values kept by a traced forward pass.
struct Trace<T> {
    /// Input to every backbone layer, then the input to the CAM layer.
    inputs: Vec<Tensor<T>>,
    /// Pre-activation conv outputs, for ReLU backward.
    pre_activation: Vec<Option<Tensor<T>>>,
    pool_indices: Vec<Option<MaxPoolIndices>>,
}

fn describe(i: usize, layer: &LayerSpec) -> String {
    match layer {
        LayerSpec::Conv { geom, out_channels, .. } => format!("layer {i} (conv {}x{} -> {out_channels})", geom.kernel, geom.kernel),
        LayerSpec::MaxPool { geom } => format!("layer {i} (maxpool {}x{})", geom.kernel, geom.kernel),
    }
}

fn check_image<T: Real>(cfg: &NetConfig, image: &Tensor<T>) -> Result<()> {
    let (c, h, w) = cfg.input;
    if image.shape() != [c, h, w] {
        return Err(Error::config(format!(
            "image shape {:?} does not match network input {c}x{h}x{w}",
            image.shape()
        )));
    }
    Ok(())
}

fn run_forward<T: Real>(cfg: &NetConfig, params: &Params<T>, image: &Tensor<T>, keep: bool) -> Result<(CamMap<T>, Option<Trace<T>>)> {
    check_image(cfg, image)?;
    let mut trace = Trace {
        inputs: Vec::new(),
        pre_activation: Vec::new(),
        pool_indices: Vec::new(),
    };
    let mut x = image.clone();
    let mut conv_idx = 0;
    for (i, layer) in cfg.backbone.iter().enumerate() {
        let next = match layer {
            LayerSpec::Conv { geom, relu: act, .. } => {
                let w = &params.tensors[2 * conv_idx];
                let b = &params.tensors[2 * conv_idx + 1];
                conv_idx += 1;
                let pre = conv2d_forward(&x, w, b, geom).map_err(|e| relabel(e, &describe(i, layer)))?;
                pre.ensure_finite(&describe(i, layer))?;
                let out = if *act { relu(&pre) } else { pre.clone() };
                if keep {
                    trace.pre_activation.push(Some(pre));
                    trace.pool_indices.push(None);
                }
                out
            }
            LayerSpec::MaxPool { geom } => {
                let (out, idx) = maxpool_forward(&x, geom)?;
                if keep {
                    trace.pre_activation.push(None);
                    trace.pool_indices.push(Some(idx));
                }
                out
            }
        };
        if keep {
            trace.inputs.push(std::mem::replace(&mut x, next));
        } else {
            x = next;
        }
    }
    let w = &params.tensors[2 * conv_idx];
    let b = &params.tensors[2 * conv_idx + 1];
    let cam = conv2d_forward(&x, w, b, &cfg.cam_geometry()).map_err(|e| relabel(e, "CAM layer"))?;
    cam.ensure_finite("CAM layer")?;
    if keep {
        trace.inputs.push(x);
    }
    let side = cam.shape()[1];
    let map = CamMap::new(side, cam.into_data())?;
    Ok((map, keep.then_some(trace)))
}

fn relabel(e: Error, location: &str) -> Error {
    match e {
        Error::Numeric { detail, .. } => Error::numeric(location, detail),
        other => other,
    }
}

/// Activation map for one image; no pooling or head.
pub fn forward_to_cam<T: Real>(cfg: &NetConfig, params: &Params<T>, image: &Tensor<T>) -> Result<CamMap<T>> {
    Ok(run_forward(cfg, params, image, false)?.0)
}

/// Loss, pooled value and parameter gradients for one labelled image.
#[derive(Debug, Clone)]
pub struct TrainStep<T> {
    pub loss: T,
    pub pooled: T,
    pub grads: Vec<Tensor<T>>,
}

/// Forward through pooling and the softmax head, then back to every parameter.
pub fn forward_train<T: Real>(cfg: &NetConfig, params: &Params<T>, image: &Tensor<T>, label: u8) -> Result<TrainStep<T>> {
    if label > 1 {
        return Err(Error::config(format!("label must be 0 or 1, got {label}")));
    }
    let (cam, trace) = run_forward(cfg, params, image, true)?;
    let trace = trace.expect("trace kept");
    let (pooled, ctx): (T, PoolContext) = pool_forward(&cfg.pooling, &cam)?;

    let n = params.tensors.len();
    let hw = params.tensors[n - 2].data();
    let hb = params.tensors[n - 1].data();
    let logits = [hw[0] * pooled + hb[0], hw[1] * pooled + hb[1]];
    let (loss, dl) = softmax2_xent(logits, label);
    if !loss.is_finite() {
        return Err(Error::numeric("softmax head", format!("loss {loss} from logits {:?}", logits)));
    }

    let mut grads: Vec<Tensor<T>> = params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
    grads[n - 2].data_mut().copy_from_slice(&[dl[0] * pooled, dl[1] * pooled]);
    grads[n - 1].data_mut().copy_from_slice(&dl);
    let d_pooled = dl[0] * hw[0] + dl[1] * hw[1];

    let d_cam = pool_backward(&ctx, d_pooled);
    let side = d_cam.side();
    let mut d = Tensor::from_vec(&[1, side, side], d_cam.into_values())?;

    let n_convs = n / 2 - 1;
    let cam_input = trace.inputs.last().expect("CAM input kept");
    let (d_in, d_w, d_b) = conv2d_backward_impl(cam_input, &params.tensors[2 * (n_convs - 1)], &cfg.cam_geometry(), &d, true)?;
    grads[2 * (n_convs - 1)] = d_w;
    grads[2 * (n_convs - 1) + 1] = d_b;
    d = d_in.expect("requested");

    let mut conv_idx = n_convs - 1;
    for (i, layer) in cfg.backbone.iter().enumerate().rev() {
        let input = &trace.inputs[i];
        match layer {
            LayerSpec::Conv { geom, relu: act, .. } => {
                conv_idx -= 1;
                if *act {
                    let pre = trace.pre_activation[i].as_ref().expect("conv pre-activation kept");
                    d = relu_backward(pre, &d);
                }
                let need_input = i > 0;
                let (d_in, d_w, d_b) = conv2d_backward_impl(input, &params.tensors[2 * conv_idx], geom, &d, need_input)?;
                grads[2 * conv_idx] = d_w;
                grads[2 * conv_idx + 1] = d_b;
                if let Some(d_in) = d_in {
                    d = d_in;
                }
            }
            LayerSpec::MaxPool { .. } => {
                let idx = trace.pool_indices[i].as_ref().expect("pool indices kept");
                d = maxpool_backward(idx, &d)?;
            }
        }
        if i > 0 {
            d.ensure_finite(&format!("gradient into {}", describe(i, layer)))?;
        }
    }
    for (i, g) in grads.iter().enumerate() {
        g.ensure_finite(&format!("gradient of parameter {i}"))?;
    }
    Ok(TrainStep { loss, pooled, grads })
}

/// A configured network with 32-bit parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: NetConfig,
    pub params: Params<f32>,
}

impl Model {
    pub fn new(config: NetConfig, params: Params<f32>) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        let params = Params::init(&config, seed)?;
        Self::new(config, params)
    }

    pub fn cam(&self, image: &Tensor<f32>) -> Result<CamMap<f32>> {
        forward_to_cam(&self.config, &self.params, image)
    }

    /// Pooled CAM value under the model's own pooling kind.
    pub fn pooled(&self, cam: &CamMap<f32>) -> Result<f32> {
        Ok(pool_forward(&self.config.pooling, cam)?.0)
    }

    pub fn head(&self) -> ClassHead {
        self.params.head()
    }

    pub fn threshold(&self) -> Result<f64> {
        cam_threshold(&self.head())
    }
}
