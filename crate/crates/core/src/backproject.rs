//! From a class activation map to boxes in input-image pixels.
//!
//! Peaks above the head threshold seed a monotone-descent floodfill over the
//! map. Every cell of such a mountain is mapped back to its receptive field
//! in the input by pure index arithmetic (no backward pass), the fields are
//! OR-ed into a binary mask, and each 8-connected component of the mask
//! becomes one detection.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};
use crate::net::Model;
use crate::pooling::CamMap;
use crate::tensor::{LayerGeometry, Real, Tensor};

/// Axis-aligned box `[x0, x1) x [y0, y1)` in input pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::config(format!(
                "box [{x0},{x1})x[{y0},{y1}) has no area"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    /// Half-open containment test for a possibly fractional point.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x < self.x1 as f64 && y >= self.y0 as f64 && y < self.y1 as f64
    }

    pub fn contains_box(&self, other: &PixelBox) -> bool {
        self.x0 <= other.x0 && other.x1 <= self.x1 && self.y0 <= other.y0 && other.y1 <= self.y1
    }

    /// Midpoint of the covered pixel centres.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1 - 1) as f64 / 2.0,
            (self.y0 + self.y1 - 1) as f64 / 2.0,
        )
    }
}

impl fmt::Display for PixelBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.x0, self.y0, self.x1, self.y1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackprojectConfig {
    /// Shrink factor in `[0, 1)`; 0 keeps the full receptive field.
    pub ratio: f64,
    pub floodfill: Connectivity,
    pub components: Connectivity,
}

impl BackprojectConfig {
    pub const DEFAULT_RATIO: f64 = 0.4;

    pub fn new(ratio: f64) -> Result<Self> {
        let cfg = Self {
            ratio,
            floodfill: Connectivity::Four,
            components: Connectivity::Eight,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(Error::config(format!(
                "backprojection ratio must lie in [0, 1), got {}",
                self.ratio
            )));
        }
        Ok(())
    }
}

impl Default for BackprojectConfig {
    fn default() -> Self {
        Self::new(Self::DEFAULT_RATIO).expect("default ratio is valid")
    }
}

/// Boolean image of the backprojected area.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn fill_box(&mut self, b: &PixelBox) {
        assert!(b.x1 <= self.width && b.y1 <= self.height, "box outside mask");
        for y in b.y0..b.y1 {
            self.bits[y * self.width + b.x0..y * self.width + b.x1].fill(true);
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Element-wise OR; dimensions must match.
    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect(),
        }
    }
}

/// Cell of a CAM, `x` is the column and `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CamPixel {
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub pixel: CamPixel,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: PixelBox,
    pub score: f64,
}

/// Inclusive input span reached from CAM index `x` when walking `layers`
/// from the CAM side down to the input. May extend past the image.
pub fn raw_span(layers: &[LayerGeometry], x: usize) -> (i64, i64) {
    let (mut x0, mut x1) = (x as i64, x as i64);
    for g in layers {
        let (k, s, p) = (g.kernel as i64, g.stride as i64, g.padding as i64);
        x0 = x0 * s - p;
        x1 = x1 * s - p + k - 1;
    }
    (x0, x1)
}

/// Shrinks an inclusive span toward its centre by `ratio` and returns the
/// half-open pixel range `[floor(x0'), floor(x1') + 1)`, clipped to
/// `0..extent`.
fn shrink_and_clip(span: (i64, i64), ratio: f64, extent: usize) -> Option<(usize, usize)> {
    let (x0, x1) = (span.0 as f64, span.1 as f64);
    let w = x1 - x0;
    let lo = (x0 + w * ratio / 2.0).floor() as i64;
    let hi = (x1 - w * ratio / 2.0).floor() as i64 + 1;
    let lo = lo.max(0);
    let hi = hi.min(extent as i64);
    (lo < hi).then_some((lo as usize, hi as usize))
}

/// Extent of the CAM produced by `layers` (CAM side first) on an input of
/// `extent` pixels.
fn cam_extent(layers: &[LayerGeometry], extent: usize) -> Result<usize> {
    let mut e = extent;
    for g in layers.iter().rev() {
        e = g.output_extent(e)?;
    }
    Ok(e)
}

/// Input box whose pixels influence CAM cell `(cam_x, cam_y)`, shrunk by
/// `ratio`. The span per axis comes from [`support_span`], then shrinks
/// symmetrically and is clipped to the image. `None` when nothing is left.
pub fn receptive_field(
    layers: &[LayerGeometry],
    cam_x: usize,
    cam_y: usize,
    ratio: f64,
    image: (usize, usize),
) -> Result<Option<PixelBox>> {
    if layers.is_empty() {
        return Err(Error::config("receptive_field needs at least one layer"));
    }
    BackprojectConfig::new(ratio)?;
    let (w, h) = image;
    let (cw, ch) = (cam_extent(layers, w)?, cam_extent(layers, h)?);
    if cam_x >= cw || cam_y >= ch {
        return Err(Error::config(format!(
            "CAM pixel ({cam_x},{cam_y}) outside the {cw}x{ch} map"
        )));
    }
    Ok(box_for(layers, cam_x, cam_y, ratio, image))
}

fn box_for(layers: &[LayerGeometry], cam_x: usize, cam_y: usize, ratio: f64, image: (usize, usize)) -> Option<PixelBox> {
    let (x0, x1) = shrink_and_clip(support_span(layers, cam_x, image.0)?, ratio, image.0)?;
    let (y0, y1) = shrink_and_clip(support_span(layers, cam_y, image.1)?, ratio, image.1)?;
    Some(PixelBox { x0, y0, x1, y1 })
}

/// The [`raw_span`] walk restricted to real activations: at every layer
/// only window positions inside that layer's input map are kept, so a cell
/// that reads nothing but padding reaches no pixel at all. Returns the
/// inclusive input span, or `None` when nothing is reached.
pub fn support_span(layers: &[LayerGeometry], x: usize, extent: usize) -> Option<(i64, i64)> {
    // Input extent of every layer, CAM side first.
    let mut inputs = Vec::with_capacity(layers.len());
    let mut e = extent;
    for g in layers.iter().rev() {
        inputs.push(e);
        e = g.output_extent(e).ok()?;
    }
    inputs.reverse();
    if x >= e {
        return None;
    }
    let mut reached = vec![false; e];
    reached[x] = true;
    for (g, &e_in) in layers.iter().zip(&inputs) {
        let mut next = vec![false; e_in];
        for (i, _) in reached.iter().enumerate().filter(|(_, &r)| r) {
            let lo = (i * g.stride) as i64 - g.padding as i64;
            for j in lo.max(0)..(lo + g.kernel as i64).min(e_in as i64) {
                next[j as usize] = true;
            }
        }
        reached = next;
    }
    let first = reached.iter().position(|&r| r)?;
    let last = reached.iter().rposition(|&r| r)?;
    Some((first as i64, last as i64))
}

fn neighbours(
    side: usize,
    x: usize,
    y: usize,
    conn: Connectivity,
) -> impl Iterator<Item = (usize, usize)> {
    conn.offsets().iter().filter_map(move |&(dx, dy)| {
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < side && (ny as usize) < side).then_some((nx as usize, ny as usize))
    })
}

/// Strict 8-neighbourhood local maxima above `t`, highest first (row-major
/// order among equal values).
pub fn threshold_peaks<T: Real>(cam: &CamMap<T>, t: f64) -> Vec<Peak> {
    let n = cam.side();
    let mut peaks = Vec::new();
    for y in 0..n {
        for x in 0..n {
            let v = cam.get(y, x).as_f64();
            if v <= t {
                continue;
            }
            if neighbours(n, x, y, Connectivity::Eight).all(|(nx, ny)| cam.get(ny, nx).as_f64() < v) {
                peaks.push(Peak {
                    pixel: CamPixel { x, y },
                    value: v,
                });
            }
        }
    }
    peaks.sort_by(|a, b| b.value.total_cmp(&a.value).then((a.pixel.y, a.pixel.x).cmp(&(b.pixel.y, b.pixel.x))));
    peaks
}

/// Cells reachable from `peak` by 4-connected steps that never climb and
/// never leave positive territory. The peak itself is always included.
pub fn floodfill_mountain<T: Real>(cam: &CamMap<T>, peak: CamPixel) -> Vec<CamPixel> {
    let mut claimed = vec![false; cam.side() * cam.side()];
    floodfill_claiming(cam, peak, Connectivity::Four, &mut claimed)
}

fn floodfill_claiming<T: Real>(cam: &CamMap<T>, peak: CamPixel, conn: Connectivity, claimed: &mut [bool]) -> Vec<CamPixel> {
    let n = cam.side();
    let mut cells = vec![peak];
    claimed[peak.y * n + peak.x] = true;
    let mut queue = VecDeque::from([peak]);
    while let Some(p) = queue.pop_front() {
        let from = cam.get(p.y, p.x).as_f64();
        for (nx, ny) in neighbours(n, p.x, p.y, conn) {
            let idx = ny * n + nx;
            if claimed[idx] {
                continue;
            }
            let v = cam.get(ny, nx).as_f64();
            if v > 0.0 && v <= from {
                claimed[idx] = true;
                let c = CamPixel { x: nx, y: ny };
                cells.push(c);
                queue.push_back(c);
            }
        }
    }
    cells.sort_by_key(|c| (c.y, c.x));
    cells
}

/// Union of the receptive fields of `pixels`, rasterised into a mask of the
/// input size.
pub fn fast_backproject(pixels: &[CamPixel], layers: &[LayerGeometry], ratio: f64, image: (usize, usize)) -> Result<BinaryMask> {
    let mut mask = BinaryMask::new(image.0, image.1);
    for p in pixels {
        if let Some(b) = receptive_field(layers, p.x, p.y, ratio, image)? {
            mask.fill_box(&b);
        }
    }
    Ok(mask)
}

/// Tight box of every connected component of `mask`, ordered by each
/// component's first pixel in row-major order.
pub fn extract_boxes(mask: &BinaryMask) -> Vec<PixelBox> {
    extract_boxes_with(mask, Connectivity::Eight)
}

pub fn extract_boxes_with(mask: &BinaryMask, conn: Connectivity) -> Vec<PixelBox> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut boxes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            for &(dx, dy) in conn.offsets() {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.bits[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        boxes.push(PixelBox { x0, y0, x1, y1 });
    }
    boxes
}

/// Detection stage on an already computed CAM with threshold `t`.
///
/// Peaks are visited highest first; cells claimed by an earlier mountain are
/// not revisited, and a peak swallowed by an earlier mountain produces
/// nothing. Every box of a mountain's mask is scored with the peak value.
pub fn detect_from_cam<T: Real>(
    cam: &CamMap<T>,
    t: f64,
    layers: &[LayerGeometry],
    image: (usize, usize),
    cfg: &BackprojectConfig,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let n = cam.side();
    let mut claimed = vec![false; n * n];
    let mut out = Vec::new();
    for peak in threshold_peaks(cam, t) {
        if claimed[peak.pixel.y * n + peak.pixel.x] {
            continue;
        }
        let mountain = floodfill_claiming(cam, peak.pixel, cfg.floodfill, &mut claimed);
        let mask = fast_backproject(&mountain, layers, cfg.ratio, image)?;
        for bbox in extract_boxes_with(&mask, cfg.components) {
            out.push(Detection {
                bbox,
                score: peak.value,
            });
        }
    }
    Ok(out)
}

fn image_dims(model: &Model) -> (usize, usize) {
    (model.config.input.2, model.config.input.1)
}

/// Full inference: CAM, class gate, peaks, mountains, backprojection, boxes.
/// An image whose pooled CAM value falls below the threshold yields nothing.
pub fn detect(model: &Model, image: &Tensor<f32>, cfg: &BackprojectConfig) -> Result<Vec<Detection>> {
    let cam = model.cam(image)?;
    detect_on_cam(model, &cam, cfg)
}

/// [`detect`] for a CAM already computed by `model`.
pub fn detect_on_cam(model: &Model, cam: &CamMap<f32>, cfg: &BackprojectConfig) -> Result<Vec<Detection>> {
    let t = model.threshold()?;
    if (model.pooled(cam)? as f64) < t {
        return Ok(Vec::new());
    }
    detect_from_cam(cam, t, &model.config.geometries_cam_to_input(), image_dims(model), cfg)
}

/// Centre of the full receptive field of the CAM argmax.
pub fn pinpoint_from_cam<T: Real>(cam: &CamMap<T>, layers: &[LayerGeometry], image: (usize, usize)) -> Result<(f64, f64)> {
    let (_, row, col) = cam.argmax();
    let b = receptive_field(layers, col, row, 0.0, image)?
        .ok_or_else(|| Error::config("CAM argmax maps entirely outside the image"))?;
    Ok(b.center())
}

pub fn pinpoint(model: &Model, image: &Tensor<f32>) -> Result<(f64, f64)> {
    let cam = model.cam(image)?;
    pinpoint_from_cam(&cam, &model.config.geometries_cam_to_input(), image_dims(model))
}

/// `value` with six significant digits, trailing zeros trimmed.
pub fn format_score(value: f64) -> String {
    if value == 0.0 || !value.is_finite() {
        return format!("{value}");
    }
    let exp = value.abs().log10().floor() as i32;
    let s = if (-5..6).contains(&exp) {
        format!("{:.*}", (5 - exp).max(0) as usize, value)
    } else {
        format!("{value:.5e}")
    };
    trim_zeros(&s)
}

fn trim_zeros(s: &str) -> String {
    let (mantissa, exp) = match s.find('e') {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, ""),
    };
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    format!("{mantissa}{exp}")
}

/// One `imageId score x0 y0 x1 y1` line per detection.
pub fn format_detections(image_id: &str, dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        s.push_str(&format!("{image_id} {} {}\n", format_score(d.score), d.bbox));
    }
    s
}

pub fn parse_detections(text: &str) -> Result<Vec<(String, Detection)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::format(format!("detection line {}: expected `imageId score x0 y0 x1 y1`, got {line:?}", lineno + 1));
        if parts.len() != 6 {
            return Err(bad());
        }
        let score: f64 = parts[1].parse().map_err(|_| bad())?;
        let mut c = [0usize; 4];
        for (slot, p) in c.iter_mut().zip(&parts[2..]) {
            *slot = p.parse().map_err(|_| bad())?;
        }
        let bbox = PixelBox::new(c[0], c[1], c[2], c[3]).map_err(|_| bad())?;
        out.push((parts[0].to_string(), Detection { bbox, score }));
    }
    Ok(out)
}
