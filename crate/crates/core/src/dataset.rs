//! MNIST IDX files and the 128x128 single-digit canvases built from them.

use std::fs;
use std::path::{Path, PathBuf};

use crate::backproject::PixelBox;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const CANVAS: usize = 128;
/// Largest placement offset; a 28-pixel digit at offset 100 ends at 128.
pub const MAX_OFFSET: usize = 100;
pub const POSITIVE_DIGIT: u8 = 3;
pub const DIGIT_SIDE: usize = 28;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
const UBYTE: u8 = 0x08;

/// Decoded contents of one IDX file with unsigned-byte payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn take<'a>(bytes: &'a [u8], offset: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    let found = bytes.len().saturating_sub(offset);
    if found < len {
        return Err(Error::Length {
            what: what.to_string(),
            offset,
            expected: len,
            found,
        });
    }
    Ok(&bytes[offset..offset + len])
}

/// Parses an IDX file of rank 1 or 3 with unsigned-byte elements. The whole
/// input must be consumed.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let head = take(bytes, 0, 4, "IDX magic")?;
    let magic = u32::from_be_bytes(head.try_into().expect("4 bytes"));
    if head[0] != 0 || head[1] != 0 || head[2] != UBYTE {
        return Err(Error::format(format!(
            "bad IDX magic 0x{magic:08x}: expected 0x{IMAGES_MAGIC:08x} (images) or 0x{LABELS_MAGIC:08x} (labels)"
        )));
    }
    let rank = head[3] as usize;
    if rank != 1 && rank != 3 {
        return Err(Error::format(format!(
            "IDX magic 0x{magic:08x} declares rank {rank}: expected rank 3 (0x{IMAGES_MAGIC:08x}) or rank 1 (0x{LABELS_MAGIC:08x})"
        )));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let d = take(bytes, 4 + 4 * i, 4, &format!("IDX dimension {i}"))?;
        dims.push(u32::from_be_bytes(d.try_into().expect("4 bytes")) as usize);
    }
    let offset = 4 + 4 * rank;
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(format!("IDX dimensions {dims:?} overflow")))?;
    let data = take(bytes, offset, len, "IDX payload")?.to_vec();
    if bytes.len() > offset + len {
        return Err(Error::format(format!(
            "{} trailing bytes after IDX payload ending at offset {}",
            bytes.len() - offset - len,
            offset + len
        )));
    }
    Ok(IdxArray { dims, data })
}

/// Parses an image file and checks it is rank 3.
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxArray> {
    let a = parse_idx(bytes)?;
    if a.dims.len() != 3 {
        return Err(Error::format(format!(
            "expected image file with magic 0x{IMAGES_MAGIC:08x} (rank 3), found rank {}",
            a.dims.len()
        )));
    }
    Ok(a)
}

/// Parses a label file and checks it is rank 1.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let a = parse_idx(bytes)?;
    if a.dims.len() != 1 {
        return Err(Error::format(format!(
            "expected label file with magic 0x{LABELS_MAGIC:08x} (rank 1), found rank {}",
            a.dims.len()
        )));
    }
    Ok(a.data)
}

pub fn encode_idx(array: &IdxArray) -> Result<Vec<u8>> {
    if array.dims.len() != 1 && array.dims.len() != 3 {
        return Err(Error::config(format!("IDX rank must be 1 or 3, got {}", array.dims.len())));
    }
    if array.dims.iter().product::<usize>() != array.data.len() {
        return Err(Error::config(format!(
            "IDX dims {:?} do not match {} payload bytes",
            array.dims,
            array.data.len()
        )));
    }
    let mut out = vec![0, 0, UBYTE, array.dims.len() as u8];
    for &d in &array.dims {
        let d = u32::try_from(d).map_err(|_| Error::config(format!("IDX dimension {d} too large")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Digits and labels of one MNIST split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistSet {
    rows: usize,
    cols: usize,
    images: Vec<u8>,
    labels: Vec<u8>,
}

impl MnistSet {
    pub fn new(images: IdxArray, labels: Vec<u8>) -> Result<Self> {
        if images.dims.len() != 3 {
            return Err(Error::config("MNIST images must be rank 3"));
        }
        let (count, rows, cols) = (images.dims[0], images.dims[1], images.dims[2]);
        if count != labels.len() {
            return Err(Error::format(format!(
                "image count {count} does not match label count {}",
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l > 9) {
            return Err(Error::format(format!("label {} at index {i} is not a digit", labels[i])));
        }
        if rows != DIGIT_SIDE || cols != DIGIT_SIDE {
            return Err(Error::format(format!(
                "expected {DIGIT_SIDE}x{DIGIT_SIDE} digits, found {rows}x{cols}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            images: images.data,
            labels,
        })
    }

    /// Reads `<prefix>-images-idx3-ubyte` and `<prefix>-labels-idx1-ubyte` from `dir`.
    pub fn load(dir: &Path, split: Split) -> Result<Self> {
        let read = |name: String| -> Result<(PathBuf, Vec<u8>)> {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(|e| Error::from(e).in_file(&path))?;
            Ok((path, bytes))
        };
        let (ip, ib) = read(format!("{}-images-idx3-ubyte", split.prefix()))?;
        let images = parse_idx_images(&ib).map_err(|e| e.in_file(&ip))?;
        let (lp, lb) = read(format!("{}-labels-idx1-ubyte", split.prefix()))?;
        let labels = parse_idx_labels(&lb).map_err(|e| e.in_file(&lp))?;
        Self::new(images, labels).map_err(|e| e.in_file(dir))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.images[i * n..(i + 1) * n]
    }
}

/// `$SPAMCAM_MNIST_DIR` if set, else `data/mnist`.
pub fn default_mnist_dir() -> PathBuf {
    std::env::var_os("SPAMCAM_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// One digit on a blank 128x128 canvas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: usize,
    pub digit: u8,
    pub label: u8,
    pub ox: usize,
    pub oy: usize,
    pub gt_box: PixelBox,
    /// The pasted digit window, `patch_h x patch_w` bytes at `(ox, oy)`.
    patch: Vec<u8>,
    patch_w: usize,
    patch_h: usize,
}

impl Sample {
    pub fn new(id: usize, digit: u8, ox: usize, oy: usize, patch: Vec<u8>, patch_w: usize, patch_h: usize) -> Result<Self> {
        if digit > 9 {
            return Err(Error::config(format!("digit class {digit} out of range")));
        }
        if patch.len() != patch_w * patch_h || ox + patch_w > CANVAS || oy + patch_h > CANVAS {
            return Err(Error::config(format!(
                "digit window {patch_w}x{patch_h} at ({ox},{oy}) does not fit the canvas"
            )));
        }
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for r in 0..patch_h {
            for c in 0..patch_w {
                if patch[r * patch_w + c] > 0 {
                    x0 = x0.min(c);
                    y0 = y0.min(r);
                    x1 = x1.max(c + 1);
                    y1 = y1.max(r + 1);
                }
            }
        }
        if x1 == 0 {
            return Err(Error::config(format!("sample {id}: digit has no ink")));
        }
        let gt_box = PixelBox::new(ox + x0, oy + y0, ox + x1, oy + y1)?;
        Ok(Self {
            id,
            digit,
            label: u8::from(digit == POSITIVE_DIGIT),
            ox,
            oy,
            gt_box,
            patch,
            patch_w,
            patch_h,
        })
    }

    /// Canvas bytes, row-major.
    pub fn canvas_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; CANVAS * CANVAS];
        for r in 0..self.patch_h {
            let dst = (self.oy + r) * CANVAS + self.ox;
            out[dst..dst + self.patch_w].copy_from_slice(&self.patch[r * self.patch_w..(r + 1) * self.patch_w]);
        }
        out
    }

    /// `1 x 128 x 128` image with intensities scaled to `[0, 1]`.
    pub fn image(&self) -> Tensor<f32> {
        let data = self.canvas_bytes().into_iter().map(|b| b as f32 / 255.0).collect();
        Tensor::from_vec(&[1, CANVAS, CANVAS], data).expect("canvas shape")
    }

    /// Rebuilds a sample from a canvas, which must be blank outside the
    /// `patch_w x patch_h` window at `(ox, oy)`.
    pub fn from_canvas(id: usize, digit: u8, ox: usize, oy: usize, canvas: &[u8], patch_w: usize, patch_h: usize) -> Result<Self> {
        if canvas.len() != CANVAS * CANVAS {
            return Err(Error::Length {
                what: format!("sample {id} canvas"),
                offset: 0,
                expected: CANVAS * CANVAS,
                found: canvas.len(),
            });
        }
        if ox + patch_w > CANVAS || oy + patch_h > CANVAS {
            return Err(Error::format(format!("sample {id}: offset ({ox},{oy}) out of range")));
        }
        let mut patch = Vec::with_capacity(patch_w * patch_h);
        for (i, &b) in canvas.iter().enumerate() {
            let (x, y) = (i % CANVAS, i / CANVAS);
            let inside = x >= ox && x < ox + patch_w && y >= oy && y < oy + patch_h;
            if inside {
                patch.push(b);
            } else if b != 0 {
                return Err(Error::format(format!(
                    "sample {id}: nonzero pixel at ({x},{y}) outside the digit window"
                )));
            }
        }
        Self::new(id, digit, ox, oy, patch, patch_w, patch_h)
    }
}

/// Samples built from positions `start..start + count` of a seeded
/// permutation of the set; each digit is pasted at an offset drawn uniformly
/// from `[0, 100]^2`. Ids run from `start`.
pub fn synthesize_range(set: &MnistSet, seed: u64, start: usize, count: usize) -> Result<Vec<Sample>> {
    if set.is_empty() {
        return Err(Error::config("cannot synthesize from an empty digit set"));
    }
    if start + count > set.len() {
        return Err(Error::config(format!(
            "requested digits {start}..{} but the set holds {}",
            start + count,
            set.len()
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    rng.shuffle(&mut order);
    let mut offsets = rng.fork();
    for _ in 0..start {
        offsets.next_u64();
        offsets.next_u64();
    }
    let mut out = Vec::with_capacity(count);
    for (i, &src) in order[start..start + count].iter().enumerate() {
        let ox = offsets.range_inclusive(0, MAX_OFFSET as u64) as usize;
        let oy = offsets.range_inclusive(0, MAX_OFFSET as u64) as usize;
        out.push(Sample::new(
            start + i,
            set.labels()[src],
            ox,
            oy,
            set.image(src).to_vec(),
            set.cols(),
            set.rows(),
        )?);
    }
    Ok(out)
}

/// `count` samples from distinct digits; a pure function of its arguments.
pub fn synthesize_mnist128(set: &MnistSet, seed: u64, count: usize) -> Result<Vec<Sample>> {
    synthesize_range(set, seed, 0, count)
}

/// Endless stream of class-balanced batches of sample indices.
///
/// Positives and negatives are drawn from separate shuffled pools that are
/// reshuffled whenever exhausted, so a rare class repeats as needed. Each
/// batch holds `ceil(batch/2)` positives and is shuffled.
#[derive(Debug, Clone)]
pub struct BalancedBatches {
    batch: usize,
    total: usize,
    pos: Pool,
    neg: Pool,
    rng: SplitMix64,
}

#[derive(Debug, Clone)]
struct Pool {
    items: Vec<usize>,
    cursor: usize,
}

impl Pool {
    fn next(&mut self, rng: &mut SplitMix64) -> usize {
        if self.cursor == self.items.len() {
            rng.shuffle(&mut self.items);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.items[self.cursor - 1]
    }
}

impl BalancedBatches {
    pub fn new(labels: &[u8], batch: usize, seed: u64) -> Result<Self> {
        if batch == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
        let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::config(format!(
                "balanced batching needs both classes, got {} positives and {} negatives",
                pos.len(),
                neg.len()
            )));
        }
        if batch == 1 {
            return Err(Error::config("balanced batches need a batch size of at least 2"));
        }
        let n = pos.len();
        Ok(Self {
            batch,
            total: labels.len(),
            pos: Pool { cursor: n, items: pos },
            neg: Pool { cursor: labels.len() - n, items: neg },
            rng: SplitMix64::new(seed),
        })
    }

    /// `ceil(samples / batch)`.
    pub fn batches_per_epoch(&self) -> usize {
        self.total.div_ceil(self.batch)
    }

    pub fn positives_per_batch(&self) -> usize {
        self.batch.div_ceil(2)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let np = self.positives_per_batch();
        let mut b = Vec::with_capacity(self.batch);
        for _ in 0..np {
            b.push(self.pos.next(&mut self.rng));
        }
        for _ in np..self.batch {
            b.push(self.neg.next(&mut self.rng));
        }
        self.rng.shuffle(&mut b);
        b
    }

    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        (0..self.batches_per_epoch()).map(|_| self.next_batch()).collect()
    }
}

impl Iterator for BalancedBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

/// One line of a dataset manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: usize,
    pub digit: u8,
    pub label: u8,
    pub ox: usize,
    pub oy: usize,
    pub gt_box: PixelBox,
}

impl From<&Sample> for ManifestRow {
    fn from(s: &Sample) -> Self {
        Self {
            id: s.id,
            digit: s.digit,
            label: s.label,
            ox: s.ox,
            oy: s.oy,
            gt_box: s.gt_box,
        }
    }
}

/// `sampleId digitClass label ox oy x0 y0 x1 y1`, one sample per line.
pub fn format_manifest(samples: &[Sample]) -> String {
    let mut s = String::new();
    for smp in samples {
        let r = ManifestRow::from(smp);
        s.push_str(&format!("{} {} {} {} {} {}\n", r.id, r.digit, r.label, r.ox, r.oy, r.gt_box));
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |why: &str| Error::format(format!("manifest line {}: {why}: {line:?}", n + 1));
        let f: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("non-integer field"))?;
        if f.len() != 9 {
            return Err(bad("expected 9 fields"));
        }
        if f[1] > 9 || f[2] > 1 || (f[2] == 1) != (f[1] == POSITIVE_DIGIT as usize) {
            return Err(bad("inconsistent digit/label"));
        }
        let gt_box = PixelBox::new(f[5], f[6], f[7], f[8]).map_err(|_| bad("empty box"))?;
        if gt_box.x1 > CANVAS || gt_box.y1 > CANVAS {
            return Err(bad("box outside the canvas"));
        }
        rows.push(ManifestRow {
            id: f[0],
            digit: f[1] as u8,
            label: f[2] as u8,
            ox: f[3],
            oy: f[4],
            gt_box,
        });
    }
    Ok(rows)
}

pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn sample_file_name(id: usize) -> String {
    format!("{id:06}.gray")
}

/// Writes `manifest.txt` plus one raw 128x128 byte file per sample.
pub fn write_sample_dir(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
    for s in samples {
        let p = dir.join(sample_file_name(s.id));
        fs::write(&p, s.canvas_bytes()).map_err(|e| Error::from(e).in_file(&p))?;
    }
    let mp = dir.join(MANIFEST_NAME);
    fs::write(&mp, format_manifest(samples)).map_err(|e| Error::from(e).in_file(&mp))?;
    Ok(())
}

/// Reads a directory written by [`write_sample_dir`], checking every canvas
/// against its manifest row.
pub fn read_sample_dir(dir: &Path) -> Result<Vec<Sample>> {
    let mp = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&mp).map_err(|e| Error::from(e).in_file(&mp))?;
    let rows = parse_manifest(&text).map_err(|e| e.in_file(&mp))?;
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        let p = dir.join(sample_file_name(r.id));
        let bytes = fs::read(&p).map_err(|e| Error::from(e).in_file(&p))?;
        let s = Sample::from_canvas(r.id, r.digit, r.ox, r.oy, &bytes, DIGIT_SIDE, DIGIT_SIDE).map_err(|e| e.in_file(&p))?;
        if s.gt_box != r.gt_box {
            return Err(Error::format(format!(
                "sample {}: canvas box {} disagrees with manifest box {}",
                r.id, s.gt_box, r.gt_box
            ))
            .in_file(&p));
        }
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(count: usize, rows: usize, cols: usize, data: Vec<u8>) -> IdxArray {
        IdxArray {
            dims: vec![count, rows, cols],
            data,
        }
    }

    fn tiny_set() -> MnistSet {
        // Ten 28x28 digits, one per class, each a small filled square.
        let mut data = vec![0u8; 10 * 784];
        for d in 0..10 {
            for r in 10..14 {
                for c in (5 + d)..(9 + d) {
                    data[d * 784 + r * 28 + c] = 200;
                }
            }
        }
        MnistSet::new(images(10, 28, 28, data), (0..10).collect()).unwrap()
    }

    #[test]
    fn one_image_file() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 28, 0, 0, 0, 28];
        bytes.extend(std::iter::repeat_n(7, 784));
        let a = parse_idx_images(&bytes).unwrap();
        assert_eq!(a.dims, vec![1, 28, 28]);
        assert_eq!(encode_idx(&a).unwrap(), bytes);
    }

    #[test]
    fn rank_two_magic_rejected() {
        let bytes = [0, 0, 8, 2, 0, 0, 0, 1, 0, 0, 0, 1, 5];
        let err = parse_idx(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("0x00000802"));
    }

    #[test]
    fn wrong_type_byte_rejected() {
        let err = parse_idx(&[0, 0, 9, 1, 0, 0, 0, 0]).unwrap_err();
        assert!(err.to_string().contains("bad IDX magic 0x00000901"));
    }

    #[test]
    fn truncation_reports_offsets() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 5, 1, 2];
        match parse_idx(&bytes).unwrap_err() {
            Error::Length { offset, expected, found, .. } => assert_eq!((offset, expected, found), (8, 5, 2)),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(parse_idx(&[0, 0, 8]).unwrap_err(), Error::Length { .. }));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let err = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 1, 4, 4]).unwrap_err();
        assert!(err.to_string().contains("1 trailing bytes"));
    }

    #[test]
    fn labels_vs_images_rank() {
        let labels = encode_idx(&IdxArray { dims: vec![2], data: vec![1, 2] }).unwrap();
        assert!(parse_idx_images(&labels).is_err());
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![1, 2]);
    }

    #[test]
    fn synthesized_boxes_sit_in_the_window() {
        let set = tiny_set();
        let samples = synthesize_mnist128(&set, 9, 10).unwrap();
        for s in &samples {
            assert!(s.ox <= MAX_OFFSET && s.oy <= MAX_OFFSET);
            let win = PixelBox::new(s.ox, s.oy, s.ox + 28, s.oy + 28).unwrap();
            assert!(win.contains_box(&s.gt_box));
            assert_eq!(s.gt_box.width(), 4);
            assert_eq!(s.label == 1, s.digit == 3);
        }
        assert_eq!(samples, synthesize_mnist128(&set, 9, 10).unwrap());
        assert_ne!(samples, synthesize_mnist128(&set, 10, 10).unwrap());
    }

    #[test]
    fn ranges_partition_one_permutation() {
        let set = tiny_set();
        let all = synthesize_range(&set, 4, 0, 10).unwrap();
        let tail = synthesize_range(&set, 4, 6, 4).unwrap();
        assert_eq!(&all[6..], &tail[..]);
        assert!(synthesize_range(&set, 4, 8, 3).is_err());
    }

    #[test]
    fn canvas_round_trip() {
        let s = synthesize_mnist128(&tiny_set(), 1, 1).unwrap().remove(0);
        let bytes = s.canvas_bytes();
        let back = Sample::from_canvas(s.id, s.digit, s.ox, s.oy, &bytes, 28, 28).unwrap();
        assert_eq!(back, s);
        let mut dirty = bytes.clone();
        let stray = if s.ox > 0 { s.oy * CANVAS } else { s.oy * CANVAS + 127 };
        dirty[stray] = 1;
        assert!(Sample::from_canvas(s.id, s.digit, s.ox, s.oy, &dirty, 28, 28).is_err());
    }

    #[test]
    fn batch_of_eight_has_four_positives() {
        let labels = [1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0];
        let mut bb = BalancedBatches::new(&labels, 8, 3).unwrap();
        assert_eq!(bb.batches_per_epoch(), 2);
        for b in bb.epoch() {
            assert_eq!(b.len(), 8);
            assert_eq!(b.iter().filter(|&&i| labels[i] == 1).count(), 4);
            assert_eq!(b.iter().filter(|&&i| i == 0).count(), 4);
        }
        let a: Vec<_> = BalancedBatches::new(&labels, 8, 3).unwrap().take(5).collect();
        let b: Vec<_> = BalancedBatches::new(&labels, 8, 3).unwrap().take(5).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn batching_needs_both_classes() {
        assert!(BalancedBatches::new(&[0, 0, 0], 2, 1).is_err());
        assert!(BalancedBatches::new(&[1, 0], 0, 1).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let samples = synthesize_mnist128(&tiny_set(), 5, 10).unwrap();
        let text = format_manifest(&samples);
        let rows = parse_manifest(&text).unwrap();
        assert_eq!(rows.len(), 10);
        assert_eq!(rows[3], ManifestRow::from(&samples[3]));
        assert!(parse_manifest("1 3 0 0 0 1 1 2 2").is_err());
        assert!(parse_manifest("1 2 0 0 0 1 1 2").is_err());
    }

    #[test]
    fn sample_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synthesize_mnist128(&tiny_set(), 5, 10).unwrap();
        write_sample_dir(dir.path(), &samples).unwrap();
        assert_eq!(read_sample_dir(dir.path()).unwrap(), samples);
    }
}
