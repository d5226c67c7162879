//! Binary portable graymap (P5) and pixmap (P6) images with 8-bit samples.

use crate::backproject::PixelBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Pnm {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::checked(width, height, 1, data)
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::checked(width, height, 3, data)
    }

    fn checked(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::config(format!(
                "{width}x{height} image with {channels} channels needs {} bytes, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let tag = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{tag}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = token(bytes, &mut pos)?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(Error::format(format!("unsupported image magic {other:?}, expected P5 or P6"))),
        };
        let width = number(bytes, &mut pos)?;
        let height = number(bytes, &mut pos)?;
        let maxval = number(bytes, &mut pos)?;
        if maxval != 255 {
            return Err(Error::format(format!("only 8-bit images are supported, maxval is {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let need = width * height * channels;
        let found = bytes.len().saturating_sub(pos);
        if found != need {
            return Err(Error::Length {
                what: "image raster".into(),
                offset: pos,
                expected: need,
                found,
            });
        }
        Self::checked(width, height, channels, bytes[pos..].to_vec())
    }

    /// Gray raster; P6 pixels are the mean of their three channels.
    pub fn to_gray(&self) -> Vec<u8> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(3)
            .map(|p| ((p[0] as u16 + p[1] as u16 + p[2] as u16) / 3) as u8)
            .collect()
    }
}

fn token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("image header ended early"));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let t = token(bytes, pos)?;
    t.parse().map_err(|_| Error::format(format!("bad number {t:?} in image header")))
}

/// Linear map of `values` onto 0..=255 with the maximum at 255. Values at
/// or below zero become 0.
pub fn to_gray_bytes(values: &[f64]) -> Vec<u8> {
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    values
        .iter()
        .map(|&v| {
            if max <= 0.0 || v <= 0.0 {
                0
            } else {
                (v / max * 255.0).round() as u8
            }
        })
        .collect()
}

/// Grayscale image turned to RGB with one-pixel red outlines of `boxes`.
pub fn overlay(width: usize, height: usize, gray: &[u8], boxes: &[PixelBox]) -> Result<Pnm> {
    if gray.len() != width * height {
        return Err(Error::config("overlay: gray raster does not match its dimensions"));
    }
    let mut rgb: Vec<u8> = gray.iter().flat_map(|&g| [g, g, g]).collect();
    let mut paint = |x: usize, y: usize| {
        if x < width && y < height {
            let i = 3 * (y * width + x);
            rgb[i..i + 3].copy_from_slice(&[255, 0, 0]);
        }
    };
    for b in boxes {
        for x in b.x0..b.x1 {
            paint(x, b.y0);
            paint(x, b.y1 - 1);
        }
        for y in b.y0..b.y1 {
            paint(b.x0, y);
            paint(b.x1 - 1, y);
        }
    }
    Pnm::rgb(width, height, rgb)
}
