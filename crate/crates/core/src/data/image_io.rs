//! PNG (8/16-bit, RGB or grey) and binary PPM/PGM reading and writing.
//!
//! Decoding maps a sample `v` to `v / (2^bits − 1)`; encoding clamps to
//! `[0, 1]` and rounds half up.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::colorspace::{ColorSpace, Image};
use crate::error::{Error, IoContext, Result};
use crate::losses::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Decoded integer samples, one or three channels.
#[derive(Debug, Clone, PartialEq)]
struct Raw {
    width: usize,
    height: usize,
    channels: usize,
    max: u32,
    samples: Vec<u16>,
}

impl Raw {
    fn unit(&self, i: usize) -> f32 {
        (self.samples[i] as f64 / self.max as f64) as f32
    }

    fn into_image(self) -> Image {
        let n = self.width * self.height;
        let data = (0..n)
            .flat_map(|p| {
                let raw = &self;
                (0..3).map(move |c| {
                    let ch = if raw.channels == 1 { 0 } else { c };
                    raw.unit(p * raw.channels + ch)
                })
            })
            .collect();
        Image::new(self.width, self.height, ColorSpace::Srgb, data).expect("decoded samples lie in [0, 1]")
    }

    fn into_mask(self) -> Mask {
        let n = self.width * self.height;
        let values = (0..n)
            .map(|p| {
                let s: f32 = (0..self.channels).map(|c| self.unit(p * self.channels + c)).sum();
                (s / self.channels as f32).clamp(0.0, 1.0)
            })
            .collect();
        Mask::new(self.width, self.height, values).expect("decoded samples lie in [0, 1]")
    }
}

/// Round-half-up quantization of a unit sample.
pub fn quantize(v: f32, max: u32) -> u16 {
    ((v as f64).clamp(0.0, 1.0) * max as f64 + 0.5).floor() as u16
}

fn corrupt(source: &Path, msg: impl Into<String>) -> Error {
    Error::Corrupt {
        path: source.to_path_buf(),
        msg: msg.into(),
    }
}

fn decode_png(bytes: &[u8]) -> Result<Raw> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedFormat("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    let (stored, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => return Err(Error::UnsupportedFormat(format!("PNG colour type {other:?}"))),
    };
    let (max, values): (u32, Vec<u16>) = match info.bit_depth {
        png::BitDepth::Eight => (255, buf.iter().map(|&b| b as u16).collect()),
        png::BitDepth::Sixteen => (65535, buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()),
        other => return Err(Error::UnsupportedFormat(format!("PNG bit depth {other:?}"))),
    };
    let samples = values
        .chunks_exact(stored)
        .flat_map(|px| px[..keep].to_vec())
        .collect();
    Ok(Raw {
        width: info.width as usize,
        height: info.height as usize,
        channels: keep,
        max,
        samples,
    })
}

/// Splits the next whitespace-delimited header token, skipping `#` comments.
fn pnm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
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
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

fn decode_pnm(bytes: &[u8], source: &Path) -> Result<Raw> {
    let channels = match &bytes[..2] {
        b"P6" => 3,
        b"P5" => 1,
        other => return Err(Error::UnsupportedFormat(format!("PNM magic {:?}", String::from_utf8_lossy(other)))),
    };
    let mut pos = 2;
    let mut field = |name: &str| -> Result<u32> {
        let tok = pnm_token(bytes, &mut pos).ok_or_else(|| corrupt(source, format!("missing {name}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt(source, format!("bad {name} `{}`", String::from_utf8_lossy(tok))))
    };
    let width = field("width")? as usize;
    let height = field("height")? as usize;
    let max = field("maxval")?;
    if max == 0 || max > 65535 {
        return Err(Error::UnsupportedFormat(format!("PNM maxval {max}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(corrupt(source, "header must end with one whitespace byte"));
    }
    pos += 1;
    let bytes_per = if max > 255 { 2 } else { 1 };
    let count = width * height * channels;
    let body = &bytes[pos..];
    if body.len() < count * bytes_per {
        return Err(Error::Truncated {
            expected: pos + count * bytes_per,
            actual: bytes.len(),
        });
    }
    let samples: Vec<u16> = if bytes_per == 1 {
        body[..count].iter().map(|&b| b as u16).collect()
    } else {
        body[..count * 2].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    if let Some(i) = samples.iter().position(|&s| s as u32 > max) {
        return Err(corrupt(source, format!("sample {i} exceeds maxval {max}")));
    }
    Ok(Raw {
        width,
        height,
        channels,
        max,
        samples,
    })
}

fn decode(bytes: &[u8], source: &Path) -> Result<Raw> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' {
        decode_pnm(bytes, source)
    } else {
        Err(Error::UnsupportedFormat(format!("{}: not PNG or binary PNM", source.display())))
    }
}

/// Decodes PNG or PPM/PGM bytes into an sRGB image; grey is replicated.
pub fn decode_image(bytes: &[u8], source: &Path) -> Result<Image> {
    Ok(decode(bytes, source)?.into_image())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    decode_image(&fs::read(path).at(path)?, path)
}

/// Reads a mask; colour files are averaged over channels.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    Ok(decode(&fs::read(path).at(path)?, path)?.into_mask())
}

fn encode_png(width: usize, height: usize, grey: bool, depth: BitDepth, samples: &[u16]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(if grey { png::ColorType::Grayscale } else { png::ColorType::Rgb });
        enc.set_depth(match depth {
            BitDepth::Eight => png::BitDepth::Eight,
            BitDepth::Sixteen => png::BitDepth::Sixteen,
        });
        let mut writer = enc.write_header()?;
        writer.write_image_data(&pack(samples, depth))?;
        writer.finish()?;
    }
    Ok(out)
}

fn pack(samples: &[u16], depth: BitDepth) -> Vec<u8> {
    match depth {
        BitDepth::Eight => samples.iter().map(|&s| s as u8).collect(),
        BitDepth::Sixteen => samples.iter().flat_map(|s| s.to_be_bytes()).collect(),
    }
}

fn encode_pnm(width: usize, height: usize, grey: bool, depth: BitDepth, samples: &[u16]) -> Vec<u8> {
    let magic = if grey { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{width} {height}\n{}\n", depth.max_value()).into_bytes();
    out.extend(pack(samples, depth));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Pnm,
}

impl ImageFormat {
    /// From the file extension: `png`, or `ppm`/`pgm`/`pnm`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("png") => Ok(ImageFormat::Png),
            Some("ppm" | "pgm" | "pnm") => Ok(ImageFormat::Pnm),
            _ => Err(Error::UnsupportedFormat(format!("{}: unknown extension", path.display()))),
        }
    }
}

pub fn encode_image(img: &Image, format: ImageFormat, depth: BitDepth) -> Result<Vec<u8>> {
    img.expect_space(ColorSpace::Srgb)?;
    let max = depth.max_value();
    let samples: Vec<u16> = img.data().iter().map(|&v| quantize(v, max)).collect();
    match format {
        ImageFormat::Png => encode_png(img.width(), img.height(), false, depth, &samples),
        ImageFormat::Pnm => Ok(encode_pnm(img.width(), img.height(), false, depth, &samples)),
    }
}

pub fn encode_mask(mask: &Mask, format: ImageFormat) -> Result<Vec<u8>> {
    let samples: Vec<u16> = mask.values().iter().map(|&v| quantize(v, 255)).collect();
    match format {
        ImageFormat::Png => encode_png(mask.width(), mask.height(), true, BitDepth::Eight, &samples),
        ImageFormat::Pnm => Ok(encode_pnm(mask.width(), mask.height(), true, BitDepth::Eight, &samples)),
    }
}

/// Writes in the format named by the extension.
pub fn write_image(path: impl AsRef<Path>, img: &Image, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_image(img, ImageFormat::from_path(path)?, depth)?;
    fs::write(path, bytes).at(path)
}

/// Writes an 8-bit greyscale mask.
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_mask(mask, ImageFormat::from_path(path)?)?;
    fs::write(path, bytes).at(path)
}
