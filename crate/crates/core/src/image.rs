//! RGB float images, binary masks and 8-bit PNG I/O.

use std::io::{BufWriter, Cursor};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `height x width x 3` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Row-major foreground mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn decode_png(bytes: &[u8], what: &Path) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::schema(what, format!("not a PNG: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::schema(what, format!("corrupt PNG: {e}")))?;
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type, buf))
}

fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io("writing image", path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io("reading image", path, e))
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidInput(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self { width, height, data }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Rounds to the 8-bit grid, so the result survives a PNG round trip exactly.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| to_u8(*v) as f32 / 255.0).collect(),
        }
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let bytes: Vec<u8> = self.data.iter().map(|v| to_u8(*v)).collect();
        encode_png(self.width, self.height, png::ColorType::Rgb, &bytes)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        Self::decode(bytes, Path::new("<memory>"))
    }

    fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let (width, height, color, buf) = decode_png(bytes, path)?;
        let channels = match color {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Indexed => return Err(Error::schema(path, "unexpanded palette PNG")),
        };
        let mut data = Vec::with_capacity(width * height * 3);
        for px in buf.chunks_exact(channels) {
            let rgb = if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
            data.extend(rgb.iter().map(|v| *v as f32 / 255.0));
        }
        Ok(Self { width, height, data })
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_png_bytes())
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?, path)
    }

    /// Horizontally mirrored copy.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.set_pixel(r, self.width - 1 - c, self.pixel(r, c));
            }
        }
        out
    }
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "mask has {} entries, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let bytes: Vec<u8> = self.data.iter().map(|b| if *b { 255 } else { 0 }).collect();
        encode_png(self.width, self.height, png::ColorType::Grayscale, &bytes)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        Self::decode(bytes, Path::new("<memory>"))
    }

    fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let (width, height, color, buf) = decode_png(bytes, path)?;
        let channels = color.samples();
        let data = buf.chunks_exact(channels).map(|px| px[0] >= 128).collect();
        Ok(Self { width, height, data })
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_png_bytes())
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?, path)
    }
}
