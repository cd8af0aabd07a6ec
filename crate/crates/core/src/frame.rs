//! 8-bit frames, float planes, and lossless raster IO.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat};

use crate::error::{Error, Result};

/// Interleaved 8-bit image, the codec's input and output unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Single channel of 32-bit float samples, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, color: &[u8]) -> Self {
        let mut data = Vec::with_capacity(width * height * color.len());
        for _ in 0..width * height {
            data.extend_from_slice(color);
        }
        Self {
            width,
            height,
            channels: color.len(),
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn raw_bytes(&self) -> usize {
        self.data.len()
    }

    /// Splits into per-channel planes scaled to [0, 1].
    pub fn to_planes(&self) -> Vec<Plane> {
        (0..self.channels)
            .map(|c| Plane {
                width: self.width,
                height: self.height,
                data: self
                    .data
                    .iter()
                    .skip(c)
                    .step_by(self.channels)
                    .map(|&v| v as f32 / 255.0)
                    .collect(),
            })
            .collect()
    }

    /// Inverse of [`Frame::to_planes`]: rescales, rounds and clamps to 8 bits.
    pub fn from_planes(planes: &[Plane]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Shape("no planes".into()))?;
        let (width, height) = (first.width, first.height);
        if planes
            .iter()
            .any(|p| p.width != width || p.height != height)
        {
            return Err(Error::Shape("planes differ in size".into()));
        }
        let channels = planes.len();
        let mut frame = Frame::new(width, height, channels);
        for (c, plane) in planes.iter().enumerate() {
            for (i, &v) in plane.data.iter().enumerate() {
                frame.data[i * channels + c] = to_u8(v);
            }
        }
        Ok(frame)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        Ok(Self::from_dynamic(img))
    }

    pub fn from_dynamic(img: DynamicImage) -> Self {
        match img {
            DynamicImage::ImageLuma8(buf) => Self {
                width: buf.width() as usize,
                height: buf.height() as usize,
                channels: 1,
                data: buf.into_raw(),
            },
            DynamicImage::ImageRgba8(buf) => Self {
                width: buf.width() as usize,
                height: buf.height() as usize,
                channels: 4,
                data: buf.into_raw(),
            },
            other => {
                let buf = other.to_rgb8();
                Self {
                    width: buf.width() as usize,
                    height: buf.height() as usize,
                    channels: 3,
                    data: buf.into_raw(),
                }
            }
        }
    }

    pub fn to_dynamic(&self) -> Result<DynamicImage> {
        let (w, h) = (self.width as u32, self.height as u32);
        let data = self.data.clone();
        let bad = || {
            Error::Shape(format!(
                "cannot wrap {} channels as an image",
                self.channels
            ))
        };
        Ok(match self.channels {
            1 => DynamicImage::ImageLuma8(ImageBuffer::from_raw(w, h, data).ok_or_else(bad)?),
            2 => DynamicImage::ImageLumaA8(ImageBuffer::from_raw(w, h, data).ok_or_else(bad)?),
            3 => DynamicImage::ImageRgb8(ImageBuffer::from_raw(w, h, data).ok_or_else(bad)?),
            4 => DynamicImage::ImageRgba8(ImageBuffer::from_raw(w, h, data).ok_or_else(bad)?),
            _ => return Err(bad()),
        })
    }

    /// Writes PNG or binary PNM depending on the extension (PNG when unknown).
    pub fn save(&self, path: &Path) -> Result<()> {
        let format = ImageFormat::from_path(path).unwrap_or(ImageFormat::Png);
        let format = match format {
            ImageFormat::Pnm => ImageFormat::Pnm,
            _ => ImageFormat::Png,
        };
        self.to_dynamic()?.save_with_format(path, format)?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_dynamic()?.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

#[inline]
pub(crate) fn to_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Loads every image in `dir`, ordered lexicographically by file name.
pub fn load_frame_dir(dir: &Path) -> Result<Vec<Frame>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    ImageFormat::from_path(p),
                    Ok(ImageFormat::Png | ImageFormat::Pnm)
                )
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| Frame::load(p)).collect()
}
