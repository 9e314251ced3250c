//! Floating-point raster images and 8-bit file I/O.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Interleaved (row-major, channel-last) image with values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::input(format!(
                "{} values for a {width}×{height}×{channels} image",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Single-channel image holding the mean over channels.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let scale = 1.0 / self.channels as f32;
        let data = self
            .data
            .chunks(self.channels)
            .map(|px| px.iter().sum::<f32>() * scale)
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// 1×C×H×W tensor.
    pub fn to_tensor(&self) -> Tensor4<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        Tensor4::from_vec(Shape4::new(1, self.channels, self.height, self.width), out)
            .expect("planar copy has the image's size")
    }

    /// Bilinear resize with half-pixel centers.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let xs = resize_taps(self.width, width);
        let ys = resize_taps(self.height, height);
        let mut out = Image::new(width, height, self.channels);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                for c in 0..self.channels {
                    let top = self.get(x0, y0, c) * (1.0 - fx) + self.get(x1, y0, c) * fx;
                    let bot = self.get(x0, y1, c) * (1.0 - fx) + self.get(x1, y1, c) * fx;
                    out.set(ox, oy, c, top * (1.0 - fy) + bot * fy);
                }
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Image> {
        let img = open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Image::from_vec(w as usize, h as usize, 3, data)
    }

    /// Writes an 8-bit PNG; values are clamped to [0, 1] and rounded.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let dynamic = match self.channels {
            1 => DynamicImage::ImageLuma8(
                GrayImage::from_raw(w, h, bytes).expect("buffer sized from dims"),
            ),
            3 => DynamicImage::ImageRgb8(
                RgbImage::from_raw(w, h, bytes).expect("buffer sized from dims"),
            ),
            c => {
                return Err(Error::input(format!(
                    "cannot write a {c}-channel image as PNG"
                )))
            }
        };
        save(&dynamic, path)
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Source taps for resizing an axis of `src` samples to `dst` samples.
pub(crate) fn resize_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

/// Nearest-neighbour source index for each destination sample.
pub(crate) fn nearest_taps(src: usize, dst: usize) -> Vec<usize> {
    (0..dst)
        .map(|o| (((o as f64 + 0.5) * src as f64 / dst as f64) as usize).min(src - 1))
        .collect()
}

/// Width and height from an image file's header.
pub fn image_dims(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((w as usize, h as usize))
}

/// Reads a label PNG as one byte per pixel. Color images reduce to the max
/// over channels, so any non-black label color stays nonzero.
pub fn load_labels(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| p.0.into_iter().max().unwrap_or(0))
            .collect(),
    };
    Ok((w, h, labels))
}

/// Writes a binary mask as a grayscale PNG with values 0 / 255.
pub fn save_mask_png(width: usize, height: usize, mask: &[u8], path: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, bytes)
            .ok_or_else(|| Error::input("mask buffer does not match its dimensions"))?;
    save(&DynamicImage::ImageLuma8(img), path)
}

/// Writes 8-bit RGB pixels.
pub fn save_rgb_png(width: usize, height: usize, rgb: Vec<u8>, path: &Path) -> Result<()> {
    let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| Error::input("rgb buffer does not match its dimensions"))?;
    save(&DynamicImage::ImageRgb8(img), path)
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn save(img: &DynamicImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
