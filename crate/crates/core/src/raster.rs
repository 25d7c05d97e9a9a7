//! Planar-free interleaved float images in `[0, 1]`, plus the block view the
//! detector works on.

use crate::error::{Error, Result};
use crate::net::{BLOCK, BLOCK_LEN, INPUT_CHANNELS};
use crate::nn::Tensor;
use std::path::Path;

/// `height x width x channels`, row-major, interleaved, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} image needs {} values, got {}",
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
        Self {
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
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Edge-replicating lookup.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y, c)
    }

    /// Bilinear sample at a real pixel-centre coordinate with edge replication.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let p00 = self.get_clamped(xi, yi, c);
        let p10 = self.get_clamped(xi + 1, yi, c);
        let p01 = self.get_clamped(xi, yi + 1, c);
        let p11 = self.get_clamped(xi + 1, yi + 1, c);
        let top = p00 + fx * (p10 - p00);
        let bottom = p01 + fx * (p11 - p01);
        top + fy * (bottom - top)
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Round to the nearest 8-bit level and back.
    pub fn quantized(&self) -> Image {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
        out
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_vec(
            width,
            height,
            channels,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }

    /// Centre-aligned bilinear resampling to `width x height`.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Image::from_fn(width, height, self.channels, |x, y, c| {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            self.sample_bilinear(src_x, src_y, c)
        })
    }

    /// Copy of the `width x height` window whose top-left pixel is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Image {
        assert!(x0 + width <= self.width && y0 + height <= self.height, "crop out of bounds");
        Image::from_fn(width, height, self.channels, |x, y, c| self.get(x0 + x, y0 + y, c))
    }

    /// Replicate a single channel into three.
    pub fn to_rgb(&self) -> Image {
        match self.channels {
            3 => self.clone(),
            1 => Image::from_fn(self.width, self.height, 3, |x, y, _| self.get(x, y, 0)),
            _ => Image::from_fn(self.width, self.height, 3, |x, y, c| self.get(x, y, c.min(self.channels - 1))),
        }
    }

    /// Channel mean, for single-channel views of colour images.
    pub fn to_gray(&self) -> Image {
        Image::from_fn(self.width, self.height, 1, |x, y, _| {
            (0..self.channels).map(|c| self.get(x, y, c)).sum::<f32>() / self.channels as f32
        })
    }

    pub fn block_grid(&self) -> Result<(usize, usize)> {
        if self.width % BLOCK != 0 || self.height % BLOCK != 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Usage(format!(
                "image {}x{} is not divisible into {BLOCK}x{BLOCK} blocks",
                self.width, self.height
            )));
        }
        Ok((self.height / BLOCK, self.width / BLOCK))
    }

    /// All non-overlapping blocks in raster order as an `N x 8 x 8 x 3` batch.
    pub fn to_blocks(&self) -> Result<Tensor<f32>> {
        let (rows, cols) = self.block_grid()?;
        if self.channels != INPUT_CHANNELS {
            return Err(Error::Usage(format!(
                "blocks need {INPUT_CHANNELS} channels, image has {}",
                self.channels
            )));
        }
        let mut out = Vec::with_capacity(rows * cols * BLOCK_LEN);
        for br in 0..rows {
            for bc in 0..cols {
                for y in 0..BLOCK {
                    let start = ((br * BLOCK + y) * self.width + bc * BLOCK) * self.channels;
                    out.extend_from_slice(&self.data[start..start + BLOCK * self.channels]);
                }
            }
        }
        Tensor::from_vec(&[rows * cols, BLOCK, BLOCK, INPUT_CHANNELS], out)
    }

    /// Inverse of [`Image::to_blocks`].
    pub fn from_blocks(blocks: &Tensor<f32>, rows: usize, cols: usize) -> Result<Image> {
        if blocks.shape() != [rows * cols, BLOCK, BLOCK, INPUT_CHANNELS] {
            return Err(Error::Shape(format!(
                "{:?} blocks cannot tile a {rows}x{cols} grid",
                blocks.shape()
            )));
        }
        let (w, c) = (cols * BLOCK, INPUT_CHANNELS);
        let mut img = Image::new(w, rows * BLOCK, c);
        for (k, blk) in blocks.data().chunks_exact(BLOCK_LEN).enumerate() {
            let (br, bc) = (k / cols, k % cols);
            for y in 0..BLOCK {
                let start = ((br * BLOCK + y) * w + bc * BLOCK) * c;
                img.data[start..start + BLOCK * c]
                    .copy_from_slice(&blk[y * BLOCK * c..(y + 1) * BLOCK * c]);
            }
        }
        Ok(img)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let dynimg = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(&dynimg))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Image {
        let gray = matches!(
            img.color(),
            image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
        );
        if gray {
            let g = img.to_luma8();
            Image::from_u8(g.width() as usize, g.height() as usize, 1, g.as_raw()).expect("luma extents")
        } else {
            let rgb = img.to_rgb8();
            Image::from_u8(rgb.width() as usize, rgb.height() as usize, 3, rgb.as_raw()).expect("rgb extents")
        }
    }

    /// Write as 8-bit; format follows the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(Error::Usage(format!("cannot save a {c}-channel image"))),
        };
        image::save_buffer(path, &self.to_u8(), self.width as u32, self.height as u32, color).map_err(
            |source| Error::Image {
                path: path.to_path_buf(),
                source,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |x, y, c| ((x * 7 + y * 3 + c * 11) % 256) as f32 / 255.0)
    }

    #[test]
    fn blocks_round_trip() {
        let img = ramp(24, 16);
        let blocks = img.to_blocks().unwrap();
        assert_eq!(blocks.shape(), &[6, 8, 8, 3]);
        // block (row 1, col 2) starts at pixel (16, 8)
        assert_eq!(blocks.data()[5 * BLOCK_LEN], img.get(16, 8, 0));
        assert_eq!(Image::from_blocks(&blocks, 2, 3).unwrap(), img);
    }

    #[test]
    fn indivisible_image_is_rejected() {
        assert!(matches!(ramp(20, 16).to_blocks(), Err(Error::Usage(_))));
    }

    #[test]
    fn bilinear_interpolates_and_replicates_edges() {
        let img = Image::from_vec(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(img.sample_bilinear(0.25, 0.0, 0), 0.25);
        assert_eq!(img.sample_bilinear(-3.0, 0.0, 0), 0.0);
        assert_eq!(img.sample_bilinear(5.0, 2.0, 0), 1.0);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ramp(16, 16);
        assert_eq!(img.resize(16, 16), img);
        let flat = Image::filled(10, 6, 3, 0.4);
        assert!(flat.resize(7, 13).data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn quantization_is_idempotent() {
        let q = ramp(8, 8).quantized();
        assert_eq!(q.quantized(), q);
        assert_eq!(Image::from_u8(8, 8, 3, &q.to_u8()).unwrap(), q);
    }
}
