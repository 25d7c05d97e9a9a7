use crate::error::{Error, Result};
use crate::net::BLOCK;
use crate::raster::Image;
use rand::Rng;

/// One message bit per image block, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WatermarkMap {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
}

impl WatermarkMap {
    pub fn from_bits(rows: usize, cols: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} watermark needs {} bits, got {}",
                rows * cols,
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Usage("watermark bits must be 0 or 1".into()));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![0; rows * cols],
        }
    }

    pub fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        Self {
            rows,
            cols,
            bits: (0..rows * cols).map(|_| rng.random_range(0..2u8)).collect(),
        }
    }

    /// Map sized for `image`, one bit per block.
    pub fn for_image(image: &Image) -> Result<Self> {
        let (rows, cols) = image.block_grid()?;
        Ok(Self::zeros(rows, cols))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }
    pub fn len(&self) -> usize {
        self.bits.len()
    }
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.bits[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, bit: u8) {
        self.bits[row * self.cols + col] = bit & 1;
    }

    /// Bit at a raster-order block index.
    pub fn bit(&self, index: usize) -> Result<u8> {
        self.bits.get(index).copied().ok_or_else(|| {
            Error::Usage(format!(
                "block index {index} outside a {}x{} watermark",
                self.rows, self.cols
            ))
        })
    }

    pub fn complement(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits.iter().map(|b| 1 - b).collect(),
        }
    }

    /// Fraction of positions where the maps agree.
    pub fn agreement(&self, other: &Self) -> f64 {
        assert_eq!(self.bits.len(), other.bits.len(), "watermark size mismatch");
        let same = self.bits.iter().zip(&other.bits).filter(|(a, b)| a == b).count();
        same as f64 / self.bits.len() as f64
    }

    /// Grayscale image with every bit expanded to a `BLOCK x BLOCK` tile.
    pub fn render(&self) -> Image {
        Image::from_fn(self.cols * BLOCK, self.rows * BLOCK, 1, |x, y, _| {
            self.get(y / BLOCK, x / BLOCK) as f32
        })
    }

    /// Re-derive block labels from a rendered map: a block reads 1 when its
    /// mean is strictly above 0.5.
    pub fn from_rendered(img: &Image) -> Result<Self> {
        let (rows, cols) = img.block_grid()?;
        let mut bits = Vec::with_capacity(rows * cols);
        for br in 0..rows {
            for bc in 0..cols {
                let mut sum = 0.0f64;
                for y in 0..BLOCK {
                    for x in 0..BLOCK {
                        for c in 0..img.channels() {
                            sum += img.get(bc * BLOCK + x, br * BLOCK + y, c) as f64;
                        }
                    }
                }
                let mean = sum / (BLOCK * BLOCK * img.channels()) as f64;
                bits.push(label_from_mean(mean));
            }
        }
        Ok(Self { rows, cols, bits })
    }

    /// One pixel per bit, white = 1.
    pub fn to_image(&self) -> Image {
        Image::from_fn(self.cols, self.rows, 1, |x, y, _| self.get(y, x) as f32)
    }

    /// Binarize at 0.5, then nearest-neighbour resample to `rows x cols`.
    pub fn from_image(img: &Image, rows: usize, cols: usize) -> Self {
        let gray = img.to_gray();
        let mut bits = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let x = ((c as f64 + 0.5) * gray.width() as f64 / cols as f64) as usize;
                let y = ((r as f64 + 0.5) * gray.height() as f64 / rows as f64) as usize;
                let v = gray.get(x.min(gray.width() - 1), y.min(gray.height() - 1), 0);
                bits.push((v > 0.5) as u8);
            }
        }
        Self { rows, cols, bits }
    }

    /// `0`/`1` characters, row-major, rows separated by nothing.
    pub fn bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }
}

/// Threshold rule shared by training labels: mean > 0.5 is bit 1, ties are 0.
pub fn label_from_mean(mean: f64) -> u8 {
    (mean > 0.5) as u8
}
