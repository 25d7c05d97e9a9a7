//! Blind extraction: the detector alone reads the bit back from each block.

use crate::error::Result;
use crate::net::{BlockPrediction, DetectorWeights, BLOCK, BLOCK_LEN, INPUT_CHANNELS};
use crate::nn::Tensor;
use crate::raster::Image;
use crate::watermark::WatermarkMap;

const CHUNK: usize = 256;

/// `0` when `p0 > 0.5`, otherwise `1` (an exact tie reads as `1`).
pub fn decide(pred: BlockPrediction) -> u8 {
    if pred.p0 > 0.5 {
        0
    } else {
        1
    }
}

pub fn extract_block(w: &DetectorWeights, block: &Tensor<f32>) -> Result<u8> {
    Ok(decide(w.forward(block)?))
}

/// Bits for an `N x 8 x 8 x 3` batch.
pub fn extract_blocks(w: &DetectorWeights, blocks: &Tensor<f32>) -> Result<Vec<u8>> {
    let n = blocks.shape().first().copied().unwrap_or(0);
    let len = BLOCK_LEN;
    let mut bits = Vec::with_capacity(n);
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let chunk = Tensor::from_vec(
            &[end - start, BLOCK, BLOCK, INPUT_CHANNELS],
            blocks.data()[start * len..end * len].to_vec(),
        )?;
        bits.extend(w.predict(&chunk)?.into_iter().map(decide));
    }
    Ok(bits)
}

/// Read one bit from every block of `image`.
pub fn extract_image(w: &DetectorWeights, image: &Image) -> Result<WatermarkMap> {
    let (rows, cols) = image.block_grid()?;
    let blocks = image.to_rgb().to_blocks()?;
    WatermarkMap::from_bits(rows, cols, extract_blocks(w, &blocks)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_rule() {
        assert_eq!(decide(BlockPrediction { p0: 0.6, p1: 0.4 }), 0);
        assert_eq!(decide(BlockPrediction { p0: 0.4, p1: 0.6 }), 1);
        assert_eq!(decide(BlockPrediction { p0: 0.5, p1: 0.5 }), 1);
    }

    #[test]
    fn zeroed_head_reads_ones() {
        let mut w = DetectorWeights::new(4, 0);
        let head = w.layers.last_mut().unwrap();
        head.kernel = head.kernel.map(|_| 0.0);
        let img = Image::filled(16, 8, 3, 0.3);
        assert_eq!(extract_image(&w, &img).unwrap().bits(), &[1, 1]);
    }

    #[test]
    fn block_order_follows_raster() {
        let w = DetectorWeights::new(8, 3);
        let img = Image::from_fn(24, 16, 3, |x, y, c| ((x * 13 + y * 7 + c * 5) % 17) as f32 / 16.0);
        let whole = extract_image(&w, &img).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                let blk = img.crop(c * 8, r * 8, 8, 8).to_blocks().unwrap().reshape(&[8, 8, 3]).unwrap();
                assert_eq!(extract_block(&w, &blk).unwrap(), whole.get(r, c));
            }
        }
    }
}
