//! Invisibility (PSNR) and robustness (NC) scores.

use crate::error::{Error, Result};
use crate::raster::Image;

/// PSNR of two images on the 8-bit scale:
/// `10 log10(255² · 3MN / ‖I − I'‖²)` over all channel values.
///
/// Both images are quantized to 8 bits first. Identical images give `+inf`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(Error::Usage(format!(
            "psnr of {:?}x{} and {:?}x{} images",
            a.dims(),
            a.channels(),
            b.dims(),
            b.channels()
        )));
    }
    let sq: f64 = a
        .to_u8()
        .iter()
        .zip(b.to_u8())
        .map(|(&x, y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(psnr_from_sse(sq, a.data().len()))
}

/// PSNR given a sum of squared 8-bit differences over `count` values.
pub fn psnr_from_sse(sse: f64, count: usize) -> f64 {
    if sse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (255.0f64 * 255.0 * count as f64 / sse).log10()
}

/// Normalized correlation `<w, w'> / (‖w‖ ‖w'‖)` of two bit sequences read as 0/1 reals.
pub fn nc(w: &[u8], w_prime: &[u8]) -> Result<f64> {
    if w.len() != w_prime.len() {
        return Err(Error::Usage(format!(
            "normalized correlation of {} and {} bits",
            w.len(),
            w_prime.len()
        )));
    }
    let dot: f64 = w.iter().zip(w_prime).map(|(&a, &b)| (a as f64) * (b as f64)).sum();
    let na: f64 = w.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = w_prime.iter().map(|&b| (b as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 {
        return Err(Error::UndefinedNc("embedded watermark has no set bits"));
    }
    if nb == 0.0 {
        return Err(Error::UndefinedNc("extracted watermark has no set bits"));
    }
    Ok(dot / (na * nb))
}
