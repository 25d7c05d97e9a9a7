use crate::error::{Error, Result};
use crate::raster::Image;
use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageFormat};

/// Identity of the baseline codec used for A2/A3, recorded in reports.
pub const JPEG_CODEC: &str = "image-rs 0.25 JpegEncoder (baseline) + zune-jpeg decoder";

/// Encode at `quality` (1–100) and decode again.
pub fn jpeg_round_trip(image: &Image, quality: u8) -> Result<Image> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Usage(format!("jpeg quality {quality} outside 1..=100")));
    }
    let color = match image.channels() {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(Error::Usage(format!("jpeg needs 1 or 3 channels, got {c}"))),
    };
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode(&image.to_u8(), image.width() as u32, image.height() as u32, color)
        .map_err(|e| Error::Codec(e.to_string()))?;
    let decoded = image::load_from_memory_with_format(&buf, ImageFormat::Jpeg)
        .map_err(|e| Error::Codec(e.to_string()))?;
    let out = if image.channels() == 1 {
        let g = decoded.to_luma8();
        Image::from_u8(g.width() as usize, g.height() as usize, 1, g.as_raw())?
    } else {
        let rgb = decoded.to_rgb8();
        Image::from_u8(rgb.width() as usize, rgb.height() as usize, 3, rgb.as_raw())?
    };
    if out.dims() != image.dims() {
        return Err(Error::Codec(format!(
            "decoded {:?}, encoded {:?}",
            out.dims(),
            image.dims()
        )));
    }
    Ok(out)
}
