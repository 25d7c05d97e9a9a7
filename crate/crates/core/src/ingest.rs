//! Loading cover images and watermark images from directories.

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::watermark::WatermarkMap;
use image::imageops::FilterType;
use std::path::{Path, PathBuf};

/// Files read from a directory plus the ones that could not be decoded.
#[derive(Debug)]
pub struct Ingested<T> {
    /// `(file stem, item)` in lexicographic file-name order.
    pub items: Vec<(String, T)>,
    pub skipped: Vec<(PathBuf, String)>,
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .filter(|p| !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string()
}

fn decode_all(dir: &Path) -> Result<Ingested<image::DynamicImage>> {
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for path in sorted_files(dir)? {
        match image::open(&path) {
            Ok(img) => items.push((stem(&path), img)),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push((path, e.to_string()));
            }
        }
    }
    if items.is_empty() {
        return Err(Error::EmptyCorpus(dir.to_path_buf()));
    }
    Ok(Ingested { items, skipped })
}

/// Scale so the shorter side is `size` (area-aware filter), centre-crop to
/// `size x size`, replicate grayscale to three channels.
pub fn normalize_cover(img: &image::DynamicImage, size: usize) -> Image {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let scale = size as f64 / w.min(h) as f64;
    let sw = ((w as f64 * scale).round() as usize).max(size);
    let sh = ((h as f64 * scale).round() as usize).max(size);
    let resized = if (sw, sh) == (w, h) {
        img.clone()
    } else {
        img.resize_exact(sw as u32, sh as u32, FilterType::Triangle)
    };
    let full = Image::from_dynamic(&resized).to_rgb();
    full.crop((sw - size) / 2, (sh - size) / 2, size, size)
}

/// Every decodable image under `dir`, normalized to `size x size x 3`.
pub fn ingest_images(dir: impl AsRef<Path>, size: usize) -> Result<Ingested<Image>> {
    let raw = decode_all(dir.as_ref())?;
    Ok(Ingested {
        items: raw.items.into_iter().map(|(n, img)| (n, normalize_cover(&img, size))).collect(),
        skipped: raw.skipped,
    })
}

/// Every decodable image under `dir` as a `rows x cols` bit map.
pub fn ingest_watermarks(dir: impl AsRef<Path>, rows: usize, cols: usize) -> Result<Ingested<WatermarkMap>> {
    let raw = decode_all(dir.as_ref())?;
    Ok(Ingested {
        items: raw
            .items
            .into_iter()
            .map(|(n, img)| (n, WatermarkMap::from_image(&Image::from_dynamic(&img), rows, cols)))
            .collect(),
        skipped: raw.skipped,
    })
}
