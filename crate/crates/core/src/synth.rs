//! Seeded synthetic covers and shape watermarks for demos and tests.

use crate::raster::Image;
use crate::watermark::WatermarkMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A photo-like cover: smooth colour gradients, a few soft-edged shapes and
/// fine texture. Values stay inside `[0.02, 0.98]`.
pub fn cover(size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;
    let waves: Vec<[f32; 5]> = (0..4)
        .map(|_| {
            [
                rng.random_range(0.5..3.0) / s,
                rng.random_range(0.5..3.0) / s,
                rng.random_range(0.0..std::f32::consts::TAU),
                rng.random_range(0.05..0.2),
                rng.random_range(0.0..3.0f32).floor(),
            ]
        })
        .collect();
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.75));
    let shapes: Vec<([f32; 4], [f32; 3])> = (0..rng.random_range(2..6))
        .map(|_| {
            (
                [
                    rng.random_range(0.0..s),
                    rng.random_range(0.0..s),
                    rng.random_range(0.08..0.35) * s,
                    rng.random_range(0.08..0.35) * s,
                ],
                std::array::from_fn(|_| rng.random_range(-0.3..0.3)),
            )
        })
        .collect();
    let texture = rng.random_range(0.01..0.06f32);
    let grain: Vec<f32> = (0..size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
    Image::from_fn(size, size, 3, |x, y, c| {
        let (xf, yf) = (x as f32, y as f32);
        let mut v = base[c];
        for w in &waves {
            let ch = w[4] as usize;
            let amp = if ch == c { w[3] } else { w[3] * 0.4 };
            v += amp * (std::f32::consts::TAU * (w[0] * xf + w[1] * yf) + w[2]).sin();
        }
        for (geo, col) in &shapes {
            let dx = (xf - geo[0]) / geo[2];
            let dy = (yf - geo[1]) / geo[3];
            let r = (dx * dx + dy * dy).sqrt();
            let inside = (1.0 - r).clamp(0.0, 0.15) / 0.15;
            v += col[c] * inside;
        }
        v += texture * grain[y * size + x];
        v.clamp(0.02, 0.98)
    })
}

/// `count` covers with consecutive seeds starting at `seed`.
pub fn covers(size: usize, count: usize, seed: u64) -> Vec<(String, Image)> {
    (0..count)
        .map(|i| (format!("synth{:04}", i), cover(size, seed.wrapping_add(i as u64))))
        .collect()
}

/// Binary shape maps (disc, ring, bars, cross, checker, diamond, random blobs).
pub fn shape_watermark(rows: usize, cols: usize, kind: usize, seed: u64) -> WatermarkMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cy, cx) = (rows as f64 / 2.0 - 0.5, cols as f64 / 2.0 - 0.5);
    let rad = rows.min(cols) as f64 * rng.random_range(0.25..0.45);
    let period = rng.random_range(2..5usize.max(3));
    let blobs: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.0..rows as f64),
                rng.random_range(0.0..cols as f64),
                rows.min(cols) as f64 * rng.random_range(0.1..0.25),
            )
        })
        .collect();
    let mut bits = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            let d = (dx * dx + dy * dy).sqrt();
            let on = match kind % 7 {
                0 => d <= rad,
                1 => d <= rad && d >= rad * 0.55,
                2 => (c / period) % 2 == 0,
                3 => dx.abs() <= rad * 0.3 || dy.abs() <= rad * 0.3,
                4 => ((r / period) + (c / period)) % 2 == 0,
                5 => dx.abs() + dy.abs() <= rad * 1.2,
                _ => blobs
                    .iter()
                    .any(|&(by, bx, br)| ((r as f64 - by).powi(2) + (c as f64 - bx).powi(2)).sqrt() <= br),
            };
            bits.push(on as u8);
        }
    }
    WatermarkMap::from_bits(rows, cols, bits).expect("sized above")
}

pub fn shape_watermarks(rows: usize, cols: usize, count: usize, seed: u64) -> Vec<WatermarkMap> {
    (0..count)
        .map(|i| shape_watermark(rows, cols, i, seed.wrapping_add(i as u64)))
        .collect()
}
