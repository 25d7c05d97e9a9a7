use crate::raster::Image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Per-channel median over a `size x size` window, edge replication.
pub fn median(image: &Image, size: usize) -> Image {
    let r = (size / 2) as isize;
    let mut window = Vec::with_capacity(size * size);
    Image::from_fn(image.width(), image.height(), image.channels(), |x, y, c| {
        window.clear();
        for dy in -r..=r {
            for dx in -r..=r {
                window.push(image.get_clamped(x as isize + dx, y as isize + dy, c));
            }
        }
        let mid = window.len() / 2;
        *window.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
    })
}

/// Normalized 1-D Gaussian taps truncated at `4 sigma`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter().map(|t| (t / sum) as f32).collect()
}

/// Separable Gaussian blur, edge replication.
pub fn gaussian(image: &Image, sigma: f64) -> Image {
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let horizontal = Image::from_fn(image.width(), image.height(), image.channels(), |x, y, c| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| t * image.get_clamped(x as isize + i as isize - r, y as isize, c))
            .sum()
    });
    Image::from_fn(image.width(), image.height(), image.channels(), |x, y, c| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| t * horizontal.get_clamped(x as isize, y as isize + i as isize - r, c))
            .sum()
    })
}

/// Additive white Gaussian noise, clipped to `[0, 1]`.
pub fn gaussian_noise(image: &Image, sigma: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, sigma as f32).expect("finite sigma");
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_removes_an_impulse() {
        let mut img = Image::filled(5, 5, 1, 0.2);
        img.set(2, 2, 0, 1.0);
        let m = median(&img, 3);
        assert!(m.data().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn gaussian_preserves_constants_and_mass() {
        let taps = gaussian_kernel(1.0);
        assert_eq!(taps.len(), 9);
        assert!((taps.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        let flat = Image::filled(12, 7, 3, 0.3);
        assert!(gaussian(&flat, 1.0).data().iter().all(|v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn noise_is_seeded() {
        let img = Image::filled(8, 8, 3, 0.5);
        let a = gaussian_noise(&img, 0.05, 3);
        assert_eq!(a, gaussian_noise(&img, 0.05, 3));
        assert_ne!(a, gaussian_noise(&img, 0.05, 4));
        let mean: f32 = a.data().iter().sum::<f32>() / a.data().len() as f32;
        assert!((mean - 0.5).abs() < 0.02);
    }
}
