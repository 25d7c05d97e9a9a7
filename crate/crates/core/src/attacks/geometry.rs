use crate::raster::Image;

/// 2x2 linear map on pixel coordinates `(x, y)`, origin at the top-left pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine2 {
    pub m: [[f64; 2]; 2],
}

impl Affine2 {
    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { m: [[a, b], [c, d]] }
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d.abs() < 1e-12 {
            return None;
        }
        let m = self.m;
        Some(Self::new(m[1][1] / d, -m[0][1] / d, -m[1][0] / d, m[0][0] / d))
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y,
            self.m[1][0] * x + self.m[1][1] * y,
        )
    }
}

const AFFINES: [Affine2; 6] = [
    Affine2::new(1.0, 0.0, 0.01, 1.0),
    Affine2::new(1.0, 0.01, 0.0, 1.0),
    Affine2::new(1.0, 0.01, 0.01, 1.0),
    Affine2::new(1.01, 0.013, 0.009, 1.011),
    Affine2::new(1.007, 0.01, 0.01, 1.012),
    Affine2::new(1.013, 0.008, 0.011, 1.008),
];

/// The small StirMark-style shears/scalings `M1..M6`.
pub fn affine_matrix(index: u8) -> Option<Affine2> {
    AFFINES.get((index as usize).checked_sub(1)?).copied()
}

/// Backward warp: every output pixel `p` takes the bilinear sample at `source_of(p)`.
pub fn warp_affine(image: &Image, source_of: &Affine2) -> Image {
    Image::from_fn(image.width(), image.height(), image.channels(), |x, y, c| {
        let (sx, sy) = source_of.apply(x as f64, y as f64);
        image.sample_bilinear(sx, sy, c)
    })
}

/// Counter-clockwise (as displayed) rotation about the image centre, bilinear,
/// edge replication outside the frame.
pub fn rotate(image: &Image, degrees: f64) -> Image {
    let (s, c) = degrees.to_radians().sin_cos();
    let cx = (image.width() as f64 - 1.0) / 2.0;
    let cy = (image.height() as f64 - 1.0) / 2.0;
    Image::from_fn(image.width(), image.height(), image.channels(), |x, y, ch| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let sx = cx + dx * c - dy * s;
        let sy = cy + dx * s + dy * c;
        image.sample_bilinear(sx, sy, ch)
    })
}

fn quarter_turn(image: &Image) -> Image {
    let (w, h) = image.dims();
    // output is h wide and w tall; output row r, column k reads input row k, column w-1-r
    Image::from_fn(h, w, image.channels(), |k, r, c| image.get(w - 1 - r, k, c))
}

pub fn quarter_turns(image: &Image, turns: u8) -> Image {
    let mut out = image.clone();
    for _ in 0..turns % 4 {
        out = quarter_turn(&out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn m1_moves_the_probe_pixel() {
        let m1 = affine_matrix(1).unwrap();
        let (x, y) = m1.apply(100.0, 50.0);
        assert!((x - 100.0).abs() < 1e-12 && (y - 51.0).abs() < 1e-12);
    }

    #[test]
    fn determinant_fingerprints() {
        // direct 2x2 evaluation of the six matrices
        let want = [1.0, 1.0, 0.9999, 1.020993, 1.018984, 1.021016];
        for (i, w) in want.iter().enumerate() {
            let m = affine_matrix(i as u8 + 1).unwrap();
            assert!((m.det() - w).abs() < 1e-9, "M{}: {}", i + 1, m.det());
        }
        assert!(affine_matrix(0).is_none() && affine_matrix(7).is_none());
    }

    #[test]
    fn inverse_composes_to_identity() {
        for i in 1..=6 {
            let m = affine_matrix(i).unwrap();
            let inv = m.inverse().unwrap();
            let (x, y) = inv.apply(m.apply(37.5, -12.25).0, m.apply(37.5, -12.25).1);
            assert!((x - 37.5).abs() < 1e-9 && (y + 12.25).abs() < 1e-9);
        }
        assert!(Affine2::new(1.0, 2.0, 2.0, 4.0).inverse().is_none());
    }

    #[test]
    fn rotation_by_zero_is_identity_and_pixels_move_ccw() {
        let img = Image::from_fn(9, 9, 1, |x, y, _| (x + 9 * y) as f32 / 81.0);
        assert_eq!(rotate(&img, 0.0), img);
        let marked = Image::from_fn(9, 9, 1, |x, y, _| (x == 8 && y == 4) as u8 as f32);
        let r = rotate(&marked, 90.0);
        // right-middle goes to top-middle
        assert!((r.get(4, 0, 0) - 1.0).abs() < 1e-5);
        assert_eq!(quarter_turns(&marked, 1), r);
    }
}
