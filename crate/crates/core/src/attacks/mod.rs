//! The attack battery A1–A16, the matching distortion of the watermark map,
//! and exact registration for geometric attacks.

mod filter;
mod geometry;
mod jpeg;
mod manifest;

pub use geometry::{affine_matrix, warp_affine, Affine2};
pub use jpeg::{jpeg_round_trip, JPEG_CODEC};
pub use manifest::{parse_manifest, write_manifest};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::watermark::WatermarkMap;
use std::fmt;

/// Fill value for regions that registration cannot recover.
pub const MID_GRAY: f32 = 0.5;
/// Additive noise level of A12 on the `[0, 1]` scale.
pub const DEFAULT_NOISE_SIGMA: f64 = 5.0 / 255.0;

#[derive(Clone, Debug, PartialEq)]
pub enum AttackKind {
    Identity,
    Jpeg { quality: u8 },
    Median { size: usize },
    Gaussian { sigma: f64 },
    /// Forward pixel map `p' = M p` about the top-left pixel.
    Affine { matrix: Affine2 },
    Noise { sigma: f64, seed: u64 },
    /// Down-scale by `factor`, then back up to the original size.
    Rescale { factor: f64 },
    /// Counter-clockwise rotation about the image centre.
    Rotate { degrees: f64 },
    /// Counter-clockwise quarter turns; lossless.
    QuarterTurn { turns: u8 },
    /// Central crop keeping `keep` of each dimension.
    Crop { keep: f64 },
}

/// One entry of the battery: its table id (1 for A1 ... 16 for A16) and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackSpec {
    pub id: u8,
    pub kind: AttackKind,
}

impl AttackSpec {
    /// The battery entry `A{id}` with its default parameters.
    pub fn standard(id: u8) -> Result<Self> {
        let kind = match id {
            1 => AttackKind::Identity,
            2 => AttackKind::Jpeg { quality: 80 },
            3 => AttackKind::Jpeg { quality: 90 },
            4 => AttackKind::Median { size: 3 },
            5 => AttackKind::Gaussian { sigma: 1.0 },
            6..=11 => AttackKind::Affine {
                matrix: affine_matrix(id - 5).expect("indices 1..=6"),
            },
            12 => AttackKind::Noise {
                sigma: DEFAULT_NOISE_SIGMA,
                seed: 0,
            },
            13 => AttackKind::Rescale { factor: 0.75 },
            14 => AttackKind::Rotate { degrees: 10.0 },
            15 => AttackKind::QuarterTurn { turns: 1 },
            16 => AttackKind::Crop { keep: 0.8 },
            _ => return Err(Error::Usage(format!("unknown attack id A{id}"))),
        };
        Ok(Self { id, kind })
    }

    /// A1 through A16 with defaults.
    pub fn battery() -> Vec<Self> {
        (1..=16).map(|i| Self::standard(i).expect("valid id")).collect()
    }

    /// Specs for a list of ids.
    pub fn list(ids: &[u8]) -> Result<Vec<Self>> {
        ids.iter().map(|&i| Self::standard(i)).collect()
    }

    pub fn label(&self) -> String {
        format!("A{}", self.id)
    }

    pub fn description(&self) -> String {
        match &self.kind {
            AttackKind::Identity => "No attack".into(),
            AttackKind::Jpeg { quality } => format!("JPEG {quality}"),
            AttackKind::Median { size } => format!("Median filtering {size}x{size}"),
            AttackKind::Gaussian { sigma } => format!("Gaussian filtering sigma={sigma}"),
            AttackKind::Affine { .. } => match self.id {
                6..=11 => format!("Affine {}", self.id - 5),
                _ => "Affine".into(),
            },
            AttackKind::Noise { sigma, .. } => format!("Noising sigma={:.4}", sigma),
            AttackKind::Rescale { factor } => format!("Resizing {:.0}%", factor * 100.0),
            AttackKind::Rotate { degrees } => format!("Rotation {degrees} deg"),
            AttackKind::QuarterTurn { turns } => format!("Rotation {} deg", 90 * *turns as u32),
            AttackKind::Crop { keep } => format!("Cropping {:.0}% per dimension", keep * 100.0),
        }
    }

    /// True when the attack moves pixels (and therefore the watermark too).
    pub fn is_geometric(&self) -> bool {
        !matches!(
            self.kind,
            AttackKind::Identity
                | AttackKind::Jpeg { .. }
                | AttackKind::Median { .. }
                | AttackKind::Gaussian { .. }
                | AttackKind::Noise { .. }
        )
    }

    /// Copy of this spec with a different noise seed (no-op for other attacks).
    pub fn with_noise_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        if let AttackKind::Noise { seed: s, .. } = &mut out.kind {
            *s = seed;
        }
        out
    }

    fn wrap<T>(&self, r: Result<T>) -> Result<T> {
        r.map_err(|e| Error::Attack {
            attack: self.label(),
            source: Box::new(e),
        })
    }

    /// Distort `image`. Output is clipped to `[0, 1]`; crops and quarter turns
    /// may change the dimensions.
    pub fn apply(&self, image: &Image) -> Result<Image> {
        let mut out = match &self.kind {
            AttackKind::Identity => image.clone(),
            AttackKind::Jpeg { quality } => self.wrap(jpeg_round_trip(image, *quality))?,
            _ => self.apply_geometry(image).unwrap_or_else(|| {
                match &self.kind {
                    AttackKind::Median { size } => filter::median(image, *size),
                    AttackKind::Gaussian { sigma } => filter::gaussian(image, *sigma),
                    AttackKind::Noise { sigma, seed } => filter::gaussian_noise(image, *sigma, *seed),
                    _ => unreachable!("geometric and codec attacks handled above"),
                }
            }),
        };
        out.clamp01();
        Ok(out)
    }

    /// The pixel-moving component of the attack, applied to any image. `None`
    /// for attacks without one.
    fn apply_geometry(&self, image: &Image) -> Option<Image> {
        let (w, h) = image.dims();
        Some(match &self.kind {
            AttackKind::Affine { matrix } => warp_affine(image, &matrix.inverse().expect("invertible")),
            AttackKind::Rescale { factor } => {
                let sw = ((w as f64 * factor).round() as usize).max(1);
                let sh = ((h as f64 * factor).round() as usize).max(1);
                image.resize(sw, sh).resize(w, h)
            }
            AttackKind::Rotate { degrees } => geometry::rotate(image, *degrees),
            AttackKind::QuarterTurn { turns } => geometry::quarter_turns(image, *turns),
            AttackKind::Crop { keep } => {
                let (x0, y0, cw, ch) = crop_window(w, h, *keep);
                image.crop(x0, y0, cw, ch)
            }
            _ => return None,
        })
    }

    /// Distort the watermark the same way the image would be: render it, apply
    /// the geometric component, bring it back to the map's pixel size and
    /// re-threshold per block.
    pub fn attack_watermark(&self, wm: &WatermarkMap) -> WatermarkMap {
        if !self.is_geometric() {
            return wm.clone();
        }
        let rendered = wm.render();
        let (w, h) = rendered.dims();
        let moved = self.apply_geometry(&rendered).expect("geometric attack");
        let moved = if moved.dims() == (w, h) {
            moved
        } else {
            moved.resize(w, h)
        };
        WatermarkMap::from_rendered(&moved).expect("rendered size is block aligned")
    }

    /// Undo the geometric component given exact knowledge of the attack.
    ///
    /// The result is always `width x height`. Pixels that left the frame come
    /// back through edge replication; the area removed by a crop is mid-gray.
    pub fn register(&self, attacked: &Image, width: usize, height: usize) -> Result<Image> {
        let out = match &self.kind {
            AttackKind::Affine { matrix } => {
                if matrix.det().abs() < 1e-12 {
                    return Err(Error::Config(format!("{}: singular affine matrix", self.label())));
                }
                warp_affine(attacked, matrix)
            }
            AttackKind::Rotate { degrees } => geometry::rotate(attacked, -degrees),
            AttackKind::QuarterTurn { turns } => geometry::quarter_turns(attacked, (4 - turns % 4) % 4),
            AttackKind::Crop { keep } => {
                let (x0, y0, cw, ch) = crop_window(width, height, *keep);
                let patch = if attacked.dims() == (cw, ch) {
                    attacked.clone()
                } else {
                    attacked.resize(cw, ch)
                };
                let mut canvas = Image::filled(width, height, attacked.channels(), MID_GRAY);
                for y in 0..ch {
                    for x in 0..cw {
                        for c in 0..attacked.channels() {
                            canvas.set(x0 + x, y0 + y, c, patch.get(x, y, c));
                        }
                    }
                }
                canvas
            }
            _ => attacked.clone(),
        };
        Ok(if out.dims() == (width, height) {
            out
        } else {
            out.resize(width, height)
        })
    }

    /// Attacked image (resized to the cover size) paired with the attacked watermark.
    pub fn attack_pair(&self, image: &Image, wm: &WatermarkMap) -> Result<AttackedPair> {
        let (w, h) = image.dims();
        let attacked = self.apply(image)?;
        let attacked = if attacked.dims() == (w, h) {
            attacked
        } else {
            attacked.resize(w, h)
        };
        Ok(AttackedPair {
            image: attacked,
            labels: self.attack_watermark(wm),
        })
    }
}

impl fmt::Display for AttackSpec {
    /// Manifest line form, e.g. `A2 quality=80`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}", self.id)?;
        match &self.kind {
            AttackKind::Identity => Ok(()),
            AttackKind::Jpeg { quality } => write!(f, " quality={quality}"),
            AttackKind::Median { size } => write!(f, " size={size}"),
            AttackKind::Gaussian { sigma } => write!(f, " sigma={sigma}"),
            AttackKind::Affine { matrix } => {
                let m = matrix.m;
                write!(f, " matrix={},{},{},{}", m[0][0], m[0][1], m[1][0], m[1][1])
            }
            AttackKind::Noise { sigma, seed } => write!(f, " sigma={sigma} seed={seed}"),
            AttackKind::Rescale { factor } => write!(f, " factor={factor}"),
            AttackKind::Rotate { degrees } => write!(f, " degrees={degrees}"),
            AttackKind::QuarterTurn { turns } => write!(f, " turns={turns}"),
            AttackKind::Crop { keep } => write!(f, " keep={keep}"),
        }
    }
}

/// `(x0, y0, width, height)` of the central crop.
pub fn crop_window(width: usize, height: usize, keep: f64) -> (usize, usize, usize, usize) {
    let cw = ((width as f64 * keep).round() as usize).clamp(1, width);
    let ch = ((height as f64 * keep).round() as usize).clamp(1, height);
    ((width - cw) / 2, (height - ch) / 2, cw, ch)
}

/// Training view of one attack: image at cover size and its labels.
#[derive(Clone, Debug)]
pub struct AttackedPair {
    pub image: Image,
    pub labels: WatermarkMap,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;

    pub(crate) fn natural(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |x, y, c| {
            let (fx, fy) = (x as f32 / w as f32, y as f32 / h as f32);
            let v = 0.5
                + 0.25 * (6.0 * fx + 2.0 * c as f32).sin() * (5.0 * fy).cos()
                + 0.15 * (17.0 * fx * fy + c as f32).sin()
                + 0.05 * ((x * 31 + y * 17 + c * 7) % 13) as f32 / 13.0;
            v.clamp(0.0, 1.0)
        })
        .quantized()
    }

    #[test]
    fn battery_ids() {
        let b = AttackSpec::battery();
        assert_eq!(b.len(), 16);
        assert!(b.iter().enumerate().all(|(i, s)| s.id as usize == i + 1));
        assert!(AttackSpec::standard(0).is_err());
        assert!(matches!(AttackSpec::standard(17), Err(Error::Usage(_))));
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let img = natural(48, 32);
        let a15 = AttackSpec::standard(15).unwrap();
        let mut x = img.clone();
        for _ in 0..4 {
            x = a15.apply(&x).unwrap();
        }
        assert_eq!(x, img);
    }

    #[test]
    fn quarter_turn_registration_is_exact() {
        let img = natural(40, 40);
        let a15 = AttackSpec::standard(15).unwrap();
        let back = a15.register(&a15.apply(&img).unwrap(), 40, 40).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn affine_round_trip_is_close() {
        let img = natural(128, 128);
        for id in 6..=11 {
            let a = AttackSpec::standard(id).unwrap();
            let attacked = a.apply(&img).unwrap();
            let back = a.register(&attacked, 128, 128).unwrap();
            let p = psnr(&img, &back).unwrap();
            assert!(p > 30.0, "A{id}: {p}");
        }
    }

    #[test]
    fn signal_attacks_keep_the_watermark() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(4);
        let wm = WatermarkMap::random(8, 8, &mut rng);
        for id in [1, 2, 3, 4, 5, 12] {
            assert_eq!(AttackSpec::standard(id).unwrap().attack_watermark(&wm), wm);
        }
        let rotated = AttackSpec::standard(15).unwrap().attack_watermark(&wm);
        for r in 0..8 {
            for c in 0..8 {
                // counter-clockwise: row r of the output is column (7 - r) of the input
                assert_eq!(rotated.get(r, c), wm.get(c, 7 - r));
            }
        }
    }

    #[test]
    fn signal_attacks_register_to_themselves() {
        let img = natural(32, 32);
        for id in [1, 2, 4, 5, 12, 13] {
            let a = AttackSpec::standard(id).unwrap();
            assert_eq!(a.register(&img, 32, 32).unwrap(), img);
        }
    }

    #[test]
    fn outputs_stay_in_range() {
        let img = natural(64, 64);
        for a in AttackSpec::battery() {
            let out = a.apply(&img).unwrap();
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)), "{}", a.label());
        }
    }

    #[test]
    fn crop_registration_fills_gray() {
        let img = natural(40, 40);
        let a16 = AttackSpec::standard(16).unwrap();
        let cropped = a16.apply(&img).unwrap();
        assert_eq!(cropped.dims(), (32, 32));
        let back = a16.register(&cropped, 40, 40).unwrap();
        assert_eq!(back.get(0, 0, 1), MID_GRAY);
        assert_eq!(back.get(20, 20, 2), img.get(20, 20, 2));
    }

    #[test]
    fn labels_follow_geometry() {
        // Left half white; a counter-clockwise quarter turn moves it to the bottom.
        let wm = WatermarkMap::from_bits(2, 2, vec![1, 0, 1, 0]).unwrap();
        let pair = AttackSpec::standard(15)
            .unwrap()
            .attack_pair(&Image::filled(16, 16, 3, 0.2), &wm)
            .unwrap();
        assert_eq!(pair.labels.bits(), &[0, 0, 1, 1]);
        assert_ne!(pair.labels, wm);
    }

    #[test]
    fn jpeg_quality_ordering() {
        let img = natural(64, 64);
        let q80 = AttackSpec::standard(2).unwrap().apply(&img).unwrap();
        let q90 = AttackSpec::standard(3).unwrap().apply(&img).unwrap();
        assert!(psnr(&img, &q90).unwrap() > psnr(&img, &q80).unwrap());
    }

    #[test]
    fn only_noise_depends_on_seed() {
        let img = natural(16, 16);
        let a12 = AttackSpec::standard(12).unwrap();
        let a = a12.apply(&img).unwrap();
        assert_eq!(a, a12.apply(&img).unwrap());
        assert_ne!(a, a12.with_noise_seed(9).apply(&img).unwrap());
    }
}
