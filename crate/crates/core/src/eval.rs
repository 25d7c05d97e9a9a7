//! End-to-end scoring: embed, attack, optionally register, extract, compare.

use crate::attacks::{write_manifest, AttackKind, AttackSpec, JPEG_CODEC};
use crate::detect::extract_image;
use crate::embed::{embed_image, EmbedParams, StepRule};
use crate::error::{Error, Result};
use crate::metrics::{nc, psnr};
use crate::net::{weights_digest, DetectorWeights};
use crate::raster::Image;
use crate::watermark::WatermarkMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub registered: bool,
    pub embed: EmbedParams,
    /// Base of the per-image noise seeds.
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            registered: true,
            embed: EmbedParams::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    /// `0.0` when the correlation is undefined (an all-zero extraction).
    pub nc: f64,
    pub nc_defined: bool,
    pub extracted: WatermarkMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub attack: AttackSpec,
    /// One cell per test image, in input order.
    pub cells: Vec<Cell>,
}

impl EvalRow {
    pub fn mean_nc(&self) -> f64 {
        self.cells.iter().map(|c| c.nc).sum::<f64>() / self.cells.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportMeta {
    pub weights_hash: String,
    pub manifest: String,
    pub codec: String,
    pub seed: u64,
    pub registered: bool,
    pub embed: EmbedParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub images: Vec<String>,
    /// PSNR of each watermarked image against its cover, 8-bit domain.
    pub psnr: Vec<f64>,
    pub rows: Vec<EvalRow>,
}

/// Seed for the noise attack on image `index`.
fn noise_seed(base: u64, spec_seed: u64, index: usize) -> u64 {
    let mut z = base ^ spec_seed.rotate_left(32) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn spec_for_image(spec: &AttackSpec, base: u64, index: usize) -> AttackSpec {
    match spec.kind {
        AttackKind::Noise { seed, .. } => spec.with_noise_seed(noise_seed(base, seed, index)),
        _ => spec.clone(),
    }
}

/// Detector view of an attacked image: 8-bit quantized, registered or simply
/// resized back to `width x height`.
pub fn detector_input(
    spec: &AttackSpec,
    watermarked: &Image,
    registered: bool,
) -> Result<Image> {
    let (w, h) = watermarked.dims();
    let attacked = spec.apply(watermarked)?.quantized();
    Ok(if registered {
        spec.register(&attacked, w, h)?
    } else if attacked.dims() == (w, h) {
        attacked
    } else {
        attacked.resize(w, h)
    })
}

/// Correlation of `extracted` against `wm`, with an undefined value scored as 0.
pub fn score(wm: &WatermarkMap, extracted: WatermarkMap) -> Result<Cell> {
    match nc(wm.bits(), extracted.bits()) {
        Ok(v) => Ok(Cell {
            nc: v,
            nc_defined: true,
            extracted,
        }),
        Err(Error::UndefinedNc(why)) => {
            log::warn!("normalized correlation undefined ({why}); scoring 0");
            Ok(Cell {
                nc: 0.0,
                nc_defined: false,
                extracted,
            })
        }
        Err(e) => Err(e),
    }
}

/// Score every attack of `manifest` on every named test image.
pub fn evaluate(
    w: &DetectorWeights,
    images: &[(String, Image)],
    wm: &WatermarkMap,
    manifest: &[AttackSpec],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut marked = Vec::with_capacity(images.len());
    let mut psnrs = Vec::with_capacity(images.len());
    for (_, img) in images {
        let cover = img.quantized();
        let m = embed_image(w, &cover, wm, &opts.embed)?.quantized();
        psnrs.push(psnr(&cover, &m)?);
        marked.push(m);
    }
    let mut rows = Vec::with_capacity(manifest.len());
    for spec in manifest {
        let mut cells = Vec::with_capacity(images.len());
        for (i, m) in marked.iter().enumerate() {
            let s = spec_for_image(spec, opts.seed, i);
            let input = detector_input(&s, m, opts.registered)?;
            cells.push(score(wm, extract_image(w, &input)?)?);
        }
        rows.push(EvalRow {
            attack: spec.clone(),
            cells,
        });
    }
    Ok(EvalReport {
        meta: ReportMeta {
            weights_hash: weights_digest(w),
            manifest: write_manifest(manifest),
            codec: JPEG_CODEC.to_string(),
            seed: opts.seed,
            registered: opts.registered,
            embed: opts.embed,
        },
        images: images.iter().map(|(n, _)| n.clone()).collect(),
        psnr: psnrs,
        rows,
    })
}

impl EvalReport {
    pub fn row(&self, id: u8) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.attack.id == id)
    }

    pub fn mean_nc(&self, ids: &[u8]) -> Option<f64> {
        let rows: Vec<_> = ids.iter().map(|&i| self.row(i)).collect::<Option<_>>()?;
        Some(rows.iter().map(|r| r.mean_nc()).sum::<f64>() / rows.len().max(1) as f64)
    }

    fn header(&self) -> String {
        let m = &self.meta;
        let mut out = String::new();
        let _ = writeln!(out, "# weights={}", m.weights_hash);
        let _ = writeln!(out, "# codec={}", m.codec);
        let _ = writeln!(out, "# seed={}", m.seed);
        let _ = writeln!(out, "# registered={}", m.registered);
        let _ = writeln!(
            out,
            "# embed alpha0={} lambda={} iters={} anneal={} early_exit={} rule={:?}",
            m.embed.alpha0, m.embed.lambda, m.embed.max_iters, m.embed.anneal, m.embed.early_exit, m.embed.rule
        );
        let _ = writeln!(out, "# crop=per-dimension");
        if let Some(c) = self.rows.first().and_then(|r| r.cells.first()) {
            let _ = writeln!(out, "# grid={}x{}", c.extracted.rows(), c.extracted.cols());
        }
        for line in m.manifest.lines() {
            let _ = writeln!(out, "# manifest {line}");
        }
        out
    }

    /// Columns: `attack,description,image,nc,nc_defined,psnr,bits`. `psnr` is
    /// that of the watermarked image, repeated on every row; `bits` is the
    /// extracted map, row-major.
    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push_str("attack,description,image,nc,nc_defined,psnr,bits\n");
        for row in &self.rows {
            for ((cell, name), p) in row.cells.iter().zip(&self.images).zip(&self.psnr) {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.6},{},{:.4},{}",
                    row.attack.label(),
                    row.attack.description().replace(',', ";"),
                    name,
                    cell.nc,
                    cell.nc_defined,
                    p,
                    cell.extracted.bit_string()
                );
            }
        }
        out
    }

    /// Inverse of [`EvalReport::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Corrupt(format!("report: {m}"));
        let mut meta = ReportMeta {
            weights_hash: String::new(),
            manifest: String::new(),
            codec: String::new(),
            seed: 0,
            registered: true,
            embed: EmbedParams::default(),
        };
        let mut grid = None;
        let mut body = Vec::new();
        for line in text.lines() {
            let Some(h) = line.strip_prefix("# ") else {
                body.push(line);
                continue;
            };
            if let Some(v) = h.strip_prefix("manifest ") {
                meta.manifest.push_str(v);
                meta.manifest.push('\n');
            } else if let Some(v) = h.strip_prefix("embed ") {
                for kv in v.split_whitespace() {
                    let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad embed field {kv:?}")))?;
                    let num = || v.parse::<f64>().map_err(|_| bad(format!("bad number {v:?}")));
                    let e = &mut meta.embed;
                    match k {
                        "alpha0" => e.alpha0 = num()?,
                        "lambda" => e.lambda = num()?,
                        "iters" => e.max_iters = num()? as usize,
                        "anneal" => e.anneal = num()?,
                        "early_exit" => e.early_exit = num()?,
                        "rule" => {
                            e.rule = match v {
                                "Adam" => StepRule::Adam,
                                "Normalized" => StepRule::Normalized,
                                _ => return Err(bad(format!("unknown rule {v:?}"))),
                            }
                        }
                        _ => {}
                    }
                }
            } else if let Some((k, v)) = h.split_once('=') {
                match k {
                    "weights" => meta.weights_hash = v.to_string(),
                    "codec" => meta.codec = v.to_string(),
                    "seed" => meta.seed = v.parse().map_err(|_| bad(format!("bad seed {v:?}")))?,
                    "registered" => meta.registered = v == "true",
                    "grid" => {
                        let (r, c) = v.split_once('x').ok_or_else(|| bad(format!("bad grid {v:?}")))?;
                        let p = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad grid {v:?}")));
                        grid = Some((p(r)?, p(c)?));
                    }
                    _ => {}
                }
            }
        }
        let manifest = crate::attacks::parse_manifest(&meta.manifest)?;
        let (rows_n, cols_n) = grid.ok_or_else(|| bad("missing grid".into()))?;
        let mut images: Vec<String> = Vec::new();
        let mut psnr: Vec<f64> = Vec::new();
        let mut rows: Vec<EvalRow> = manifest
            .iter()
            .map(|a| EvalRow {
                attack: a.clone(),
                cells: vec![],
            })
            .collect();
        let mut lines = body.into_iter().filter(|l| !l.is_empty());
        if lines.next() != Some("attack,description,image,nc,nc_defined,psnr,bits") {
            return Err(bad("unexpected column header".into()));
        }
        let mut current = 0usize;
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("row {line:?} has {} fields", f.len())));
            }
            while current < rows.len()
                && (rows[current].attack.label() != f[0] || (current > 0 && rows[current].cells.len() >= images.len()))
            {
                current += 1;
            }
            let row = rows.get_mut(current).ok_or_else(|| bad(format!("row for {} out of manifest order", f[0])))?;
            if current == 0 {
                images.push(f[2].to_string());
                psnr.push(f[5].parse().map_err(|_| bad(format!("bad psnr {:?}", f[5])))?);
            }
            let bits = f[6].bytes().map(|b| (b == b'1') as u8).collect();
            row.cells.push(Cell {
                nc: f[3].parse().map_err(|_| bad(format!("bad nc {:?}", f[3])))?,
                nc_defined: f[4] == "true",
                extracted: WatermarkMap::from_bits(rows_n, cols_n, bits)?,
            });
        }
        Ok(Self {
            meta,
            images,
            psnr,
            rows,
        })
    }

    /// Attack rows against image columns; the A1 row shows PSNR in dB.
    pub fn to_table(&self) -> String {
        let mut out = self.header();
        let _ = write!(out, "{:<36}", "Attack");
        for name in &self.images {
            let _ = write!(out, " {:>10}", truncate(name, 10));
        }
        let _ = writeln!(out, " {:>10}", "mean");
        for row in &self.rows {
            let _ = write!(out, "{:<36}", truncate(&format!("{:<4}{}", row.attack.label(), row.attack.description()), 36));
            if row.attack.id == 1 {
                for p in &self.psnr {
                    let _ = write!(out, " {:>10}", format!("{p:.2}dB"));
                }
                let mean = self.psnr.iter().sum::<f64>() / self.psnr.len().max(1) as f64;
                let _ = writeln!(out, " {:>10}", format!("{mean:.2}dB"));
                let _ = write!(out, "{:<36}", "    No attack (NC)");
            }
            for c in &row.cells {
                let mark = if c.nc_defined { "" } else { "*" };
                let _ = write!(out, " {:>10}", format!("{:.4}{mark}", c.nc));
            }
            let _ = writeln!(out, " {:>10.4}", row.mean_nc());
        }
        if self.rows.iter().any(|r| r.cells.iter().any(|c| !c.nc_defined)) {
            out.push_str("* correlation undefined (all-zero extraction), scored 0\n");
        }
        out
    }

    /// One monochrome bitmap per (image, attack): `<image>_<attack>.png`.
    pub fn save_bitmaps(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for row in &self.rows {
            for (cell, name) in row.cells.iter().zip(&self.images) {
                let path = dir.join(format!("{}_{}.png", sanitize(name), row.attack.label()));
                cell.extracted.to_image().save(path)?;
            }
        }
        Ok(())
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
