//! The three-stage training loop: embed with the current detector, attack,
//! update the detector on the attacked blocks; repeat.

use crate::attacks::{parse_manifest, write_manifest, AttackKind, AttackSpec};
use crate::embed::{embed_blocks, embed_image, EmbedParams, StepRule};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::ingest::{ingest_images, ingest_watermarks};
use crate::metrics::psnr;
use crate::net::{read_weights, write_weights, DetectorWeights, BLOCK, BLOCK_LEN, DEFAULT_WIDTH, INPUT_CHANNELS};
use crate::nn::{AdamState, Mode, Tensor};
use crate::raster::Image;
use crate::watermark::WatermarkMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub corpus_dir: PathBuf,
    pub wm_dir: PathBuf,
    /// Covers are normalized to `image_size x image_size`.
    pub image_size: usize,
    /// Detector channel width.
    pub width: usize,
    pub images_per_stage: usize,
    pub attacks: Vec<AttackSpec>,
    pub batch_size: usize,
    pub eta: f64,
    pub embed: EmbedParams,
    pub max_loops: usize,
    /// Stop once the validation mean NC reaches this value.
    pub target_nc: Option<f64>,
    /// Covers held back from training for validation (taken from the end of the corpus).
    pub validation_images: usize,
    /// Validate every this many stages; `0` disables validation.
    pub validate_every: usize,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            corpus_dir: PathBuf::from("corpus"),
            wm_dir: PathBuf::from("watermarks"),
            image_size: 512,
            width: DEFAULT_WIDTH,
            images_per_stage: 8,
            attacks: AttackSpec::battery(),
            batch_size: 128,
            eta: 0.001,
            embed: EmbedParams::default(),
            max_loops: 1000,
            target_nc: Some(0.95),
            validation_images: 2,
            validate_every: 1,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.images_per_stage == 0 {
            return bad("images_per_stage must be at least 1");
        }
        if self.image_size == 0 || self.image_size % BLOCK != 0 {
            return bad("image_size must be a positive multiple of 8");
        }
        if self.width == 0 {
            return bad("width must be at least 1");
        }
        if self.attacks.is_empty() {
            return bad("attack set is empty");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be a finite non-negative number");
        }
        self.embed.validate()
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "corpus_dir" => self.corpus_dir = v.into(),
            "wm_dir" => self.wm_dir = v.into(),
            "image_size" => self.image_size = parse_num(key, v)?,
            "width" => self.width = parse_num(key, v)?,
            "images_per_stage" => self.images_per_stage = parse_num(key, v)?,
            "attacks" => self.attacks = parse_manifest(&v.replace(';', "\n"))?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "eta" => self.eta = parse_num(key, v)?,
            "alpha0" => self.embed.alpha0 = parse_num(key, v)?,
            "lambda" => self.embed.lambda = parse_num(key, v)?,
            "embed_iters" => self.embed.max_iters = parse_num(key, v)?,
            "anneal" => self.embed.anneal = parse_num(key, v)?,
            "early_exit" => self.embed.early_exit = parse_num(key, v)?,
            "embed_rule" => {
                self.embed.rule = match v {
                    "adam" => StepRule::Adam,
                    "normalized" => StepRule::Normalized,
                    _ => return Err(Error::Config(format!("embed_rule: unknown rule {v:?}"))),
                }
            }
            "max_loops" => self.max_loops = parse_num(key, v)?,
            "target_nc" => {
                self.target_nc = if v == "none" { None } else { Some(parse_num(key, v)?) }
            }
            "validation_images" => self.validation_images = parse_num(key, v)?,
            "validate_every" => self.validate_every = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "checkpoint_dir" => {
                self.checkpoint_dir = if v == "none" { None } else { Some(v.into()) }
            }
            other => return Err(Error::Config(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Parse the `key = value` file format; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The file format, one line per field; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let e = &self.embed;
        let attacks: Vec<String> = write_manifest(&self.attacks).lines().map(str::to_string).collect();
        let rule = match e.rule {
            StepRule::Adam => "adam",
            StepRule::Normalized => "normalized",
        };
        let opt = |o: Option<String>| o.unwrap_or_else(|| "none".into());
        format!(
            "corpus_dir = {}\nwm_dir = {}\nimage_size = {}\nwidth = {}\nimages_per_stage = {}\n\
             attacks = {}\nbatch_size = {}\neta = {}\nalpha0 = {}\nlambda = {}\nembed_iters = {}\n\
             anneal = {}\nearly_exit = {}\nembed_rule = {rule}\nmax_loops = {}\ntarget_nc = {}\n\
             validation_images = {}\nvalidate_every = {}\nseed = {}\ncheckpoint_dir = {}\n",
            self.corpus_dir.display(),
            self.wm_dir.display(),
            self.image_size,
            self.width,
            self.images_per_stage,
            attacks.join("; "),
            self.batch_size,
            self.eta,
            e.alpha0,
            e.lambda,
            e.max_iters,
            e.anneal,
            e.early_exit,
            self.max_loops,
            opt(self.target_nc.map(|v| v.to_string())),
            self.validation_images,
            self.validate_every,
            self.seed,
            opt(self.checkpoint_dir.as_ref().map(|p| p.display().to_string())),
        )
    }
}

/// Covers for training and validation plus the watermark pool.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Vec<Image>,
    pub validation: Vec<(String, Image)>,
    pub watermarks: Vec<WatermarkMap>,
}

impl Corpus {
    /// Split `covers` (in order) into training images and the last
    /// `validation_images` held-out ones.
    pub fn new(mut covers: Vec<(String, Image)>, watermarks: Vec<WatermarkMap>, cfg: &TrainConfig) -> Result<Self> {
        if covers.len() < cfg.images_per_stage + cfg.validation_images {
            return Err(Error::Config(format!(
                "corpus has {} images, need {} per stage plus {} for validation",
                covers.len(),
                cfg.images_per_stage,
                cfg.validation_images
            )));
        }
        if watermarks.is_empty() {
            return Err(Error::Config("no watermarks".into()));
        }
        let grid = cfg.image_size / BLOCK;
        for (name, img) in &covers {
            if img.dims() != (cfg.image_size, cfg.image_size) || img.channels() != INPUT_CHANNELS {
                return Err(Error::Usage(format!(
                    "{name}: expected {0}x{0}x3, got {1}x{2}x{3}",
                    cfg.image_size,
                    img.width(),
                    img.height(),
                    img.channels()
                )));
            }
        }
        if watermarks.iter().any(|w| (w.rows(), w.cols()) != (grid, grid)) {
            return Err(Error::Usage(format!("watermarks must be {grid}x{grid}")));
        }
        let validation = covers.split_off(covers.len() - cfg.validation_images);
        Ok(Self {
            train: covers.into_iter().map(|(_, i)| i).collect(),
            validation,
            watermarks,
        })
    }

    /// Read both directories named by `cfg`.
    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        let covers = ingest_images(&cfg.corpus_dir, cfg.image_size)?;
        let grid = cfg.image_size / BLOCK;
        let wms = ingest_watermarks(&cfg.wm_dir, grid, grid)?;
        for (p, why) in covers.skipped.iter().chain(&wms.skipped) {
            log::warn!("skipped {}: {why}", p.display());
        }
        Self::new(covers.items, wms.items.into_iter().map(|(_, w)| w).collect(), cfg)
    }
}

/// Attacked blocks and their labels for one update stage.
#[derive(Clone, Debug, Default)]
pub struct Pool {
    pub blocks: Vec<f32>,
    pub labels: Vec<u8>,
    /// Attacked (image, watermark) pairs that went into the pool.
    pub pairs: usize,
}

impl Pool {
    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Attack `marked` (watermarked with `wm`) with every spec and append the
    /// blocks, labelled from the attacked watermark.
    pub fn push_attacked(
        &mut self,
        marked: &Image,
        wm: &WatermarkMap,
        attacks: &[AttackSpec],
        rng: &mut impl Rng,
    ) -> Result<()> {
        for spec in attacks {
            let spec = match spec.kind {
                AttackKind::Noise { .. } => spec.with_noise_seed(rng.random()),
                _ => spec.clone(),
            };
            let pair = spec.attack_pair(marked, wm)?;
            let blocks = pair.image.quantized().to_blocks()?;
            let n = blocks.shape()[0];
            for i in 0..n {
                self.labels.push(make_label(&pair.labels, i)?);
            }
            self.blocks.extend_from_slice(blocks.data());
            self.pairs += 1;
        }
        Ok(())
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Vec<u8>)> {
        let mut data = Vec::with_capacity(idx.len() * BLOCK_LEN);
        for &i in idx {
            data.extend_from_slice(&self.blocks[i * BLOCK_LEN..(i + 1) * BLOCK_LEN]);
        }
        Ok((
            Tensor::from_vec(&[idx.len(), BLOCK, BLOCK, INPUT_CHANNELS], data)?,
            idx.iter().map(|&i| self.labels[i]).collect(),
        ))
    }

    /// Infer-mode mean cross-entropy.
    pub fn loss(&self, w: &DetectorWeights) -> Result<f64> {
        if self.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        let idx: Vec<usize> = (0..self.len()).collect();
        for chunk in idx.chunks(256) {
            let (b, l) = self.batch(chunk)?;
            let (loss, _, _) = w.loss_and_grads(&b, &l, Mode::Infer)?;
            total += loss as f64 * chunk.len() as f64;
        }
        Ok(total / self.len() as f64)
    }
}

/// Training label of block `index`: the attacked watermark's bit there.
pub fn make_label(attacked_wm: &WatermarkMap, index: usize) -> Result<u8> {
    attacked_wm.bit(index)
}

/// One shuffled pass over `pool` in batches, batch norm in train mode.
/// Returns the mean training loss.
pub fn update_stage(
    w: &mut DetectorWeights,
    adam: &mut AdamState<f32>,
    pool: &Pool,
    batch_size: usize,
    eta: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::Usage("empty training pool".into()));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(batch_size.max(1)) {
        let (blocks, labels) = pool.batch(chunk)?;
        let (loss, grads, tape) = w.loss_and_grads(&blocks, &labels, Mode::Train)?;
        w.absorb_batch_stats(&tape);
        let g = grads.params();
        adam.step(w.params_mut().into_iter().zip(g), eta as f32);
        total += loss as f64 * chunk.len() as f64;
    }
    Ok(total / pool.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub blocks: usize,
    /// Mean training loss over the pass.
    pub loss: f64,
    /// Infer-mode loss on attacked validation blocks before and after the update.
    pub holdout_before: f64,
    pub holdout_after: f64,
    /// Mean PSNR of the stage's watermarked images.
    pub psnr: f64,
    /// Validation NC per attack, in attack-set order; empty when not validated.
    pub nc: Vec<f64>,
    pub seconds: f64,
}

impl StageRecord {
    pub fn mean_nc(&self) -> Option<f64> {
        (!self.nc.is_empty()).then(|| self.nc.iter().sum::<f64>() / self.nc.len() as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub attacks: Vec<String>,
    pub records: Vec<StageRecord>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Columns `stage,blocks,loss,holdout_before,holdout_after,psnr,mean_nc,nc_<attack>...`,
    /// plus `seconds` when `timing` is set. Without timing the text depends only
    /// on the configuration.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from("stage,blocks,loss,holdout_before,holdout_after,psnr,mean_nc");
        for a in &self.attacks {
            let _ = write!(out, ",nc_{a}");
        }
        if timing {
            out.push_str(",seconds");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{}",
                r.stage,
                r.blocks,
                r.loss,
                r.holdout_before,
                r.holdout_after,
                r.psnr,
                r.mean_nc().map(|v| v.to_string()).unwrap_or_default()
            );
            for i in 0..self.attacks.len() {
                out.push(',');
                if let Some(v) = r.nc.get(i) {
                    let _ = write!(out, "{v}");
                }
            }
            if timing {
                let _ = write!(out, ",{}", r.seconds);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Corrupt(format!("training log: {m}"));
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty".into()))?.split(',').collect();
        if header.len() < 7 || header[..7] != ["stage", "blocks", "loss", "holdout_before", "holdout_after", "psnr", "mean_nc"] {
            return Err(bad("unexpected header".into()));
        }
        let timing = header.last() == Some(&"seconds");
        let n_att = header.len() - 7 - timing as usize;
        let attacks = header[7..7 + n_att].iter().map(|h| h.trim_start_matches("nc_").to_string()).collect();
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(bad(format!("row {line:?} has {} fields", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
            let nc = f[7..7 + n_att]
                .iter()
                .filter(|s| !s.is_empty())
                .map(|s| num(s))
                .collect::<Result<Vec<_>>>()?;
            records.push(StageRecord {
                stage: f[0].parse().map_err(|_| bad(format!("bad stage {:?}", f[0])))?,
                blocks: f[1].parse().map_err(|_| bad(format!("bad count {:?}", f[1])))?,
                loss: num(f[2])?,
                holdout_before: num(f[3])?,
                holdout_after: num(f[4])?,
                psnr: num(f[5])?,
                nc,
                seconds: if timing { num(f[f.len() - 1])? } else { 0.0 },
            });
        }
        Ok(Self { attacks, records })
    }
}

const STATE_MAGIC: [u8; 8] = *b"CNMKSTAT";
const STATE_VERSION: u32 = 1;

/// Detector, optimizer state and log at a stage boundary.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub corpus: Corpus,
    pub weights: DetectorWeights,
    pub adam: AdamState<f32>,
    /// Stages completed so far.
    pub stage: usize,
    pub log: TrainLog,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, corpus: Corpus) -> Result<Self> {
        cfg.validate()?;
        let weights = DetectorWeights::new(cfg.width, cfg.seed);
        let adam = AdamState::new(weights.param_sizes());
        let log = TrainLog {
            attacks: cfg.attacks.iter().map(|a| a.label()).collect(),
            records: vec![],
        };
        Ok(Self {
            cfg,
            corpus,
            weights,
            adam,
            stage: 0,
            log,
        })
    }

    /// Private random stream of stage `k`, so a resumed run draws what an
    /// uninterrupted one would.
    fn stage_rng(&self, k: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(k as u64 + 1);
        rng
    }

    fn validation_wm(&self) -> &WatermarkMap {
        &self.corpus.watermarks[0]
    }

    /// Validation covers marked with the current weights and attacked.
    fn holdout_pool(&self, rng: &mut ChaCha8Rng) -> Result<Pool> {
        let mut pool = Pool::default();
        let wm = self.validation_wm().clone();
        for (_, img) in &self.corpus.validation {
            let marked = embed_image(&self.weights, img, &wm, &self.cfg.embed)?.quantized();
            pool.push_attacked(&marked, &wm, &self.cfg.attacks, rng)?;
        }
        Ok(pool)
    }

    /// Stages 1 and 2: embed sampled watermarks and their complements into
    /// sampled covers, then attack each result with the whole attack set.
    pub fn generate_pool(&self, rng: &mut ChaCha8Rng) -> Result<(Pool, f64)> {
        let picks = rand::seq::index::sample(rng, self.corpus.train.len(), self.cfg.images_per_stage).into_vec();
        let mut pool = Pool::default();
        let mut psnr_sum = 0.0;
        for cover_idx in picks {
            let cover = &self.corpus.train[cover_idx];
            let wm = &self.corpus.watermarks[rng.random_range(0..self.corpus.watermarks.len())];
            let (rows, cols) = cover.block_grid()?;
            let blocks = cover.to_blocks()?;
            for mark in [wm.clone(), wm.complement()] {
                let embedded = embed_blocks(&self.weights, &blocks, mark.bits(), &self.cfg.embed)?;
                let marked = Image::from_blocks(&embedded, rows, cols)?.quantized();
                psnr_sum += psnr(cover, &marked)?;
                pool.push_attacked(&marked, &mark, &self.cfg.attacks, rng)?;
            }
        }
        Ok((pool, psnr_sum / (2 * self.cfg.images_per_stage) as f64))
    }

    /// Run one full stage and append its record.
    pub fn step(&mut self) -> Result<&StageRecord> {
        let t0 = Instant::now();
        let k = self.stage;
        let mut rng = self.stage_rng(k);
        let (pool, psnr) = self.generate_pool(&mut rng)?;
        let holdout = if self.corpus.validation.is_empty() {
            Pool::default()
        } else {
            self.holdout_pool(&mut rng)?
        };
        let holdout_before = holdout.loss(&self.weights)?;
        let (bs, eta) = (self.cfg.batch_size, self.cfg.eta);
        let loss = update_stage(&mut self.weights, &mut self.adam, &pool, bs, eta, &mut rng)?;
        let holdout_after = holdout.loss(&self.weights)?;
        let validate = self.cfg.validate_every > 0
            && !self.corpus.validation.is_empty()
            && ((k + 1) % self.cfg.validate_every == 0 || k + 1 == self.cfg.max_loops);
        let nc = if validate { self.validate()? } else { vec![] };
        self.stage += 1;
        self.log.records.push(StageRecord {
            stage: k,
            blocks: pool.len(),
            loss,
            holdout_before,
            holdout_after,
            psnr,
            nc,
            seconds: t0.elapsed().as_secs_f64(),
        });
        let rec = self.log.records.last().expect("just pushed");
        log::info!(
            "stage {} loss {:.4} holdout {:.4} -> {:.4} psnr {:.2} nc {}",
            rec.stage,
            rec.loss,
            rec.holdout_before,
            rec.holdout_after,
            rec.psnr,
            rec.mean_nc().map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
        );
        if let Some(dir) = &self.cfg.checkpoint_dir {
            self.save_checkpoint(dir)?;
        }
        Ok(rec)
    }

    /// Per-attack mean NC on the validation covers, registered.
    pub fn validate(&self) -> Result<Vec<f64>> {
        let opts = EvalOptions {
            registered: true,
            embed: self.cfg.embed,
            seed: self.cfg.seed,
        };
        let rep = evaluate(&self.weights, &self.corpus.validation, self.validation_wm(), &self.cfg.attacks, &opts)?;
        Ok(rep.rows.iter().map(|r| r.mean_nc()).collect())
    }

    pub fn should_stop(&self) -> bool {
        if self.stage >= self.cfg.max_loops {
            return true;
        }
        match (self.cfg.target_nc, self.log.records.last().and_then(|r| r.mean_nc())) {
            (Some(target), Some(v)) => v >= target,
            _ => false,
        }
    }

    /// Step until the stopping rule fires.
    pub fn run(&mut self) -> Result<()> {
        while !self.should_stop() {
            self.step()?;
        }
        Ok(())
    }

    /// `weights.cnmk`, `state.ckpt` and `train_log.csv` under `dir`.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        crate::net::save_weights(&self.weights, dir.join("weights.cnmk"))?;
        let mut out = Vec::new();
        out.extend_from_slice(&STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.stage as u64).to_le_bytes());
        out.extend_from_slice(&self.adam.step_count.to_le_bytes());
        out.extend_from_slice(&(self.adam.first_moment.len() as u32).to_le_bytes());
        for (m, v) in self.adam.first_moment.iter().zip(&self.adam.second_moment) {
            out.extend_from_slice(&(m.len() as u32).to_le_bytes());
            for x in m.iter().chain(v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut wbytes = Vec::new();
        write_weights(&self.weights, &mut wbytes)?;
        let log = self.log.to_csv(true);
        for section in [&wbytes[..], log.as_bytes()] {
            out.extend_from_slice(&(section.len() as u64).to_le_bytes());
            out.extend_from_slice(section);
        }
        let tmp = dir.join("state.ckpt.tmp");
        std::fs::write(&tmp, &out)?;
        std::fs::rename(&tmp, dir.join("state.ckpt"))?;
        std::fs::write(dir.join("train_log.csv"), self.log.to_csv(false))?;
        Ok(())
    }

    /// Continue from a checkpoint written by [`Trainer::save_checkpoint`].
    pub fn resume(cfg: TrainConfig, corpus: Corpus, dir: impl AsRef<Path>) -> Result<Self> {
        let buf = std::fs::read(dir.as_ref().join("state.ckpt"))?;
        let mut t = Self::new(cfg, corpus)?;
        let mut r = Reader { buf: &buf, pos: 0 };
        if r.take(8)? != STATE_MAGIC {
            return Err(Error::Corrupt("not a training state file".into()));
        }
        let version = r.u32()?;
        if version != STATE_VERSION {
            return Err(Error::Incompatible(format!("training state version {version}")));
        }
        t.stage = r.u64()? as usize;
        let steps = r.u64()?;
        let count = r.u32()? as usize;
        let sizes = t.weights.param_sizes();
        if count != sizes.len() {
            return Err(Error::Incompatible(format!("{count} optimizer buffers, model has {}", sizes.len())));
        }
        let mut adam = AdamState::new(sizes.iter().copied());
        adam.step_count = steps;
        for (i, &size) in sizes.iter().enumerate() {
            let n = r.u32()? as usize;
            if n != size {
                return Err(Error::Incompatible(format!("optimizer buffer {i} has {n} values, expected {size}")));
            }
            for slot in adam.first_moment[i].iter_mut().chain(adam.second_moment[i].iter_mut()) {
                *slot = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
            }
        }
        t.adam = adam;
        let wlen = r.u64()? as usize;
        let weights = read_weights(r.take(wlen)?)?;
        if weights.width() != t.cfg.width {
            return Err(Error::Incompatible(format!(
                "checkpoint width {} differs from configured {}",
                weights.width(),
                t.cfg.width
            )));
        }
        t.weights = weights;
        let llen = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(llen)?).map_err(|_| Error::Corrupt("log is not UTF-8".into()))?;
        t.log = TrainLog::from_csv(text)?;
        if r.pos != buf.len() {
            return Err(Error::Corrupt("trailing bytes in training state".into()));
        }
        Ok(t)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Corrupt("training state truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Load the corpus named by `cfg`, train until the stopping rule fires.
pub fn run_loop(cfg: TrainConfig) -> Result<(DetectorWeights, TrainLog)> {
    let corpus = Corpus::load(&cfg)?;
    let mut t = Trainer::new(cfg, corpus)?;
    t.run()?;
    Ok((t.weights, t.log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus(cfg: &TrainConfig, covers: usize) -> Corpus {
        let s = cfg.image_size;
        let imgs = (0..covers)
            .map(|k| {
                let img = Image::from_fn(s, s, 3, |x, y, c| {
                    (((x * (k + 3) + y * 5 + c * 7) % 23) as f32 / 22.0) * 0.8 + 0.1
                });
                (format!("c{k}"), img)
            })
            .collect();
        let g = s / BLOCK;
        let wm = WatermarkMap::from_bits(g, g, (0..g * g).map(|i| ((i / g + i % g) % 2) as u8).collect()).unwrap();
        let wm2 = WatermarkMap::from_bits(g, g, (0..g * g).map(|i| (i % g < g / 2) as u8).collect()).unwrap();
        Corpus::new(imgs, vec![wm, wm2], cfg).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            image_size: 16,
            width: 4,
            images_per_stage: 2,
            attacks: AttackSpec::list(&[1, 2, 6, 12]).unwrap(),
            embed: EmbedParams {
                max_iters: 3,
                ..Default::default()
            },
            max_loops: 2,
            validation_images: 1,
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn default_pool_block_count() {
        let fifteen = AttackSpec::list(&(2..=16).collect::<Vec<_>>()).unwrap();
        let blocks_per_image = (512 / 8) * (512 / 8);
        assert_eq!(8 * 2 * fifteen.len() * blocks_per_image, 983_040);
        let d = TrainConfig::default();
        assert_eq!((d.images_per_stage, d.batch_size, d.eta, d.image_size), (8, 128, 0.001, 512));
        assert_eq!(d.attacks.len(), 16);
    }

    #[test]
    fn pool_has_one_pair_per_image_mark_and_attack() {
        let cfg = tiny_cfg();
        let t = Trainer::new(cfg.clone(), tiny_corpus(&cfg, 4)).unwrap();
        let (pool, psnr) = t.generate_pool(&mut t.stage_rng(0)).unwrap();
        assert_eq!(pool.pairs, 2 * 2 * 4);
        assert_eq!(pool.len(), pool.pairs * 4);
        assert!(psnr > 20.0);
    }

    #[test]
    fn labels_come_from_the_attacked_watermark() {
        let img = Image::filled(16, 16, 3, 0.5);
        let wm = WatermarkMap::from_bits(2, 2, vec![1, 0, 1, 0]).unwrap();
        let turn = AttackSpec::list(&[15]).unwrap();
        let mut pool = Pool::default();
        pool.push_attacked(&img, &wm, &turn, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(pool.labels, vec![0, 0, 1, 1]);
        assert_ne!(pool.labels, wm.bits());
    }

    #[test]
    fn label_threshold_and_range() {
        let wm = WatermarkMap::from_bits(1, 2, vec![1, 0]).unwrap();
        assert_eq!(make_label(&wm, 0).unwrap(), 1);
        assert!(matches!(make_label(&wm, 2), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_rate_moves_only_batch_norm_statistics() {
        let mut w = DetectorWeights::new(4, 1);
        let before = w.clone();
        let mut adam = AdamState::new(w.param_sizes());
        let pool = Pool {
            blocks: (0..10 * BLOCK_LEN).map(|i| (i % 13) as f32 / 12.0).collect(),
            labels: (0..10).map(|i| (i % 2) as u8).collect(),
            pairs: 1,
        };
        update_stage(&mut w, &mut adam, &pool, 4, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(w.params(), before.params());
        let stats = |d: &DetectorWeights| -> Vec<f32> {
            d.layers.iter().filter_map(|l| l.bn.as_ref()).flat_map(|b| b.running_mean.data().to_vec()).collect()
        };
        assert_ne!(stats(&w), stats(&before));
    }

    #[test]
    fn overfits_a_separable_block() {
        let mut w = DetectorWeights::new(8, 2);
        let mut adam = AdamState::new(w.param_sizes());
        let n = 512;
        let mut blocks = Vec::with_capacity(n * BLOCK_LEN);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let bit = (i % 2) as u8;
            blocks.extend(std::iter::repeat_n(if bit == 1 { 0.9 } else { 0.1 }, BLOCK_LEN));
            labels.push(bit);
        }
        let pool = Pool { blocks, labels, pairs: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            update_stage(&mut w, &mut adam, &pool, 16, 0.01, &mut rng).unwrap();
        }
        assert!(pool.loss(&w).unwrap() < 0.01);
    }

    #[test]
    fn seeded_runs_match_and_resume_continues_identically() {
        let cfg = tiny_cfg();
        let mut a = Trainer::new(cfg.clone(), tiny_corpus(&cfg, 4)).unwrap();
        a.run().unwrap();
        let mut b = Trainer::new(cfg.clone(), tiny_corpus(&cfg, 4)).unwrap();
        b.run().unwrap();
        assert_eq!(a.log.to_csv(false), b.log.to_csv(false));
        assert_eq!(a.weights.params(), b.weights.params());

        let dir = tempfile::tempdir().unwrap();
        let mut c = Trainer::new(cfg.clone(), tiny_corpus(&cfg, 4)).unwrap();
        c.step().unwrap();
        c.save_checkpoint(dir.path()).unwrap();
        let mut d = Trainer::resume(cfg.clone(), tiny_corpus(&cfg, 4), dir.path()).unwrap();
        d.run().unwrap();
        assert_eq!(d.log.to_csv(false), a.log.to_csv(false));
        assert_eq!(d.weights.params(), a.weights.params());
    }

    #[test]
    fn config_text_round_trips() {
        let mut cfg = tiny_cfg();
        cfg.target_nc = None;
        cfg.checkpoint_dir = Some("ck".into());
        cfg.attacks = AttackSpec::list(&[1, 2, 7, 12, 16]).unwrap();
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(matches!(TrainConfig::parse("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::parse("batch_size = 0"), Err(Error::Config(_))));
    }
}
