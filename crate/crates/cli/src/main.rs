use clap::{Args, Parser, Subcommand};
use cnnmark::attacks::{parse_manifest, AttackSpec};
use cnnmark::detect::extract_image;
use cnnmark::embed::{embed_image, EmbedParams};
use cnnmark::eval::{evaluate, EvalOptions, EvalReport};
use cnnmark::ingest::ingest_images;
use cnnmark::metrics::psnr;
use cnnmark::net::{load_weights, save_weights, weights_digest};
use cnnmark::qim::{boundary_distance, comparison_csv, grid, qim_as_network, qim_decode, QimParams};
use cnnmark::raster::Image;
use cnnmark::train::{Corpus, TrainConfig, Trainer};
use cnnmark::watermark::WatermarkMap;
use cnnmark::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cnnmark", version, about = "Blind CNN image watermarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct EmbedArgs {
    /// Initial embedding rate.
    #[arg(long, default_value_t = 0.01)]
    alpha0: f64,
    /// Fidelity weight.
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    /// Maximum embedding iterations.
    #[arg(long, default_value_t = 12)]
    iters: usize,
    /// Per-iteration rate decay.
    #[arg(long, default_value_t = 0.9)]
    anneal: f64,
    /// Stop a block once its bit is predicted above this probability.
    #[arg(long, default_value_t = 0.99)]
    early_exit: f64,
}

impl EmbedArgs {
    fn params(&self) -> Result<EmbedParams> {
        let p = EmbedParams {
            alpha0: self.alpha0,
            lambda: self.lambda,
            max_iters: self.iters,
            anneal: self.anneal,
            early_exit: self.early_exit,
            ..Default::default()
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a detector with the three-stage loop.
    Train {
        /// Config file of `key = value` lines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key, e.g. `--set max_loops=40`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Continue from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Final weights.
        #[arg(long, default_value = "weights.cnmk")]
        out: PathBuf,
        /// Training log CSV.
        #[arg(long, default_value = "train_log.csv")]
        log: PathBuf,
    },
    /// Embed a watermark image into a cover.
    Embed {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Binary watermark image; resampled to one bit per 8x8 block.
        #[arg(long)]
        watermark: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        embed: EmbedArgs,
    },
    /// Read the watermark back from an image.
    Extract {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Write the map as a one-pixel-per-bit image.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply one attack, given as a manifest line such as `A2 quality=70`.
    Attack {
        #[arg(long)]
        attack: String,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Noise seed for A12.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Undo a known geometric attack.
    Register {
        #[arg(long)]
        attack: String,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an attack battery on a directory of test images.
    Evaluate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        watermark: PathBuf,
        /// Attack manifest; the full A1-A16 battery when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Test images are normalized to this size.
        #[arg(long, default_value_t = 512)]
        size: usize,
        /// Skip registration; attacked images are only resized.
        #[arg(long)]
        unregistered: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Receives report.csv, report.txt and bitmaps/.
        #[arg(long, default_value = "report")]
        out_dir: PathBuf,
        #[command(flatten)]
        embed: EmbedArgs,
    },
    /// Compare lattice QIM decoding with its ReLU network form on a grid.
    QimDemo {
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long, default_value_t = 8.0)]
        range: f64,
        #[arg(long, default_value_t = 10_000)]
        points: usize,
        /// Grid CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a saved report CSV as a table.
    Report {
        #[arg(long)]
        csv: PathBuf,
    },
}

fn load_watermark(path: &Path, image: &Image) -> Result<WatermarkMap> {
    let (rows, cols) = image.block_grid()?;
    Ok(WatermarkMap::from_image(&Image::load(path)?, rows, cols))
}

fn one_attack(line: &str) -> Result<AttackSpec> {
    let mut specs = parse_manifest(line)?;
    if specs.len() != 1 {
        return Err(Error::Usage(format!("expected one attack, got {:?}", line)));
    }
    Ok(specs.remove(0))
}

fn train(
    config: Option<PathBuf>,
    overrides: Vec<String>,
    resume: Option<PathBuf>,
    out: PathBuf,
    log: PathBuf,
) -> Result<()> {
    let mut cfg = match config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    for kv in &overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    println!("# config\n{}", cfg.to_text());
    println!("# seed {}", cfg.seed);
    let corpus = Corpus::load(&cfg)?;
    let mut trainer = match resume {
        Some(dir) => Trainer::resume(cfg, corpus, dir)?,
        None => Trainer::new(cfg, corpus)?,
    };
    while !trainer.should_stop() {
        let r = trainer.step()?;
        println!(
            "stage {} loss {:.4} psnr {:.2} nc {} ({:.1}s)",
            r.stage,
            r.loss,
            r.psnr,
            r.mean_nc().map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            r.seconds
        );
        std::fs::write(&log, trainer.log.to_csv(false))?;
    }
    save_weights(&trainer.weights, &out)?;
    std::fs::write(&log, trainer.log.to_csv(false))?;
    println!("weights {} ({})", out.display(), weights_digest(&trainer.weights));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            overrides,
            resume,
            out,
            log,
        } => train(config, overrides, resume, out, log)?,
        Command::Embed {
            weights,
            image,
            watermark,
            out,
            embed,
        } => {
            let p = embed.params()?;
            println!("# embed {p:?}");
            let w = load_weights(&weights)?;
            let cover = Image::load(&image)?.to_rgb();
            let wm = load_watermark(&watermark, &cover)?;
            let marked = embed_image(&w, &cover, &wm, &p)?.quantized();
            marked.save(&out)?;
            println!("psnr {:.4} dB", psnr(&cover, &marked)?);
        }
        Command::Extract { weights, image, out } => {
            let w = load_weights(&weights)?;
            let wm = extract_image(&w, &Image::load(&image)?.to_rgb())?;
            println!("{}", wm.bit_string());
            if let Some(out) = out {
                wm.to_image().save(out)?;
            }
        }
        Command::Attack {
            attack,
            image,
            out,
            seed,
        } => {
            let mut spec = one_attack(&attack)?;
            if let Some(s) = seed {
                spec = spec.with_noise_seed(s);
            }
            println!("# attack {spec}");
            spec.apply(&Image::load(&image)?.to_rgb())?.save(&out)?;
        }
        Command::Register {
            attack,
            image,
            width,
            height,
            out,
        } => {
            let spec = one_attack(&attack)?;
            println!("# register {spec}");
            spec.register(&Image::load(&image)?.to_rgb(), width, height)?.save(&out)?;
        }
        Command::Evaluate {
            weights,
            images,
            watermark,
            manifest,
            size,
            unregistered,
            seed,
            out_dir,
            embed,
        } => {
            let w = load_weights(&weights)?;
            let tests = ingest_images(&images, size)?;
            let manifest = match manifest {
                Some(p) => parse_manifest(&std::fs::read_to_string(p)?)?,
                None => AttackSpec::battery(),
            };
            let grid = size / 8;
            let wm = WatermarkMap::from_image(&Image::load(&watermark)?, grid, grid);
            let opts = EvalOptions {
                registered: !unregistered,
                embed: embed.params()?,
                seed,
            };
            println!("# seed {seed} registered {} skipped {}", opts.registered, tests.skipped.len());
            let rep = evaluate(&w, &tests.items, &wm, &manifest, &opts)?;
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("report.csv"), rep.to_csv())?;
            let mut table = rep.to_table();
            if !tests.skipped.is_empty() {
                table.push_str(&format!("skipped {} undecodable files\n", tests.skipped.len()));
            }
            std::fs::write(out_dir.join("report.txt"), &table)?;
            rep.save_bitmaps(out_dir.join("bitmaps"))?;
            print!("{table}");
        }
        Command::QimDemo {
            delta,
            range,
            points,
            out,
        } => {
            let p = QimParams::new(delta, range)?;
            let net = qim_as_network(&p)?;
            let mut mismatches = 0;
            let mut checked = 0;
            for c in grid(&p, points) {
                if boundary_distance(c, &p) > 1e-9 {
                    checked += 1;
                    mismatches += (net.decode(&[c]) != qim_decode(c, &p)?) as usize;
                }
            }
            let csv = comparison_csv(&p, points, 1e-9)?;
            match out {
                Some(path) => std::fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            eprintln!(
                "delta {delta} range {range}: {} relu units, {mismatches} mismatches over {checked} points",
                net.units()
            );
        }
        Command::Report { csv } => {
            print!("{}", EvalReport::from_csv(&std::fs::read_to_string(csv)?)?.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}
