//! Desk-scale training on synthetic data, then trained vs fresh evaluation.
//!
//! `cargo run --release --example desk_scale -- [key=value ...]` with any
//! training config key, e.g. `width=16 image_size=64 max_loops=30`.

use cnnmark::attacks::AttackSpec;
use cnnmark::eval::{evaluate, EvalOptions};
use cnnmark::net::DetectorWeights;
use cnnmark::synth;
use cnnmark::train::{Corpus, TrainConfig, Trainer};
use std::time::Instant;

fn main() -> cnnmark::Result<()> {
    let mut cfg = TrainConfig {
        image_size: 64,
        width: 16,
        attacks: AttackSpec::list(&[1, 2, 4, 5, 6, 7, 8])?,
        max_loops: 30,
        target_nc: None,
        validate_every: 10,
        ..Default::default()
    };
    let mut corpus_size = 100;
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value");
        if k == "corpus" {
            corpus_size = v.parse().expect("count");
        } else {
            cfg.set(k, v)?;
        }
    }
    cfg.validate()?;
    print!("{}", cfg.to_text());
    let grid = cfg.image_size / 8;
    let covers = synth::covers(cfg.image_size, corpus_size + cfg.validation_images, 1000);
    let wms = synth::shape_watermarks(grid, grid, 14, 77);
    let corpus = Corpus::new(covers, wms, &cfg)?;
    let mut t = Trainer::new(cfg.clone(), corpus)?;
    let start = Instant::now();
    while !t.should_stop() {
        let r = t.step()?.clone();
        println!(
            "stage {:3} loss {:.4} holdout {:.4}->{:.4} psnr {:.2} nc {} t={:.1}s",
            r.stage,
            r.loss,
            r.holdout_before,
            r.holdout_after,
            r.psnr,
            r.mean_nc().map(|v| format!("{v:.3}")).unwrap_or_default(),
            start.elapsed().as_secs_f64()
        );
    }
    let tests = synth::covers(cfg.image_size, 3, 5000);
    let wm = synth::shape_watermark(grid, grid, 0, 4242);
    let battery = AttackSpec::battery();
    let opts = EvalOptions {
        embed: cfg.embed,
        ..Default::default()
    };
    let trained = evaluate(&t.weights, &tests, &wm, &battery, &opts)?;
    let fresh = evaluate(&DetectorWeights::new(cfg.width, cfg.seed), &tests, &wm, &battery, &opts)?;
    let unreg = evaluate(&t.weights, &tests, &wm, &battery, &EvalOptions { registered: false, ..opts.clone() })?;
    println!("psnr trained {:?} fresh {:?}", trained.psnr, fresh.psnr);
    for ((a, b), c) in trained.rows.iter().zip(&fresh.rows).zip(&unreg.rows) {
        println!(
            "{:<4} trained {:.4} fresh {:.4} unregistered {:.4}",
            a.attack.label(),
            a.mean_nc(),
            b.mean_nc(),
            c.mean_nc()
        );
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
