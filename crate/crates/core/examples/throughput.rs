//! Per-block forward and forward+backward timings at several widths.

use cnnmark::net::DetectorWeights;
use cnnmark::nn::{Mode, Tensor};
use std::time::Instant;

fn main() {
    for width in [16, 32, 64, 128] {
        let d = DetectorWeights::new(width, 0);
        let n = 128;
        let blocks = Tensor::from_vec(&[n, 8, 8, 3], (0..n * 192).map(|i| (i % 97) as f32 / 97.0).collect()).unwrap();
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let t = Instant::now();
        let reps = if width >= 64 { 2 } else { 5 };
        for _ in 0..reps {
            let _ = d.loss_and_grads(&blocks, &labels, Mode::Train).unwrap();
        }
        let per = t.elapsed().as_secs_f64() / (reps * n) as f64;
        let t = Instant::now();
        for _ in 0..reps {
            let _ = d.logits(&blocks).unwrap();
        }
        let fwd = t.elapsed().as_secs_f64() / (reps * n) as f64;
        println!("width {width}: train fwd+bwd {:.1} us/block, infer fwd {:.1} us/block", per * 1e6, fwd * 1e6);
    }
}
