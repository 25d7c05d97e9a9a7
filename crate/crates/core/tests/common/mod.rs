#![allow(dead_code)]

use cnnmark::net::{Detector, DetectorWeights, BLOCK_LEN};
use cnnmark::nn::{softmax_xent, Mode, Tensor};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_blocks(seed: u64, n: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(&[n, 8, 8, 3], (0..n * BLOCK_LEN).map(|_| rng.random::<f32>()).collect()).unwrap()
}

/// Weights with non-trivial batch-norm parameters so every gradient path is exercised.
pub fn perturbed_detector(width: usize, seed: u64) -> Detector<f64> {
    let mut w = DetectorWeights::new(width, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let mut jitter = |t: &mut Tensor<f32>, lo: f32, hi: f32| {
        for v in t.data_mut() {
            *v = rng.random_range(lo..hi);
        }
    };
    for l in &mut w.layers {
        jitter(&mut l.bias, -0.1, 0.1);
        if let Some(bn) = &mut l.bn {
            jitter(&mut bn.gamma, 0.5, 1.5);
            jitter(&mut bn.beta, -0.2, 0.2);
            jitter(&mut bn.running_mean, -0.1, 0.1);
            jitter(&mut bn.running_var, 0.5, 1.5);
        }
    }
    w.cast()
}

fn mean_loss(d: &Detector<f64>, blocks: &Tensor<f64>, labels: &[u8], mode: Mode) -> f64 {
    let tape = d.forward_tape(blocks, mode).unwrap();
    let n = labels.len() as f64;
    tape.logits().iter().zip(labels).map(|(l, &m)| softmax_xent(*l, m).0).sum::<f64>() / n
}

/// Magnitudes below this are compared absolutely; central differences of an
/// O(1) loss at h = 1e-6 carry roughly 1e-10 of rounding noise.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub failures: usize,
    pub worst: f64,
}

impl GradCheck {
    fn record(&mut self, analytic: f64, numeric: f64, tol: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.checked += 1;
        self.worst = self.worst.max(rel);
        if rel > tol {
            self.failures += 1;
        }
    }
}

/// Central differences of the mean batch loss against every parameter (or a
/// sample of `per_tensor` coordinates per buffer) and every input pixel (or
/// `inputs` sampled ones).
pub fn check_gradients(
    d: &Detector<f64>,
    blocks: &Tensor<f64>,
    labels: &[u8],
    mode: Mode,
    per_tensor: Option<usize>,
    inputs: Option<usize>,
    tol: f64,
    seed: u64,
) -> GradCheck {
    let h = 1e-6;
    let (_, grads, _) = d.loss_and_grads(blocks, labels, mode).unwrap();
    let analytic: Vec<Vec<f64>> = grads.params().into_iter().map(|g| g.to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::default();
    let mut probe = d.clone();
    for (t, g) in analytic.iter().enumerate() {
        let coords = match per_tensor {
            Some(k) if k < g.len() => sample(&mut rng, g.len(), k).into_vec(),
            _ => (0..g.len()).collect(),
        };
        for j in coords {
            let orig = probe.params_mut()[t][j];
            probe.params_mut()[t][j] = orig + h;
            let up = mean_loss(&probe, blocks, labels, mode);
            probe.params_mut()[t][j] = orig - h;
            let down = mean_loss(&probe, blocks, labels, mode);
            probe.params_mut()[t][j] = orig;
            out.record(g[j], (up - down) / (2.0 * h), tol);
        }
    }
    let coords = match inputs {
        Some(k) if k < blocks.len() => sample(&mut rng, blocks.len(), k).into_vec(),
        _ => (0..blocks.len()).collect(),
    };
    let mut x = blocks.clone();
    for j in coords {
        let orig = x.data()[j];
        x.data_mut()[j] = orig + h;
        let up = mean_loss(d, &x, labels, mode);
        x.data_mut()[j] = orig - h;
        let down = mean_loss(d, &x, labels, mode);
        x.data_mut()[j] = orig;
        out.record(grads.input.data()[j], (up - down) / (2.0 * h), tol);
    }
    out
}

/// Direct seven-loop same-padded convolution.
pub fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let [n, h, w, cin]: [usize; 4] = x.shape().try_into().unwrap();
    let [ks, _, _, cout]: [usize; 4] = k.shape().try_into().unwrap();
    let pad = (ks / 2) as isize;
    let mut out = Tensor::zeros(&[n, h, w, cout]);
    for bi in 0..n {
        for y in 0..h {
            for xx in 0..w {
                for co in 0..cout {
                    let mut acc = b.data()[co];
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let sy = y as isize + ky as isize - pad;
                            let sx = xx as isize + kx as isize - pad;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x.data()[((bi * h + sy as usize) * w + sx as usize) * cin + ci];
                                acc += xv * k.data()[((ky * ks + kx) * cin + ci) * cout + co];
                            }
                        }
                    }
                    out.data_mut()[((bi * h + y) * w + xx) * cout + co] = acc;
                }
            }
        }
    }
    out
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}
