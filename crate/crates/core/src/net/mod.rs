//! The fixed watermark detector: a small pre-activation residual network
//! that maps one 8x8 RGB block to a two-way softmax over the message bit.
//!
//! Layer order (14 convolutions, 13 ReLUs):
//!
//! ```text
//! stem   : x - 0.5 -> conv3x3(3 -> W) -> BN -> ReLU
//! unit*6 : h + conv1x1(ReLU(BN(conv3x3(ReLU(BN(h))))))
//! head   : conv1x1(W -> 2) -> spatial mean -> softmax
//! ```
//!
//! `W` is 128 at the default width. The batch norm stored with the stem
//! follows its convolution; the one stored with each residual convolution
//! precedes it; the head has none.

mod io;

pub use io::{load_weights, read_weights, save_weights, weights_digest, write_weights, FORMAT_VERSION, MAGIC};

use crate::error::{Error, Result};
use crate::nn::{
    conv2d, conv2d_backward, relu, relu_backward, softmax2, softmax_xent, BatchNorm, BnCache,
    Mode, Scalar, Tensor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

/// Block edge in pixels.
pub const BLOCK: usize = 8;
pub const INPUT_CHANNELS: usize = 3;
pub const CLASSES: usize = 2;
pub const RESIDUAL_UNITS: usize = 6;
pub const CONV_LAYERS: usize = 2 + 2 * RESIDUAL_UNITS;
pub const RELU_LAYERS: usize = 1 + 2 * RESIDUAL_UNITS;
pub const DEFAULT_WIDTH: usize = 128;
/// Values per block tensor.
pub const BLOCK_LEN: usize = BLOCK * BLOCK * INPUT_CHANNELS;

/// Kernel size of convolution `i`.
pub const fn kernel_size(i: usize) -> usize {
    if i == 0 {
        3
    } else if i == CONV_LAYERS - 1 {
        1
    } else if i % 2 == 1 {
        3
    } else {
        1
    }
}

/// One convolution with the batch norm attached to it.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<S> {
    /// `K x K x Cin x Cout`.
    pub kernel: Tensor<S>,
    pub bias: Tensor<S>,
    pub bn: Option<BatchNorm<S>>,
}

impl<S: Scalar> LayerParams<S> {
    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[0]
    }
    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }
    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[3]
    }

    fn params(&self) -> Vec<&[S]> {
        let mut out = vec![self.kernel.data(), self.bias.data()];
        if let Some(bn) = &self.bn {
            out.push(bn.gamma.data());
            out.push(bn.beta.data());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [S]> {
        let mut out = vec![self.kernel.data_mut(), self.bias.data_mut()];
        if let Some(bn) = &mut self.bn {
            out.push(bn.gamma.data_mut());
            out.push(bn.beta.data_mut());
        }
        out
    }
}

/// Softmax output for one block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockPrediction {
    pub p0: f32,
    pub p1: f32,
}

impl BlockPrediction {
    pub fn prob(&self, bit: u8) -> f32 {
        if bit == 0 {
            self.p0
        } else {
            self.p1
        }
    }
}

/// Full parameter set of the detector.
#[derive(Clone, Debug, PartialEq)]
pub struct Detector<S> {
    width: usize,
    pub layers: Vec<LayerParams<S>>,
}

/// The single-precision detector used everywhere outside of gradient checks.
pub type DetectorWeights = Detector<f32>;

/// Digest of the architecture constants for a given width.
pub fn arch_hash(width: usize) -> u64 {
    let kernels: Vec<String> = (0..CONV_LAYERS).map(|i| kernel_size(i).to_string()).collect();
    let desc = format!(
        "preact-resnet;block={BLOCK};in={INPUT_CHANNELS};classes={CLASSES};units={RESIDUAL_UNITS};\
         convs={CONV_LAYERS};relus={RELU_LAYERS};width={width};kernels={};head=conv1x1+mean;\
         center=0.5",
        kernels.join(",")
    );
    let digest = Sha256::digest(desc.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Per-layer gradients, aligned with [`Detector::layers`].
#[derive(Clone, Debug)]
pub struct LayerGrads<S> {
    pub kernel: Tensor<S>,
    pub bias: Tensor<S>,
    pub gamma: Option<Tensor<S>>,
    pub beta: Option<Tensor<S>>,
}

#[derive(Clone, Debug)]
pub struct Gradients<S> {
    pub layers: Vec<LayerGrads<S>>,
    /// Gradient w.r.t. the input blocks, `N x 8 x 8 x 3`.
    pub input: Tensor<S>,
}

impl<S: Scalar> Gradients<S> {
    /// Flattened in the same order as [`Detector::params_mut`].
    pub fn params(&self) -> Vec<&[S]> {
        let mut out = vec![];
        for g in &self.layers {
            out.push(g.kernel.data());
            out.push(g.bias.data());
            if let (Some(gm), Some(bt)) = (&g.gamma, &g.beta) {
                out.push(gm.data());
                out.push(bt.data());
            }
        }
        out
    }
}

struct UnitTape<S> {
    bn_a: BnCache<S>,
    pre_a: Tensor<S>,
    conv3_in: Tensor<S>,
    bn_b: BnCache<S>,
    pre_b: Tensor<S>,
    conv1_in: Tensor<S>,
}

/// Activations saved by a forward pass. Backward consumes one of these, so
/// there is no way to ask for gradients without having run forward first.
pub struct Tape<S> {
    mode: Mode,
    batch: usize,
    stem_in: Tensor<S>,
    stem_bn: BnCache<S>,
    stem_pre: Tensor<S>,
    units: Vec<UnitTape<S>>,
    head_in: Tensor<S>,
    logits: Vec<[S; 2]>,
}

impl<S> Tape<S> {
    pub fn logits(&self) -> &[[S; 2]] {
        &self.logits
    }
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

impl<S: Scalar> Detector<S> {
    /// He-normal initialization, deterministic in `seed`.
    pub fn new(width: usize, seed: u64) -> Self {
        assert!(width > 0, "width must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..CONV_LAYERS)
            .map(|i| {
                let k = kernel_size(i);
                let cin = if i == 0 { INPUT_CHANNELS } else { width };
                let cout = if i == CONV_LAYERS - 1 { CLASSES } else { width };
                let std = (2.0 / (k * k * cin) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let kernel = Tensor::from_vec(
                    &[k, k, cin, cout],
                    (0..k * k * cin * cout)
                        .map(|_| S::lit(normal.sample(&mut rng)))
                        .collect(),
                )
                .expect("kernel extents");
                let bn = if i == CONV_LAYERS - 1 {
                    None
                } else {
                    Some(BatchNorm::new(width))
                };
                LayerParams {
                    kernel,
                    bias: Tensor::zeros(&[cout]),
                    bn,
                }
            })
            .collect();
        Self { width, layers }
    }

    /// Assemble from explicit layers, validating the architecture.
    pub fn from_layers(width: usize, layers: Vec<LayerParams<S>>) -> Result<Self> {
        let d = Self { width, layers };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != CONV_LAYERS {
            return Err(Error::Config(format!(
                "detector needs {CONV_LAYERS} convolutions, got {}",
                self.layers.len()
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let k = kernel_size(i);
            let cin = if i == 0 { INPUT_CHANNELS } else { self.width };
            let cout = if i == CONV_LAYERS - 1 { CLASSES } else { self.width };
            if l.kernel.shape() != [k, k, cin, cout] || l.bias.shape() != [cout] {
                return Err(Error::Config(format!(
                    "layer {i}: expected kernel [{k}, {k}, {cin}, {cout}], got {:?}",
                    l.kernel.shape()
                )));
            }
            let wants_bn = i != CONV_LAYERS - 1;
            match (&l.bn, wants_bn) {
                (Some(bn), true) if bn.channels() == self.width => {
                    if bn.running_var.data().iter().any(|&v| v < S::zero()) {
                        return Err(Error::Config(format!("layer {i}: negative running variance")));
                    }
                }
                (None, false) => {}
                _ => {
                    return Err(Error::Config(format!("layer {i}: batch norm layout mismatch")));
                }
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn arch_hash(&self) -> u64 {
        arch_hash(self.width)
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| l.params().into_iter().map(|p| p.len()))
            .collect()
    }

    pub fn params(&self) -> Vec<&[S]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    /// Trainable buffers: kernel, bias, then gamma and beta where present, layer by layer.
    pub fn params_mut(&mut self) -> Vec<&mut [S]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn cast<T: Scalar>(&self) -> Detector<T> {
        Detector {
            width: self.width,
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    kernel: l.kernel.cast(),
                    bias: l.bias.cast(),
                    bn: l.bn.as_ref().map(|bn| BatchNorm {
                        gamma: bn.gamma.cast(),
                        beta: bn.beta.cast(),
                        running_mean: bn.running_mean.cast(),
                        running_var: bn.running_var.cast(),
                    }),
                })
                .collect(),
        }
    }

    fn bn(&self, i: usize) -> &BatchNorm<S> {
        self.layers[i].bn.as_ref().expect("hidden layers carry batch norm")
    }

    fn conv(&self, i: usize, x: &Tensor<S>) -> Tensor<S> {
        conv2d(x, &self.layers[i].kernel, &self.layers[i].bias).expect("validated architecture")
    }

    fn check_blocks(blocks: &Tensor<S>) -> Result<usize> {
        match blocks.shape() {
            &[n, BLOCK, BLOCK, INPUT_CHANNELS] => Ok(n),
            s => Err(Error::Usage(format!(
                "detector input must be N x {BLOCK} x {BLOCK} x {INPUT_CHANNELS}, got {s:?}"
            ))),
        }
    }

    /// Forward pass over a batch of blocks, keeping everything backward needs.
    ///
    /// The tape also carries the batch statistics of a [`Mode::Train`] pass;
    /// pass it to [`Detector::absorb_batch_stats`] to update running statistics.
    pub fn forward_tape(&self, blocks: &Tensor<S>, mode: Mode) -> Result<Tape<S>> {
        let n = Self::check_blocks(blocks)?;
        let half = S::lit(0.5);
        let stem_in = blocks.map(|v| v - half);
        let z = self.conv(0, &stem_in);
        let (stem_pre, stem_bn) = self.bn(0).forward(&z, mode);
        let mut h = relu(&stem_pre);

        let mut units = Vec::with_capacity(RESIDUAL_UNITS);
        for u in 0..RESIDUAL_UNITS {
            let (i3, i1) = (1 + 2 * u, 2 + 2 * u);
            let (pre_a, bn_a) = self.bn(i3).forward(&h, mode);
            let conv3_in = relu(&pre_a);
            let z3 = self.conv(i3, &conv3_in);
            let (pre_b, bn_b) = self.bn(i1).forward(&z3, mode);
            let conv1_in = relu(&pre_b);
            let z1 = self.conv(i1, &conv1_in);
            h.add_assign(&z1);
            units.push(UnitTape {
                bn_a,
                pre_a,
                conv3_in,
                bn_b,
                pre_b,
                conv1_in,
            });
        }

        let out = self.conv(CONV_LAYERS - 1, &h);
        let positions = S::lit((BLOCK * BLOCK) as f64);
        let logits = out
            .data()
            .chunks_exact(BLOCK * BLOCK * CLASSES)
            .map(|blk| {
                let mut acc = [S::zero(); 2];
                for px in blk.chunks_exact(CLASSES) {
                    acc[0] = acc[0] + px[0];
                    acc[1] = acc[1] + px[1];
                }
                [acc[0] / positions, acc[1] / positions]
            })
            .collect();

        Ok(Tape {
            mode,
            batch: n,
            stem_in,
            stem_bn,
            stem_pre,
            units,
            head_in: h,
            logits,
        })
    }

    /// Fold the batch statistics recorded on a training tape into the running statistics.
    pub fn absorb_batch_stats(&mut self, tape: &Tape<S>) {
        if tape.mode != Mode::Train {
            return;
        }
        let mut caches = vec![&tape.stem_bn];
        for u in &tape.units {
            caches.push(&u.bn_a);
            caches.push(&u.bn_b);
        }
        for (i, cache) in caches.into_iter().enumerate() {
            self.layers[i].bn.as_mut().expect("hidden layer").absorb(cache);
        }
    }

    /// Reverse pass given `dL/dlogits` for every block of the tape.
    pub fn backward(&self, tape: &Tape<S>, grad_logits: &[[S; 2]]) -> Result<Gradients<S>> {
        if grad_logits.len() != tape.batch {
            return Err(Error::Usage(format!(
                "backward got {} logit gradients for a batch of {}",
                grad_logits.len(),
                tape.batch
            )));
        }
        let positions = S::lit((BLOCK * BLOCK) as f64);
        let mut d_out = Vec::with_capacity(tape.batch * BLOCK * BLOCK * CLASSES);
        for g in grad_logits {
            for _ in 0..BLOCK * BLOCK {
                d_out.push(g[0] / positions);
                d_out.push(g[1] / positions);
            }
        }
        let d_out = Tensor::from_vec(&[tape.batch, BLOCK, BLOCK, CLASSES], d_out)?;

        let mut grads: Vec<Option<LayerGrads<S>>> = vec![None; CONV_LAYERS];
        let head = CONV_LAYERS - 1;
        let cg = conv2d_backward(
            &tape.head_in,
            &self.layers[head].kernel,
            &self.layers[head].bias,
            &d_out,
        )?;
        grads[head] = Some(LayerGrads {
            kernel: cg.kernel,
            bias: cg.bias,
            gamma: None,
            beta: None,
        });
        let mut dh = cg.input;

        for u in (0..RESIDUAL_UNITS).rev() {
            let t = &tape.units[u];
            let (i3, i1) = (1 + 2 * u, 2 + 2 * u);
            let c1 = conv2d_backward(
                &t.conv1_in,
                &self.layers[i1].kernel,
                &self.layers[i1].bias,
                &dh,
            )?;
            let d_pre_b = relu_backward(&t.pre_b, &c1.input);
            let (d_z3, dg_b, db_b) = self.bn(i1).backward(&t.bn_b, &d_pre_b);
            grads[i1] = Some(LayerGrads {
                kernel: c1.kernel,
                bias: c1.bias,
                gamma: Some(dg_b),
                beta: Some(db_b),
            });
            let c3 = conv2d_backward(
                &t.conv3_in,
                &self.layers[i3].kernel,
                &self.layers[i3].bias,
                &d_z3,
            )?;
            let d_pre_a = relu_backward(&t.pre_a, &c3.input);
            let (d_h_branch, dg_a, db_a) = self.bn(i3).backward(&t.bn_a, &d_pre_a);
            grads[i3] = Some(LayerGrads {
                kernel: c3.kernel,
                bias: c3.bias,
                gamma: Some(dg_a),
                beta: Some(db_a),
            });
            dh.add_assign(&d_h_branch);
        }

        let d_pre = relu_backward(&tape.stem_pre, &dh);
        let (d_z, dg, db) = self.bn(0).backward(&tape.stem_bn, &d_pre);
        let c0 = conv2d_backward(&tape.stem_in, &self.layers[0].kernel, &self.layers[0].bias, &d_z)?;
        grads[0] = Some(LayerGrads {
            kernel: c0.kernel,
            bias: c0.bias,
            gamma: Some(dg),
            beta: Some(db),
        });

        Ok(Gradients {
            layers: grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
            input: c0.input,
        })
    }

    /// Infer-mode logits for a batch of blocks.
    pub fn logits(&self, blocks: &Tensor<S>) -> Result<Vec<[S; 2]>> {
        Ok(self.forward_tape(blocks, Mode::Infer)?.logits)
    }

    /// Mean cross-entropy of a batch against `labels`, with gradients.
    pub fn loss_and_grads(
        &self,
        blocks: &Tensor<S>,
        labels: &[u8],
        mode: Mode,
    ) -> Result<(S, Gradients<S>, Tape<S>)> {
        let tape = self.forward_tape(blocks, mode)?;
        if labels.len() != tape.batch {
            return Err(Error::Usage(format!(
                "{} labels for {} blocks",
                labels.len(),
                tape.batch
            )));
        }
        let n = S::lit(tape.batch as f64);
        let mut total = S::zero();
        let mut dl = Vec::with_capacity(tape.batch);
        for (lg, &m) in tape.logits.iter().zip(labels) {
            let (loss, g) = softmax_xent(*lg, m);
            total = total + loss;
            dl.push([g[0] / n, g[1] / n]);
        }
        let grads = self.backward(&tape, &dl)?;
        Ok((total / n, grads, tape))
    }

    /// Embedding objective for every block and its gradient w.r.t. the pixels:
    /// `-log p(m | W, B) + λ/2 ‖B − B₀‖²`, batch norm in infer mode.
    ///
    /// Returns per-block objective, per-block cross-entropy and the `N x 8 x 8 x 3` gradient.
    pub fn input_gradient(
        &self,
        blocks: &Tensor<S>,
        bits: &[u8],
        lambda: S,
        originals: &Tensor<S>,
    ) -> Result<InputGradient<S>> {
        if blocks.shape() != originals.shape() {
            return Err(Error::Shape(format!(
                "block {:?} and original {:?} differ",
                blocks.shape(),
                originals.shape()
            )));
        }
        let tape = self.forward_tape(blocks, Mode::Infer)?;
        if bits.len() != tape.batch {
            return Err(Error::Usage(format!("{} bits for {} blocks", bits.len(), tape.batch)));
        }
        let mut xent = Vec::with_capacity(tape.batch);
        let mut dl = Vec::with_capacity(tape.batch);
        for (lg, &m) in tape.logits.iter().zip(bits) {
            let (loss, g) = softmax_xent(*lg, m);
            xent.push(loss);
            dl.push(g);
        }
        let mut grad = self.backward(&tape, &dl)?.input;
        let half = S::lit(0.5);
        let mut objective = xent.clone();
        for (((g, &b), &b0), k) in grad
            .data_mut()
            .iter_mut()
            .zip(blocks.data())
            .zip(originals.data())
            .enumerate()
            .map(|(i, v)| (v, i / BLOCK_LEN))
        {
            let d = b - b0;
            *g = *g + lambda * d;
            objective[k] = objective[k] + half * lambda * d * d;
        }
        Ok(InputGradient {
            objective,
            xent,
            probs: tape.logits.iter().map(|&l| softmax2(l)).collect(),
            grad,
        })
    }
}

pub struct InputGradient<S> {
    pub objective: Vec<S>,
    pub xent: Vec<S>,
    pub probs: Vec<[S; 2]>,
    pub grad: Tensor<S>,
}

impl DetectorWeights {
    /// Infer-mode prediction for every block of the batch.
    pub fn predict(&self, blocks: &Tensor<f32>) -> Result<Vec<BlockPrediction>> {
        Ok(self
            .logits(blocks)?
            .into_iter()
            .map(|l| {
                let [p0, p1] = softmax2(l);
                BlockPrediction { p0, p1 }
            })
            .collect())
    }

    /// Infer-mode prediction for a single `8 x 8 x 3` block.
    pub fn forward(&self, block: &Tensor<f32>) -> Result<BlockPrediction> {
        if block.shape() != [BLOCK, BLOCK, INPUT_CHANNELS] {
            return Err(Error::Usage(format!(
                "block must be {BLOCK} x {BLOCK} x {INPUT_CHANNELS}, got {:?}",
                block.shape()
            )));
        }
        let batch = block.clone().reshape(&[1, BLOCK, BLOCK, INPUT_CHANNELS])?;
        Ok(self.predict(&batch)?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_blocks(seed: u64, n: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            &[n, BLOCK, BLOCK, INPUT_CHANNELS],
            (0..n * BLOCK_LEN).map(|_| rng.random::<f32>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn architecture_constants() {
        let d = DetectorWeights::new(DEFAULT_WIDTH, 0);
        assert_eq!(d.layers.len(), 14);
        assert_eq!(CONV_LAYERS, 14);
        assert_eq!(RELU_LAYERS, 13);
        let kernels: Vec<usize> = d.layers.iter().map(|l| l.kernel_size()).collect();
        assert_eq!(kernels, [3, 3, 1, 3, 1, 3, 1, 3, 1, 3, 1, 3, 1, 1]);
        for l in &d.layers[..13] {
            assert_eq!(l.out_channels(), 128);
            assert!(l.bn.is_some());
        }
        assert_eq!(d.layers[13].out_channels(), 2);
        assert!(d.layers[13].bn.is_none());
        assert_eq!(d.layers[0].in_channels(), 3);
        d.validate().unwrap();
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = DetectorWeights::new(16, 42);
        let b = DetectorWeights::new(16, 42);
        let c = DetectorWeights::new(16, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(arch_hash(16), arch_hash(128));
    }

    #[test]
    fn random_block_gives_a_distribution() {
        let d = DetectorWeights::new(DEFAULT_WIDTH, 1);
        let blk = random_blocks(2, 1).reshape(&[8, 8, 3]).unwrap();
        let p = d.forward(&blk).unwrap();
        assert!(p.p0.is_finite() && p.p1.is_finite());
        assert!((p.p0 + p.p1 - 1.0).abs() < 1e-6);
        assert!((0.0..=1.0).contains(&p.p0));
    }

    #[test]
    fn zero_head_is_undecided() {
        let mut d = DetectorWeights::new(16, 3);
        d.layers[13].kernel = Tensor::zeros(&[1, 1, 16, 2]);
        let p = d.forward(&random_blocks(4, 1).reshape(&[8, 8, 3]).unwrap()).unwrap();
        assert_eq!(p.p0, 0.5);
        assert_eq!(p.p1, 0.5);
    }

    #[test]
    fn infer_mode_ignores_batch_composition() {
        let d = DetectorWeights::new(32, 5);
        let blocks = random_blocks(6, 5);
        let batched = d.predict(&blocks).unwrap();
        for (i, want) in batched.iter().enumerate() {
            let single = Tensor::from_vec(
                &[BLOCK, BLOCK, INPUT_CHANNELS],
                blocks.data()[i * BLOCK_LEN..(i + 1) * BLOCK_LEN].to_vec(),
            )
            .unwrap();
            let got = d.forward(&single).unwrap();
            assert!((got.p0 - want.p0).abs() <= 1e-5);
        }
    }

    #[test]
    fn wrong_block_shape_is_a_usage_error() {
        let d = DetectorWeights::new(8, 0);
        let err = d.forward(&Tensor::zeros(&[4, 4, 3])).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        let err = d.predict(&Tensor::zeros(&[2, 8, 8, 1])).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn regularizer_vanishes_at_the_original() {
        let d = DetectorWeights::new(8, 7);
        let b = random_blocks(8, 2);
        let with = d.input_gradient(&b, &[0, 1], 5.0, &b).unwrap();
        let without = d.input_gradient(&b, &[0, 1], 0.0, &b).unwrap();
        assert_eq!(with.grad, without.grad);
        assert_eq!(with.objective, with.xent);
    }

    #[test]
    fn zero_lambda_is_pure_cross_entropy() {
        let d = DetectorWeights::new(8, 9).cast::<f64>();
        let b = random_blocks(10, 1).cast::<f64>();
        let b0 = b.map(|v| (v * 0.5).max(0.0));
        let ig = d.input_gradient(&b, &[1], 0.0, &b0).unwrap();
        let (_, g, _) = d.loss_and_grads(&b, &[1], Mode::Infer).unwrap();
        for (a, e) in ig.grad.data().iter().zip(g.input.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_head_derivatives_by_hand() {
        // The head bias is added at every position before the spatial mean,
        // so its gradient is the batch-mean of dL/dlogits.
        let mut d = Detector::<f64>::new(4, 11);
        let b = random_blocks(12, 3).cast::<f64>();
        let (_, g, tape) = d.loss_and_grads(&b, &[0, 1, 0], Mode::Infer).unwrap();
        let mut expect = [0.0; 2];
        for (lg, m) in tape.logits().iter().zip([0u8, 1, 0]) {
            let (_, gl) = softmax_xent(*lg, m);
            expect[0] += gl[0] / 3.0;
            expect[1] += gl[1] / 3.0;
        }
        let head = &g.layers[13].bias;
        assert!((head.data()[0] - expect[0]).abs() < 1e-12);
        assert!((head.data()[1] - expect[1]).abs() < 1e-12);
        // a constant objective has zero input gradient
        d.layers[13].kernel = Tensor::zeros(&[1, 1, 4, 2]);
        let g = d.backward(&d.forward_tape(&b, Mode::Infer).unwrap(), &[[0.0, 0.0]; 3]).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
    }
}
