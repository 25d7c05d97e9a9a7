use super::scalar::Scalar;
use super::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
/// Weight kept by the running statistics on every training batch.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only.
    Infer,
}

/// Per-channel batch normalization over the last axis.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<S> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
}

/// Values saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<S> {
    normalized: Tensor<S>,
    inv_std: Vec<S>,
    mode: Mode,
    batch_mean: Vec<S>,
    batch_var: Vec<S>,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], S::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], S::one()),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalize `x` with batch ([`Mode::Train`]) or running ([`Mode::Infer`])
    /// statistics. Running statistics change only through [`BatchNorm::absorb`].
    pub fn forward(&self, x: &Tensor<S>, mode: Mode) -> (Tensor<S>, BnCache<S>) {
        match mode {
            Mode::Infer => self.forward_infer(x),
            Mode::Train => self.forward_train(x),
        }
    }

    pub fn forward_infer(&self, x: &Tensor<S>) -> (Tensor<S>, BnCache<S>) {
        let c = self.channels();
        assert_eq!(x.channels(), c, "batchnorm: channel mismatch");
        let eps = S::lit(BN_EPS);
        let inv_std: Vec<S> = self
            .running_var
            .data()
            .iter()
            .map(|&v| (v + eps).sqrt().recip())
            .collect();
        let mean = self.running_mean.data();
        let mut normalized = x.clone();
        for row in normalized.data_mut().chunks_exact_mut(c) {
            for ch in 0..c {
                row[ch] = (row[ch] - mean[ch]) * inv_std[ch];
            }
        }
        let y = self.affine(&normalized);
        (
            y,
            BnCache {
                normalized,
                inv_std,
                mode: Mode::Infer,
                batch_mean: vec![],
                batch_var: vec![],
            },
        )
    }

    fn forward_train(&self, x: &Tensor<S>) -> (Tensor<S>, BnCache<S>) {
        let c = self.channels();
        assert_eq!(x.channels(), c, "batchnorm: channel mismatch");
        let count = x.len() / c;
        assert!(count >= 2, "batchnorm: training needs at least two values per channel");
        let n = S::lit(count as f64);
        let mut mean = vec![S::zero(); c];
        for row in x.data().chunks_exact(c) {
            for ch in 0..c {
                mean[ch] = mean[ch] + row[ch];
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / n);
        let mut var = vec![S::zero(); c];
        for row in x.data().chunks_exact(c) {
            for ch in 0..c {
                let d = row[ch] - mean[ch];
                var[ch] = var[ch] + d * d;
            }
        }
        var.iter_mut().for_each(|v| *v = *v / n);

        let eps = S::lit(BN_EPS);
        let inv_std: Vec<S> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let mut normalized = x.clone();
        for row in normalized.data_mut().chunks_exact_mut(c) {
            for ch in 0..c {
                row[ch] = (row[ch] - mean[ch]) * inv_std[ch];
            }
        }

        let y = self.affine(&normalized);
        (
            y,
            BnCache {
                normalized,
                inv_std,
                mode: Mode::Train,
                batch_mean: mean,
                batch_var: var,
            },
        )
    }

    /// Fold the batch statistics of a training-mode pass into the running
    /// statistics. Infer-mode caches are ignored.
    pub fn absorb(&mut self, cache: &BnCache<S>) {
        if cache.mode != Mode::Train {
            return;
        }
        let keep = S::lit(BN_MOMENTUM);
        let take = S::one() - keep;
        let rm = self.running_mean.data_mut();
        for (r, &m) in rm.iter_mut().zip(&cache.batch_mean) {
            *r = keep * *r + take * m;
        }
        let rv = self.running_var.data_mut();
        for (r, &v) in rv.iter_mut().zip(&cache.batch_var) {
            *r = keep * *r + take * v;
        }
    }

    fn affine(&self, normalized: &Tensor<S>) -> Tensor<S> {
        let c = self.channels();
        let (g, b) = (self.gamma.data(), self.beta.data());
        let mut y = normalized.clone();
        for row in y.data_mut().chunks_exact_mut(c) {
            for ch in 0..c {
                row[ch] = row[ch] * g[ch] + b[ch];
            }
        }
        y
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(&self, cache: &BnCache<S>, grad_out: &Tensor<S>) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
        let c = self.channels();
        let xhat = cache.normalized.data();
        let dy = grad_out.data();
        assert_eq!(dy.len(), xhat.len(), "batchnorm backward: shape mismatch");
        let mut dgamma = vec![S::zero(); c];
        let mut dbeta = vec![S::zero(); c];
        for (row_dy, row_xh) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for ch in 0..c {
                dbeta[ch] = dbeta[ch] + row_dy[ch];
                dgamma[ch] = dgamma[ch] + row_dy[ch] * row_xh[ch];
            }
        }
        let g = self.gamma.data();
        let mut dx = grad_out.clone();
        match cache.mode {
            Mode::Infer => {
                for row in dx.data_mut().chunks_exact_mut(c) {
                    for ch in 0..c {
                        row[ch] = row[ch] * g[ch] * cache.inv_std[ch];
                    }
                }
            }
            Mode::Train => {
                let n = S::lit((dy.len() / c) as f64);
                for (row, row_xh) in dx.data_mut().chunks_exact_mut(c).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        let scale = g[ch] * cache.inv_std[ch] / n;
                        row[ch] = scale * (n * row[ch] - dbeta[ch] - row_xh[ch] * dgamma[ch]);
                    }
                }
            }
        }
        (
            dx,
            Tensor::from_vec(&[c], dgamma).expect("channel count"),
            Tensor::from_vec(&[c], dbeta).expect("channel count"),
        )
    }
}
