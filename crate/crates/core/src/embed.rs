//! Writing one bit per block by descending the detector loss on the pixels.

use crate::error::{Error, Result};
use crate::net::{DetectorWeights, BLOCK, BLOCK_LEN, INPUT_CHANNELS};
use crate::nn::{Tensor, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::raster::Image;
use crate::watermark::WatermarkMap;

/// Blocks per detector call; a memory bound only, results do not depend on it.
const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepRule {
    /// Adam on the normalized gradient, moments private to each block.
    Adam,
    /// `B -= α_t · normalize(∇L)`.
    Normalized,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbedParams {
    /// Initial embedding rate.
    pub alpha0: f64,
    /// Weight of the `½λ‖B − B₀‖²` fidelity term.
    pub lambda: f64,
    pub max_iters: usize,
    /// Per-iteration decay of the embedding rate.
    pub anneal: f64,
    /// Stop a block once the detector assigns its bit more than this probability.
    pub early_exit: f64,
    pub rule: StepRule,
}

impl Default for EmbedParams {
    fn default() -> Self {
        Self {
            alpha0: 0.01,
            lambda: 0.01,
            max_iters: 12,
            anneal: 0.9,
            early_exit: 0.99,
            rule: StepRule::Adam,
        }
    }
}

impl EmbedParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha0 >= 0.0
            && self.alpha0.is_finite()
            && self.lambda >= 0.0
            && self.max_iters >= 1
            && self.anneal > 0.0
            && self.anneal <= 1.0
            && self.early_exit > 0.0
            && self.early_exit <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid embedding parameters {self:?}")))
        }
    }

    /// Step size at iteration `t` (0-based).
    pub fn rate(&self, t: usize) -> f64 {
        self.alpha0 * self.anneal.powi(t as i32)
    }
}

/// Cross-entropy `-log p(m)` of every block at every iteration, `max_iters + 1`
/// rows (row 0 is the unmodified block). Blocks that stopped early repeat their
/// last value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbedTrace {
    pub xent: Vec<Vec<f32>>,
    /// Iterations actually taken per block.
    pub steps: Vec<usize>,
}

impl EmbedTrace {
    pub fn mean_per_iteration(&self) -> Vec<f64> {
        self.xent
            .iter()
            .map(|row| row.iter().map(|&v| v as f64).sum::<f64>() / row.len().max(1) as f64)
            .collect()
    }
}

/// Subtract the mean and divide by the standard deviation; a constant
/// gradient is returned unchanged.
pub fn normalize_gradient(g: &mut [f32]) {
    let n = g.len() as f64;
    let mean = g.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = g.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return;
    }
    for v in g {
        *v = ((*v as f64 - mean) / std) as f32;
    }
}

struct BlockState {
    current: Vec<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
    done: bool,
    steps: usize,
}

/// Embed `bits[i]` into block `i` of `originals` (`N x 8 x 8 x 3`, values in `[0, 1]`).
pub fn embed_blocks(
    w: &DetectorWeights,
    originals: &Tensor<f32>,
    bits: &[u8],
    p: &EmbedParams,
) -> Result<Tensor<f32>> {
    Ok(embed_blocks_traced(w, originals, bits, p, false)?.0)
}

/// [`embed_blocks`], also recording the per-iteration loss when `trace` is set.
pub fn embed_blocks_traced(
    w: &DetectorWeights,
    originals: &Tensor<f32>,
    bits: &[u8],
    p: &EmbedParams,
    trace: bool,
) -> Result<(Tensor<f32>, EmbedTrace)> {
    p.validate()?;
    let n = match originals.shape() {
        &[n, BLOCK, BLOCK, INPUT_CHANNELS] => n,
        s => return Err(Error::Usage(format!("embedding expects N x 8 x 8 x 3 blocks, got {s:?}"))),
    };
    if bits.len() != n {
        return Err(Error::Usage(format!("{} bits for {n} blocks", bits.len())));
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(Error::Usage("message bits must be 0 or 1".into()));
    }
    let mut out = originals.clone();
    let mut tr = EmbedTrace::default();
    if trace {
        tr.xent = vec![vec![0.0; n]; p.max_iters + 1];
        tr.steps = vec![0; n];
    }
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let orig = &originals.data()[start * BLOCK_LEN..end * BLOCK_LEN];
        let chunk_bits = &bits[start..end];
        let (done, chunk_trace) = embed_chunk(w, orig, chunk_bits, p, trace)?;
        out.data_mut()[start * BLOCK_LEN..end * BLOCK_LEN].copy_from_slice(&done);
        if let Some((xent, steps)) = chunk_trace {
            for (row, vals) in tr.xent.iter_mut().zip(xent) {
                row[start..end].copy_from_slice(&vals);
            }
            tr.steps[start..end].copy_from_slice(&steps);
        }
    }
    Ok((out, tr))
}

type ChunkTrace = Option<(Vec<Vec<f32>>, Vec<usize>)>;

fn embed_chunk(
    w: &DetectorWeights,
    orig: &[f32],
    bits: &[u8],
    p: &EmbedParams,
    trace: bool,
) -> Result<(Vec<f32>, ChunkTrace)> {
    let n = bits.len();
    let mut states: Vec<BlockState> = orig
        .chunks_exact(BLOCK_LEN)
        .map(|b| BlockState {
            current: b.to_vec(),
            m: vec![0.0; BLOCK_LEN],
            v: vec![0.0; BLOCK_LEN],
            done: false,
            steps: 0,
        })
        .collect();
    let mut xent_rows: Vec<Vec<f32>> = if trace {
        vec![vec![0.0; n]; p.max_iters + 1]
    } else {
        vec![]
    };
    let lambda = p.lambda as f32;
    let (b1, b2, eps) = (ADAM_BETA1 as f32, ADAM_BETA2 as f32, ADAM_EPS as f32);

    for t in 0..=p.max_iters {
        let active: Vec<usize> = (0..n).filter(|&i| !states[i].done).collect();
        if active.is_empty() {
            if trace {
                let prev = xent_rows[t - 1].clone();
                xent_rows[t] = prev;
            }
            continue;
        }
        let mut cur = Vec::with_capacity(active.len() * BLOCK_LEN);
        let mut base = Vec::with_capacity(active.len() * BLOCK_LEN);
        let mut act_bits = Vec::with_capacity(active.len());
        for &i in &active {
            cur.extend_from_slice(&states[i].current);
            base.extend_from_slice(&orig[i * BLOCK_LEN..(i + 1) * BLOCK_LEN]);
            act_bits.push(bits[i]);
        }
        let shape = [active.len(), BLOCK, BLOCK, INPUT_CHANNELS];
        let cur = Tensor::from_vec(&shape, cur)?;
        let base = Tensor::from_vec(&shape, base)?;
        // The last pass only measures the final loss; skip it when nobody asked.
        if t == p.max_iters && !trace {
            break;
        }
        let ig = w.input_gradient(&cur, &act_bits, lambda, &base)?;
        if trace {
            if t > 0 {
                let prev = xent_rows[t - 1].clone();
                xent_rows[t] = prev;
            }
            for (k, &i) in active.iter().enumerate() {
                xent_rows[t][i] = ig.xent[k];
            }
        }
        if t == p.max_iters {
            break;
        }
        let rate = p.rate(t) as f32;
        for (k, &i) in active.iter().enumerate() {
            let st = &mut states[i];
            if ig.probs[k][bits[i] as usize] as f64 > p.early_exit {
                st.done = true;
                continue;
            }
            let mut g = ig.grad.data()[k * BLOCK_LEN..(k + 1) * BLOCK_LEN].to_vec();
            normalize_gradient(&mut g);
            st.steps += 1;
            match p.rule {
                StepRule::Normalized => {
                    for (x, gv) in st.current.iter_mut().zip(&g) {
                        *x = (*x - rate * gv).clamp(0.0, 1.0);
                    }
                }
                StepRule::Adam => {
                    let step = st.steps as i32;
                    let c1 = 1.0 - b1.powi(step);
                    let c2 = 1.0 - b2.powi(step);
                    for j in 0..BLOCK_LEN {
                        st.m[j] = b1 * st.m[j] + (1.0 - b1) * g[j];
                        st.v[j] = b2 * st.v[j] + (1.0 - b2) * g[j] * g[j];
                        let upd = (st.m[j] / c1) / ((st.v[j] / c2).sqrt() + eps);
                        st.current[j] = (st.current[j] - rate * upd).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    let steps = states.iter().map(|s| s.steps).collect();
    let data = states.into_iter().flat_map(|s| s.current).collect();
    Ok((data, trace.then_some((xent_rows, steps))))
}

/// Embed one `8 x 8 x 3` block.
pub fn embed_block(
    w: &DetectorWeights,
    block0: &Tensor<f32>,
    bit: u8,
    p: &EmbedParams,
) -> Result<Tensor<f32>> {
    if block0.shape() != [BLOCK, BLOCK, INPUT_CHANNELS] {
        return Err(Error::Usage(format!("block must be 8 x 8 x 3, got {:?}", block0.shape())));
    }
    let batch = block0.clone().reshape(&[1, BLOCK, BLOCK, INPUT_CHANNELS])?;
    embed_blocks(w, &batch, &[bit], p)?.reshape(&[BLOCK, BLOCK, INPUT_CHANNELS])
}

/// Embed `wm` into `image`, one bit per block, and reassemble.
pub fn embed_image(
    w: &DetectorWeights,
    image: &Image,
    wm: &WatermarkMap,
    p: &EmbedParams,
) -> Result<Image> {
    let (rows, cols) = image.block_grid()?;
    if (wm.rows(), wm.cols()) != (rows, cols) {
        return Err(Error::Usage(format!(
            "a {}x{} image needs a {rows}x{cols} watermark, got {}x{}",
            image.width(),
            image.height(),
            wm.rows(),
            wm.cols()
        )));
    }
    let blocks = image.to_blocks()?;
    let marked = embed_blocks(w, &blocks, wm.bits(), p)?;
    Image::from_blocks(&marked, rows, cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blocks(seed: u64, n: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            &[n, 8, 8, 3],
            (0..n * BLOCK_LEN).map(|_| rng.random::<f32>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_rate_leaves_blocks_alone() {
        let w = DetectorWeights::new(8, 0);
        let b = blocks(1, 4);
        let p = EmbedParams {
            alpha0: 0.0,
            ..Default::default()
        };
        assert_eq!(embed_blocks(&w, &b, &[0, 1, 1, 0], &p).unwrap(), b);
    }

    #[test]
    fn annealed_rates() {
        let p = EmbedParams::default();
        for t in 0..12 {
            assert!((p.rate(t) - 0.01 * 0.9f64.powi(t as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn output_in_range_and_deterministic() {
        let w = DetectorWeights::new(8, 2);
        let b = blocks(3, 6).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        let p = EmbedParams {
            alpha0: 0.2,
            ..Default::default()
        };
        let bits = [0, 1, 0, 1, 1, 0];
        let out = embed_blocks(&w, &b, &bits, &p).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out, embed_blocks(&w, &b, &bits, &p).unwrap());
    }

    #[test]
    fn loss_drops_with_random_weights() {
        let w = DetectorWeights::new(16, 4);
        let b = blocks(5, 32);
        let bits: Vec<u8> = (0..32).map(|i| (i % 2) as u8).collect();
        let (_, tr) = embed_blocks_traced(&w, &b, &bits, &EmbedParams::default(), true).unwrap();
        let mean = tr.mean_per_iteration();
        assert_eq!(mean.len(), 13);
        assert!(mean[12] < mean[0]);
    }

    #[test]
    fn normalization() {
        let mut g = vec![1.0f32, 3.0, 5.0, 7.0];
        normalize_gradient(&mut g);
        let mean: f32 = g.iter().sum::<f32>() / 4.0;
        let var: f32 = g.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5);
        let mut flat = vec![0.25f32; 5];
        normalize_gradient(&mut flat);
        assert_eq!(flat, vec![0.25; 5]);
    }

    #[test]
    fn chunking_does_not_change_results() {
        let w = DetectorWeights::new(4, 6);
        let b = blocks(7, CHUNK + 3);
        let bits: Vec<u8> = (0..CHUNK + 3).map(|i| (i % 3 == 0) as u8).collect();
        let all = embed_blocks(&w, &b, &bits, &EmbedParams::default()).unwrap();
        let tail = Tensor::from_vec(&[3, 8, 8, 3], b.data()[CHUNK * BLOCK_LEN..].to_vec()).unwrap();
        let tail_out = embed_blocks(&w, &tail, &bits[CHUNK..], &EmbedParams::default()).unwrap();
        assert_eq!(&all.data()[CHUNK * BLOCK_LEN..], tail_out.data());
    }

    #[test]
    fn image_and_map_must_agree() {
        let w = DetectorWeights::new(4, 0);
        let img = Image::filled(16, 16, 3, 0.5);
        let err = embed_image(&w, &img, &WatermarkMap::zeros(3, 2), &EmbedParams::default());
        assert!(matches!(err, Err(Error::Usage(_))));
    }
}
