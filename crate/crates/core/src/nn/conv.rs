//! Same-padded 2-D convolution over NHWC batches, lowered to GEMM.

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Dims {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
}

fn dims<S: Scalar>(input: &Tensor<S>, kernel: &Tensor<S>, bias: &Tensor<S>) -> Result<Dims> {
    let &[n, h, w, cin] = input.shape() else {
        return Err(Error::Shape(format!(
            "conv2d input must be N x H x W x C, got {:?}",
            input.shape()
        )));
    };
    let &[k, k2, kcin, cout] = kernel.shape() else {
        return Err(Error::Shape(format!(
            "conv2d kernel must be K x K x Cin x Cout, got {:?}",
            kernel.shape()
        )));
    };
    if k != k2 || !(k == 1 || k == 3) {
        return Err(Error::Shape(format!("unsupported kernel size {k}x{k2}")));
    }
    if kcin != cin {
        return Err(Error::Shape(format!(
            "kernel expects {kcin} input channels, input has {cin}"
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::Shape(format!(
            "bias shape {:?} does not match {cout} output channels",
            bias.shape()
        )));
    }
    Ok(Dims {
        n,
        h,
        w,
        cin,
        cout,
        k,
    })
}

/// Unfold every K x K neighbourhood into a row ordered (ky, kx, cin).
fn im2col<S: Scalar>(input: &[S], d: Dims) -> Vec<S> {
    let row = d.k * d.k * d.cin;
    let pad = (d.k / 2) as isize;
    let mut cols = vec![S::zero(); d.n * d.h * d.w * row];
    for n in 0..d.n {
        let img = &input[n * d.h * d.w * d.cin..(n + 1) * d.h * d.w * d.cin];
        for y in 0..d.h {
            for x in 0..d.w {
                let dst = &mut cols[((n * d.h + y) * d.w + x) * row..][..row];
                for ky in 0..d.k {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= d.h as isize {
                        continue;
                    }
                    for kx in 0..d.k {
                        let sx = x as isize + kx as isize - pad;
                        if sx < 0 || sx >= d.w as isize {
                            continue;
                        }
                        let src = (sy as usize * d.w + sx as usize) * d.cin;
                        let off = (ky * d.k + kx) * d.cin;
                        dst[off..off + d.cin].copy_from_slice(&img[src..src + d.cin]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<S: Scalar>(cols: &[S], d: Dims) -> Vec<S> {
    let row = d.k * d.k * d.cin;
    let pad = (d.k / 2) as isize;
    let mut out = vec![S::zero(); d.n * d.h * d.w * d.cin];
    for n in 0..d.n {
        let img = &mut out[n * d.h * d.w * d.cin..(n + 1) * d.h * d.w * d.cin];
        for y in 0..d.h {
            for x in 0..d.w {
                let src = &cols[((n * d.h + y) * d.w + x) * row..][..row];
                for ky in 0..d.k {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= d.h as isize {
                        continue;
                    }
                    for kx in 0..d.k {
                        let sx = x as isize + kx as isize - pad;
                        if sx < 0 || sx >= d.w as isize {
                            continue;
                        }
                        let dst = (sy as usize * d.w + sx as usize) * d.cin;
                        let off = (ky * d.k + kx) * d.cin;
                        for c in 0..d.cin {
                            img[dst + c] = img[dst + c] + src[off + c];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Zero-padded "same" convolution: `N x H x W x Cin -> N x H x W x Cout`.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    let d = dims(input, kernel, bias)?;
    let rows = d.n * d.h * d.w;
    let depth = d.k * d.k * d.cin;
    let mut out = Vec::with_capacity(rows * d.cout);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    let unfolded;
    let cols: &[S] = if d.k == 1 {
        input.data()
    } else {
        unfolded = im2col(input.data(), d);
        &unfolded
    };
    S::gemm(
        rows,
        depth,
        d.cout,
        S::one(),
        cols,
        depth as isize,
        1,
        kernel.data(),
        d.cout as isize,
        1,
        S::one(),
        &mut out,
        d.cout as isize,
        1,
    );
    Tensor::from_vec(&[d.n, d.h, d.w, d.cout], out)
}

pub struct ConvGrads<S> {
    pub input: Tensor<S>,
    pub kernel: Tensor<S>,
    pub bias: Tensor<S>,
}

/// Gradients of a [`conv2d`] call given the upstream gradient of its output.
pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<ConvGrads<S>> {
    let d = dims(input, kernel, bias)?;
    if grad_out.shape() != [d.n, d.h, d.w, d.cout] {
        return Err(Error::Shape(format!(
            "conv2d upstream gradient {:?} does not match output",
            grad_out.shape()
        )));
    }
    let rows = d.n * d.h * d.w;
    let depth = d.k * d.k * d.cin;
    let g = grad_out.data();

    let mut grad_bias = vec![S::zero(); d.cout];
    for r in g.chunks_exact(d.cout) {
        for (acc, &v) in grad_bias.iter_mut().zip(r) {
            *acc = *acc + v;
        }
    }

    let unfolded;
    let cols: &[S] = if d.k == 1 {
        input.data()
    } else {
        unfolded = im2col(input.data(), d);
        &unfolded
    };
    let mut grad_kernel = vec![S::zero(); depth * d.cout];
    S::gemm(
        depth,
        rows,
        d.cout,
        S::one(),
        cols,
        1,
        depth as isize,
        g,
        d.cout as isize,
        1,
        S::zero(),
        &mut grad_kernel,
        d.cout as isize,
        1,
    );

    let mut grad_cols = vec![S::zero(); rows * depth];
    S::gemm(
        rows,
        d.cout,
        depth,
        S::one(),
        g,
        d.cout as isize,
        1,
        kernel.data(),
        1,
        d.cout as isize,
        S::zero(),
        &mut grad_cols,
        depth as isize,
        1,
    );
    let grad_input = if d.k == 1 {
        grad_cols
    } else {
        col2im(&grad_cols, d)
    };

    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), grad_input)?,
        kernel: Tensor::from_vec(kernel.shape(), grad_kernel)?,
        bias: Tensor::from_vec(&[d.cout], grad_bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct sliding-window evaluation, independent of the GEMM lowering.
    pub(crate) fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let [n, h, w, cin] = x.shape().try_into().unwrap();
        let [ks, _, _, cout] = k.shape().try_into().unwrap();
        let pad = (ks / 2) as isize;
        let mut out = Tensor::zeros(&[n, h, w, cout]);
        for bn in 0..n {
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
                                    let xv = x.data()
                                        [((bn * h + sy as usize) * w + sx as usize) * cin + ci];
                                    let kv = k.data()[((ky * ks + kx) * cin + ci) * cout + co];
                                    acc += xv * kv;
                                }
                            }
                        }
                        out.data_mut()[((bn * h + y) * w + xx) * cout + co] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_one_by_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, &[2, 4, 4, 3]);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        for c in 0..3 {
            k.data_mut()[c * 3 + c] = 1.0;
        }
        let y = conv2d(&x, &k, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, &[1, 5, 5, 2]);
        let y = conv2d(&x, &Tensor::zeros(&[3, 3, 2, 4]), &Tensor::zeros(&[4])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), &[1, 5, 5, 4]);
    }

    #[test]
    fn matches_oracle_on_4x4() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, &[1, 4, 4, 1]);
        let k = random(&mut rng, &[3, 3, 1, 1]);
        let b = random(&mut rng, &[1]);
        let y = conv2d(&x, &k, &b).unwrap();
        let want = conv_oracle(&x, &k, &b);
        for (a, e) in y.data().iter().zip(want.data()) {
            assert!((a - e).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> is bilinear: its derivatives are exactly the backward outputs.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, &[2, 3, 5, 2]);
        let k = random(&mut rng, &[3, 3, 2, 3]);
        let b = random(&mut rng, &[3]);
        let g = random(&mut rng, &[2, 3, 5, 3]);
        let grads = conv2d_backward(&x, &k, &b, &g).unwrap();
        let dot = |x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            conv2d(x, k, b)
                .unwrap()
                .data()
                .iter()
                .zip(g.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let h = 1e-6;
        for i in [0, 7, 29] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (dot(&xp, &k, &b) - dot(&xm, &k, &b)) / (2.0 * h);
            assert!((fd - grads.input.data()[i]).abs() < 1e-6);
        }
        for i in [0, 11, 53] {
            let mut kp = k.clone();
            kp.data_mut()[i] += h;
            let mut km = k.clone();
            km.data_mut()[i] -= h;
            let fd = (dot(&x, &kp, &b) - dot(&x, &km, &b)) / (2.0 * h);
            assert!((fd - grads.kernel.data()[i]).abs() < 1e-6);
        }
        let bias_sum: f64 = g.data().iter().skip(1).step_by(3).sum();
        assert!((grads.bias.data()[1] - bias_sum).abs() < 1e-9);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 4, 4, 2]);
        let err = conv2d(&x, &Tensor::zeros(&[3, 3, 3, 1]), &Tensor::zeros(&[1]));
        assert!(matches!(err, Err(Error::Shape(_))));
        let err = conv2d(&x, &Tensor::zeros(&[5, 5, 2, 1]), &Tensor::zeros(&[1]));
        assert!(matches!(err, Err(Error::Shape(_))));
    }
}
