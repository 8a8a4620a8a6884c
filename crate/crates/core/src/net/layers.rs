//! Layer primitives with explicit backward passes.
//!
//! Activations are [`Matrix`] values with one row per sample. Image
//! activations are flattened HWC.

use crate::tensor::{Matrix, Tensor};

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub(crate) fn leaky_relu_matrix(pre: &Matrix, slope: f64) -> Matrix {
    Matrix {
        rows: pre.rows,
        cols: pre.cols,
        data: pre.data.iter().map(|&x| leaky_relu(x, slope)).collect(),
    }
}

/// Scale an upstream gradient by the activation's derivative at `pre`.
pub(crate) fn leaky_relu_backward(grad: &mut Matrix, pre: &Matrix, slope: f64) {
    for (g, &x) in grad.data.iter_mut().zip(&pre.data) {
        if x < 0.0 {
            *g *= slope;
        }
    }
}

/// `y = x W^T + b` with `W` shaped `[out, in]`.
pub fn dense_forward(x: &Matrix, weight: &Tensor, bias: &Tensor) -> Matrix {
    let (out_dim, in_dim) = (weight.shape[0], weight.shape[1]);
    debug_assert_eq!(x.cols, in_dim);
    let mut y = Matrix::zeros(x.rows, out_dim);
    for b in 0..x.rows {
        let xr = x.row(b);
        let yr = y.row_mut(b);
        for (o, out) in yr.iter_mut().enumerate() {
            let wr = &weight.data[o * in_dim..(o + 1) * in_dim];
            *out = bias.data[o] + dot(xr, wr);
        }
    }
    y
}

/// Returns `(dW, db, dx)`.
pub fn dense_backward(x: &Matrix, weight: &Tensor, dy: &Matrix) -> (Vec<f64>, Vec<f64>, Matrix) {
    let (out_dim, in_dim) = (weight.shape[0], weight.shape[1]);
    let mut dw = vec![0.0; out_dim * in_dim];
    let mut db = vec![0.0; out_dim];
    let mut dx = Matrix::zeros(x.rows, in_dim);
    for b in 0..x.rows {
        let xr = x.row(b);
        let dyr = dy.row(b);
        let dxr = dx.row_mut(b);
        for o in 0..out_dim {
            let g = dyr[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wr = &weight.data[o * in_dim..(o + 1) * in_dim];
            let dwr = &mut dw[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                dwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
    }
    (dw, db, dx)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Batch statistics kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased (divide-by-N) batch variance.
    pub var: Vec<f64>,
}

/// Normalize each feature over the batch, then scale by `gamma` and shift by `beta`.
pub fn batch_norm_train(x: &Matrix, gamma: &[f64], beta: &[f64], eps: f64) -> (Matrix, BatchNormCache) {
    let (n, d) = (x.rows, x.cols);
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for b in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(b)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![0.0; d];
    for b in 0..n {
        for ((s, &v), &m) in var.iter_mut().zip(x.row(b)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= nf);
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

    let mut normalized = Matrix::zeros(n, d);
    let mut y = Matrix::zeros(n, d);
    for b in 0..n {
        for j in 0..d {
            let xh = (x.data[b * d + j] - mean[j]) * inv_std[j];
            normalized.data[b * d + j] = xh;
            y.data[b * d + j] = gamma[j] * xh + beta[j];
        }
    }
    (
        y,
        BatchNormCache {
            normalized,
            inv_std,
            mean,
            var,
        },
    )
}

pub fn batch_norm_infer(
    x: &Matrix,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Matrix {
    let d = x.cols;
    let scale: Vec<f64> = running_var
        .iter()
        .zip(gamma)
        .map(|(&v, &g)| g / (v + eps).sqrt())
        .collect();
    let mut y = x.clone();
    for (i, v) in y.data.iter_mut().enumerate() {
        let j = i % d;
        *v = (*v - running_mean[j]) * scale[j] + beta[j];
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`, differentiating through the batch statistics.
pub fn batch_norm_backward(dy: &Matrix, cache: &BatchNormCache, gamma: &[f64]) -> (Matrix, Vec<f64>, Vec<f64>) {
    let (n, d) = (dy.rows, dy.cols);
    let nf = n as f64;
    let xh = &cache.normalized;
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for b in 0..n {
        for j in 0..d {
            let g = dy.data[b * d + j];
            dgamma[j] += g * xh.data[b * d + j];
            dbeta[j] += g;
        }
    }
    // with dxhat = dy * gamma:
    // dx = inv_std / N * (N dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
    let mut dx = Matrix::zeros(n, d);
    for j in 0..d {
        let sum_dxh = gamma[j] * dbeta[j];
        let sum_dxh_xh = gamma[j] * dgamma[j];
        for b in 0..n {
            let dxh = dy.data[b * d + j] * gamma[j];
            dx.data[b * d + j] =
                cache.inv_std[j] / nf * (nf * dxh - sum_dxh - xh.data[b * d + j] * sum_dxh_xh);
        }
    }
    (dx, dgamma, dbeta)
}

/// Shapes of one valid-padding convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_height: usize,
    pub in_width: usize,
    pub in_channels: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn in_len(&self) -> usize {
        self.in_height * self.in_width * self.in_channels
    }

    pub fn out_len(&self) -> usize {
        self.out_height * self.out_width * self.filters
    }

    fn kernel_index(&self, f: usize, ky: usize, kx: usize, c: usize) -> usize {
        ((f * self.kernel + ky) * self.kernel + kx) * self.in_channels + c
    }
}

/// Valid-padding 2-D convolution; kernel shaped `[filters, k, k, in_channels]`.
pub fn conv2d_forward(x: &Matrix, g: &ConvGeometry, kernel: &Tensor, bias: &Tensor) -> Matrix {
    let mut y = Matrix::zeros(x.rows, g.out_len());
    for b in 0..x.rows {
        let xr = x.row(b);
        let yr = y.row_mut(b);
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                for f in 0..g.filters {
                    let mut acc = bias.data[f];
                    for ky in 0..g.kernel {
                        let iy = oy * g.stride + ky;
                        for kx in 0..g.kernel {
                            let ix = ox * g.stride + kx;
                            let xbase = (iy * g.in_width + ix) * g.in_channels;
                            let kbase = g.kernel_index(f, ky, kx, 0);
                            acc += dot(
                                &xr[xbase..xbase + g.in_channels],
                                &kernel.data[kbase..kbase + g.in_channels],
                            );
                        }
                    }
                    yr[(oy * g.out_width + ox) * g.filters + f] = acc;
                }
            }
        }
    }
    y
}

/// Returns `(dkernel, dbias, dx)`; `dx` only when requested.
pub fn conv2d_backward(
    x: &Matrix,
    g: &ConvGeometry,
    kernel: &Tensor,
    dy: &Matrix,
    want_dx: bool,
) -> (Vec<f64>, Vec<f64>, Option<Matrix>) {
    let mut dk = vec![0.0; kernel.len()];
    let mut db = vec![0.0; g.filters];
    let mut dx = want_dx.then(|| Matrix::zeros(x.rows, g.in_len()));
    for b in 0..x.rows {
        let xr = x.row(b);
        let dyr = dy.row(b);
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                for f in 0..g.filters {
                    let grad = dyr[(oy * g.out_width + ox) * g.filters + f];
                    if grad == 0.0 {
                        continue;
                    }
                    db[f] += grad;
                    for ky in 0..g.kernel {
                        let iy = oy * g.stride + ky;
                        for kx in 0..g.kernel {
                            let ix = ox * g.stride + kx;
                            let xbase = (iy * g.in_width + ix) * g.in_channels;
                            let kbase = g.kernel_index(f, ky, kx, 0);
                            for c in 0..g.in_channels {
                                dk[kbase + c] += grad * xr[xbase + c];
                            }
                            if let Some(dx) = dx.as_mut() {
                                let dxr = dx.row_mut(b);
                                for c in 0..g.in_channels {
                                    dxr[xbase + c] += grad * kernel.data[kbase + c];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dk, db, dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect())
            .unwrap()
    }

    #[test]
    fn leaky_relu_values() {
        assert!((leaky_relu(-2.0, 0.01) + 0.02).abs() < 1e-15);
        assert_eq!(leaky_relu(3.0, 0.01), 3.0);
        assert_eq!(leaky_relu(0.0, 0.01), 0.0);
    }

    #[test]
    fn batch_norm_standardizes_each_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = random_matrix(&mut rng, 16, 5);
        for (i, v) in x.data.iter_mut().enumerate() {
            *v = *v * 10.0 * (1 + i % 5) as f64 + 10.0;
        }
        let (_, cache) = batch_norm_train(&x, &[1.0; 5], &[0.0; 5], 1e-5);
        for j in 0..5 {
            let col: Vec<f64> = (0..16).map(|b| cache.normalized.data[b * 5 + j]).collect();
            let mean = col.iter().sum::<f64>() / 16.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6);
            // eps shrinks the variance by var / (var + eps), negligible at this scale
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn batch_norm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 4, 5);
        let gamma: Vec<f64> = (0..5).map(|_| rng.random_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..5).map(|_| rng.random_range(-0.5..0.5)).collect();
        let probe = random_matrix(&mut rng, 4, 5);
        // scalar loss: sum(probe * y)
        let loss = |x: &Matrix, gamma: &[f64], beta: &[f64]| {
            let (y, _) = batch_norm_train(x, gamma, beta, 1e-5);
            dot(&y.data, &probe.data)
        };
        let (_, cache) = batch_norm_train(&x, &gamma, &beta, 1e-5);
        let (dx, dgamma, dbeta) = batch_norm_backward(&probe, &cache, &gamma);
        for i in 0..x.data.len() {
            let fd = central_difference(
                |v| {
                    let mut xp = x.clone();
                    xp.data[i] = v;
                    loss(&xp, &gamma, &beta)
                },
                x.data[i],
                1e-5,
            );
            assert!(relative_error(dx.data[i], fd, 1e-6) < 1e-6, "dx[{i}] {} vs {fd}", dx.data[i]);
        }
        for j in 0..5 {
            let fd_g = central_difference(
                |v| {
                    let mut g = gamma.clone();
                    g[j] = v;
                    loss(&x, &g, &beta)
                },
                gamma[j],
                1e-5,
            );
            let fd_b = central_difference(
                |v| {
                    let mut b = beta.clone();
                    b[j] = v;
                    loss(&x, &gamma, &b)
                },
                beta[j],
                1e-5,
            );
            assert!(relative_error(dgamma[j], fd_g, 1e-6) < 1e-6);
            assert!(relative_error(dbeta[j], fd_b, 1e-6) < 1e-6);
        }
    }

    #[test]
    fn conv_matches_naive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ConvGeometry {
            in_height: 5,
            in_width: 4,
            in_channels: 2,
            out_height: 2,
            out_width: 1,
            filters: 3,
            kernel: 3,
            stride: 2,
        };
        let x = random_matrix(&mut rng, 2, g.in_len());
        let kernel = Tensor::from_vec("k", &[3, 3, 3, 2], (0..54).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let bias = Tensor::from_vec("b", &[3], vec![0.1, -0.2, 0.3]).unwrap();
        let y = conv2d_forward(&x, &g, &kernel, &bias);
        for b in 0..2 {
            for oy in 0..2 {
                for f in 0..3 {
                    let mut want = bias.data[f];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            for c in 0..2 {
                                let px = x.data[b * 40 + ((oy * 2 + ky) * 4 + kx) * 2 + c];
                                want += px * kernel.data[f * 18 + ky * 6 + kx * 2 + c];
                            }
                        }
                    }
                    assert!((y.data[b * 6 + oy * 3 + f] - want).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = ConvGeometry {
            in_height: 4,
            in_width: 4,
            in_channels: 2,
            out_height: 2,
            out_width: 2,
            filters: 2,
            kernel: 2,
            stride: 2,
        };
        let x = random_matrix(&mut rng, 3, g.in_len());
        let kernel = Tensor::from_vec("k", &[2, 2, 2, 2], (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let bias = Tensor::from_vec("b", &[2], vec![0.0, 0.5]).unwrap();
        let probe = random_matrix(&mut rng, 3, g.out_len());
        let loss = |x: &Matrix, k: &Tensor| dot(&conv2d_forward(x, &g, k, &bias).data, &probe.data);
        let (dk, db, dx) = conv2d_backward(&x, &g, &kernel, &probe, true);
        let dx = dx.unwrap();
        for i in 0..kernel.len() {
            let fd = central_difference(
                |v| {
                    let mut k = kernel.clone();
                    k.data[i] = v;
                    loss(&x, &k)
                },
                kernel.data[i],
                1e-5,
            );
            assert!(relative_error(dk[i], fd, 1e-6) < 1e-6);
        }
        for i in 0..x.data.len() {
            let fd = central_difference(
                |v| {
                    let mut xp = x.clone();
                    xp.data[i] = v;
                    loss(&xp, &kernel)
                },
                x.data[i],
                1e-5,
            );
            assert!(relative_error(dx.data[i], fd, 1e-6) < 1e-6);
        }
        let probe_sum: Vec<f64> = (0..2)
            .map(|f| (0..3 * 4).map(|p| probe.data[p * 2 + f]).sum())
            .collect();
        assert!((db[0] - probe_sum[0]).abs() < 1e-12 && (db[1] - probe_sum[1]).abs() < 1e-12);
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 3, 4);
        let w = Tensor::from_vec("w", &[2, 4], (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::from_vec("b", &[2], vec![0.3, -0.1]).unwrap();
        let probe = random_matrix(&mut rng, 3, 2);
        let (dw, db, dx) = dense_backward(&x, &w, &probe);
        for i in 0..8 {
            let fd = central_difference(
                |v| {
                    let mut wp = w.clone();
                    wp.data[i] = v;
                    dot(&dense_forward(&x, &wp, &b).data, &probe.data)
                },
                w.data[i],
                1e-5,
            );
            assert!(relative_error(dw[i], fd, 1e-6) < 1e-6);
        }
        for i in 0..12 {
            let fd = central_difference(
                |v| {
                    let mut xp = x.clone();
                    xp.data[i] = v;
                    dot(&dense_forward(&xp, &w, &b).data, &probe.data)
                },
                x.data[i],
                1e-5,
            );
            assert!(relative_error(dx.data[i], fd, 1e-6) < 1e-6);
        }
        assert!((db[1] - (probe.data[1] + probe.data[3] + probe.data[5])).abs() < 1e-14);
    }
}
