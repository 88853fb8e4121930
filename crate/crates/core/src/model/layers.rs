//! Convolution, pooling, dense and loss primitives with hand-written
//! backward passes. Activations use a channel-major `C × N × H × W` layout so
//! a whole batch convolves as one matrix product over an im2col buffer.

use super::scalar::{gemm, Mat, Scalar};

/// Activation tensor in `C × N × H × W` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<F> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Act<F> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![F::zero(); channels * batch * height * width],
        }
    }

    fn plane(&self) -> usize {
        self.batch * self.height * self.width
    }
}

/// Geometry of one `k × k` convolution with `same`-style padding `k / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.pad() - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.out_channels
    }
}

/// Saved forward state of a conv + ReLU stage.
pub struct ConvTape<F> {
    col: Vec<F>,
    out: Act<F>,
    in_h: usize,
    in_w: usize,
}

fn im2col<F: Scalar>(x: &Act<F>, g: &ConvGeom, oh: usize, ow: usize) -> Vec<F> {
    let (k, s, p) = (g.kernel, g.stride, g.pad() as isize);
    let n_out = x.batch * oh * ow;
    let mut col = vec![F::zero(); g.patch_len() * n_out];
    for ci in 0..x.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * n_out..(row + 1) * n_out];
                for n in 0..x.batch {
                    let src = &x.data[(ci * x.batch + n) * x.height * x.width..];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= x.height as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * x.width..];
                        let dst_row = &mut dst[(n * oh + oy) * ow..(n * oh + oy + 1) * ow];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < x.width as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<F: Scalar>(
    col: &[F],
    g: &ConvGeom,
    batch: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Act<F> {
    let (k, s, p) = (g.kernel, g.stride, g.pad() as isize);
    let n_out = batch * oh * ow;
    let mut dx = Act::zeros(g.in_channels, batch, h, w);
    for ci in 0..g.in_channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * n_out..(row + 1) * n_out];
                for n in 0..batch {
                    let dst = &mut dx.data[(ci * batch + n) * h * w..(ci * batch + n + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[(n * oh + oy) * ow..(n * oh + oy + 1) * ow];
                        for (ox, &v) in src_row.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[iy as usize * w + ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Convolution followed by ReLU. `params` holds the `out × (in·k·k)` weight
/// matrix followed by the bias.
pub fn conv_relu_forward<F: Scalar>(
    x: &Act<F>,
    g: &ConvGeom,
    params: &[F],
    keep_tape: bool,
) -> (Act<F>, Option<ConvTape<F>>) {
    debug_assert_eq!(x.channels, g.in_channels);
    debug_assert_eq!(params.len(), g.param_len());
    let (oh, ow) = (g.out_size(x.height), g.out_size(x.width));
    let col = im2col(x, g, oh, ow);
    let n_out = x.batch * oh * ow;
    let (weight, bias) = params.split_at(g.weight_len());
    let mut out = Act::zeros(g.out_channels, x.batch, oh, ow);
    gemm(
        Mat::new(weight, g.out_channels, g.patch_len()),
        Mat::new(&col, g.patch_len(), n_out),
        F::zero(),
        &mut out.data,
    );
    for (row, &b) in out.data.chunks_exact_mut(n_out).zip(bias) {
        for v in row {
            *v = (*v + b).max(F::zero());
        }
    }
    let tape = keep_tape.then(|| ConvTape {
        col,
        out: out.clone(),
        in_h: x.height,
        in_w: x.width,
    });
    (out, tape)
}

/// Accumulates parameter gradients into `grad` and returns the input gradient
/// when `need_input_grad` is set.
pub fn conv_relu_backward<F: Scalar>(
    tape: &ConvTape<F>,
    g: &ConvGeom,
    params: &[F],
    dout: &Act<F>,
    grad: &mut [F],
    need_input_grad: bool,
) -> Option<Act<F>> {
    let n_out = tape.out.plane();
    let mut dz = dout.data.clone();
    for (d, &o) in dz.iter_mut().zip(&tape.out.data) {
        if o <= F::zero() {
            *d = F::zero();
        }
    }
    let (gw, gb) = grad.split_at_mut(g.weight_len());
    gemm(
        Mat::new(&dz, g.out_channels, n_out),
        Mat::new(&tape.col, g.patch_len(), n_out).t(),
        F::one(),
        gw,
    );
    for (row, b) in dz.chunks_exact(n_out).zip(gb.iter_mut()) {
        *b += row.iter().fold(F::zero(), |acc, &v| acc + v);
    }
    if !need_input_grad {
        return None;
    }
    let weight = &params[..g.weight_len()];
    let mut dcol = vec![F::zero(); g.patch_len() * n_out];
    gemm(
        Mat::new(weight, g.out_channels, g.patch_len()).t(),
        Mat::new(&dz, g.out_channels, n_out),
        F::zero(),
        &mut dcol,
    );
    Some(col2im(
        &dcol,
        g,
        tape.out.batch,
        tape.in_h,
        tape.in_w,
        tape.out.height,
        tape.out.width,
    ))
}

/// Global average pool to an `N × C` row-major matrix.
pub fn global_avg_pool<F: Scalar>(x: &Act<F>) -> Vec<F> {
    let hw = x.height * x.width;
    let scale = F::one() / F::of(hw as f64);
    let mut out = vec![F::zero(); x.batch * x.channels];
    for c in 0..x.channels {
        for n in 0..x.batch {
            let s = x.data[(c * x.batch + n) * hw..(c * x.batch + n + 1) * hw]
                .iter()
                .fold(F::zero(), |acc, &v| acc + v);
            out[n * x.channels + c] = s * scale;
        }
    }
    out
}

pub fn global_avg_pool_backward<F: Scalar>(
    d: &[F],
    channels: usize,
    batch: usize,
    h: usize,
    w: usize,
) -> Act<F> {
    let hw = h * w;
    let scale = F::one() / F::of(hw as f64);
    let mut dx = Act::zeros(channels, batch, h, w);
    for c in 0..channels {
        for n in 0..batch {
            let v = d[n * channels + c] * scale;
            dx.data[(c * batch + n) * hw..(c * batch + n + 1) * hw].fill(v);
        }
    }
    dx
}

/// `y = x·Wᵀ + b` for `x: rows × in`, `W: out × in` (followed by `b`) in `params`.
pub fn linear_forward<F: Scalar>(
    x: &[F],
    rows: usize,
    in_dim: usize,
    out_dim: usize,
    params: &[F],
) -> Vec<F> {
    let (weight, bias) = params.split_at(out_dim * in_dim);
    let mut y = vec![F::zero(); rows * out_dim];
    for row in y.chunks_exact_mut(out_dim) {
        row.copy_from_slice(bias);
    }
    gemm(
        Mat::new(x, rows, in_dim),
        Mat::new(weight, out_dim, in_dim).t(),
        F::one(),
        &mut y,
    );
    y
}

/// Accumulates `dW`, `db` into `grad` and returns `dx`.
pub fn linear_backward<F: Scalar>(
    x: &[F],
    dy: &[F],
    rows: usize,
    in_dim: usize,
    out_dim: usize,
    params: &[F],
    grad: &mut [F],
) -> Vec<F> {
    let (gw, gb) = grad.split_at_mut(out_dim * in_dim);
    gemm(
        Mat::new(dy, rows, out_dim).t(),
        Mat::new(x, rows, in_dim),
        F::one(),
        gw,
    );
    for row in dy.chunks_exact(out_dim) {
        for (b, &v) in gb.iter_mut().zip(row) {
            *b += v;
        }
    }
    let mut dx = vec![F::zero(); rows * in_dim];
    gemm(
        Mat::new(dy, rows, out_dim),
        Mat::new(&params[..out_dim * in_dim], out_dim, in_dim),
        F::zero(),
        &mut dx,
    );
    dx
}

/// Mean softmax cross-entropy over rows; returns `(loss, dlogits)`.
pub fn softmax_cross_entropy<F: Scalar>(
    logits: &[F],
    labels: &[usize],
    classes: usize,
) -> (F, Vec<F>) {
    let rows = labels.len();
    let inv_rows = F::one() / F::of(rows as f64);
    let mut loss = F::zero();
    let mut d = vec![F::zero(); logits.len()];
    for ((row, drow), &y) in logits
        .chunks_exact(classes)
        .zip(d.chunks_exact_mut(classes))
        .zip(labels)
    {
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let mut z = F::zero();
        for (dv, &v) in drow.iter_mut().zip(row) {
            *dv = (v - max).exp();
            z += *dv;
        }
        loss += z.ln() - (row[y] - max);
        for dv in drow.iter_mut() {
            *dv = *dv / z * inv_rows;
        }
        drow[y] -= inv_rows;
    }
    (loss * inv_rows, d)
}

/// Index of the largest logit; first index wins ties.
pub fn argmax<F: Scalar>(row: &[F]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, F::neg_infinity()), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_sizes() {
        let g = ConvGeom {
            in_channels: 3,
            out_channels: 8,
            kernel: 3,
            stride: 2,
        };
        assert_eq!(g.out_size(32), 16);
        assert_eq!(g.out_size(3), 2);
        assert_eq!(g.out_size(1), 1);
    }

    #[test]
    fn identity_kernel_passes_positive_input() {
        let g = ConvGeom {
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            stride: 1,
        };
        let mut params = vec![0.0f64; g.param_len()];
        params[4] = 1.0;
        let x = Act {
            channels: 1,
            batch: 2,
            height: 3,
            width: 3,
            data: (0..18).map(|v| v as f64).collect(),
        };
        let (y, _) = conv_relu_forward(&x, &g, &params, false);
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let (loss, d) = softmax_cross_entropy(&[0.0f64; 4], &[2], 4);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((d[2] + 0.75).abs() < 1e-12);
        assert!((d[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0]), 1);
    }
}
