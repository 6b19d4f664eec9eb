//! Raw slice kernels behind the differentiable ops: small GEMM variants and
//! im2col-based 3-D convolution. All loops run in a fixed order, so results
//! are bit-reproducible.

use crate::error::{Result, TensorError};

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[k×n] += aᵀ · b` where `a` is `m×k` and `b` is `m×n`.
pub fn matmul_at_b_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[m×k] += a · bᵀ` where `a` is `m×n` and `b` is `k×n`.
pub fn matmul_a_bt_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            c[i * k + p] += dot(arow, &b[p * n..(p + 1) * n]);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let o = c * 4;
        acc[0] += a[o] * b[o];
        acc[1] += a[o + 1] * b[o + 1];
        acc[2] += a[o + 2] * b[o + 2];
        acc[3] += a[o + 3] * b[o + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Resolved shapes of a batched 3-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output: [usize; 3],
}

impl Conv3dGeometry {
    pub fn new(
        input_shape: &[usize],
        weight_shape: &[usize],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if input_shape.len() != 5 {
            return Err(TensorError::Rank {
                op: "conv3d input",
                expected: 5,
                shape: input_shape.to_vec(),
            });
        }
        if weight_shape.len() != 5 {
            return Err(TensorError::Rank {
                op: "conv3d weight",
                expected: 5,
                shape: weight_shape.to_vec(),
            });
        }
        if input_shape[1] != weight_shape[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv3d (input channels vs weight channels)",
                lhs: input_shape.to_vec(),
                rhs: weight_shape.to_vec(),
            });
        }
        if stride.contains(&0) {
            return Err(TensorError::Invalid {
                op: "conv3d",
                msg: format!("stride {stride:?} must be >= 1"),
            });
        }
        let mut output = [0; 3];
        for ax in 0..3 {
            let padded = input_shape[2 + ax] + 2 * padding[ax];
            let k = weight_shape[2 + ax];
            if k > padded {
                return Err(TensorError::Invalid {
                    op: "conv3d",
                    msg: format!(
                        "kernel {:?} exceeds padded input {:?} (padding {padding:?})",
                        &weight_shape[2..],
                        &input_shape[2..]
                    ),
                });
            }
            output[ax] = (padded - k) / stride[ax] + 1;
        }
        Ok(Self {
            batch: input_shape[0],
            c_in: input_shape[1],
            c_out: weight_shape[0],
            input: [input_shape[2], input_shape[3], input_shape[4]],
            kernel: [weight_shape[2], weight_shape[3], weight_shape[4]],
            stride,
            padding,
            output,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.c_out,
            self.output[0],
            self.output[1],
            self.output[2],
        ]
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.kernel.iter().product::<usize>()
    }

    fn col_cols(&self) -> usize {
        self.output.iter().product()
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    /// Output-index range along one axis whose source coordinate
    /// `o * stride + k - pad` lands inside the input.
    fn valid_range(&self, ax: usize, k: usize) -> (usize, usize) {
        let (s, p, n, out) = (
            self.stride[ax],
            self.padding[ax],
            self.input[ax],
            self.output[ax],
        );
        // o*s + k >= p
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        // o*s + k - p <= n - 1
        let hi = if n + p > k {
            ((n + p - k - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Visits every (col-row, col-col, input-offset) triple of the im2col
    /// matrix whose input coordinate is not padding.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [kd, kv, kh] = self.kernel;
        let [_, ov, oh] = self.output;
        let [_, iv, ih] = self.input;
        let vol = self.in_volume();
        let ncol = self.col_cols();
        for ci in 0..self.c_in {
            for a in 0..kd {
                let (d_lo, d_hi) = self.valid_range(0, a);
                for b in 0..kv {
                    let (v_lo, v_hi) = self.valid_range(1, b);
                    for c in 0..kh {
                        let (h_lo, h_hi) = self.valid_range(2, c);
                        let row = ((ci * kd + a) * kv + b) * kh + c;
                        for od in d_lo..d_hi {
                            let id = od * self.stride[0] + a - self.padding[0];
                            for ovi in v_lo..v_hi {
                                let ivi = ovi * self.stride[1] + b - self.padding[1];
                                let col_base = (od * ov + ovi) * oh;
                                let in_base = ci * vol + (id * iv + ivi) * ih;
                                for ohi in h_lo..h_hi {
                                    let ihi = ohi * self.stride[2] + c - self.padding[2];
                                    f(row * ncol, col_base + ohi, in_base + ihi);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, sample: &[f64], cols: &mut [f64]) {
        cols.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_tap(|row_off, col, src| cols[row_off + col] = sample[src]);
    }

    fn col2im_acc(&self, cols: &[f64], sample_grad: &mut [f64]) {
        self.for_each_tap(|row_off, col, dst| sample_grad[dst] += cols[row_off + col]);
    }
}

/// Forward 3-D cross-correlation with zero padding.
pub fn conv3d_forward(
    g: &Conv3dGeometry,
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let (k, n) = (g.col_rows(), g.col_cols());
    let in_sample = g.c_in * g.in_volume();
    let out_sample = g.c_out * n;
    let mut out = vec![0.0; g.batch * out_sample];
    let mut cols = vec![0.0; k * n];
    for b in 0..g.batch {
        g.im2col(&input[b * in_sample..(b + 1) * in_sample], &mut cols);
        let o = &mut out[b * out_sample..(b + 1) * out_sample];
        if let Some(bias) = bias {
            for (co, chunk) in o.chunks_mut(n).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bias[co]);
            }
        }
        matmul_acc(g.c_out, k, n, weight, &cols, o);
    }
    out
}

/// Gradients of a 3-D convolution. Each output slot is filled only when the
/// caller asks for it.
pub struct Conv3dGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub fn conv3d_backward(
    g: &Conv3dGeometry,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    want: [bool; 3],
) -> Conv3dGrads {
    let (k, n) = (g.col_rows(), g.col_cols());
    let in_sample = g.c_in * g.in_volume();
    let out_sample = g.c_out * n;
    let mut gin = want[0].then(|| vec![0.0; input.len()]);
    let mut gw = want[1].then(|| vec![0.0; weight.len()]);
    let mut gb = want[2].then(|| vec![0.0; g.c_out]);
    let mut cols = vec![0.0; k * n];
    for b in 0..g.batch {
        let go = &grad_out[b * out_sample..(b + 1) * out_sample];
        if let Some(gb) = gb.as_mut() {
            for (co, chunk) in go.chunks(n).enumerate() {
                gb[co] += chunk.iter().sum::<f64>();
            }
        }
        if let Some(gw) = gw.as_mut() {
            g.im2col(&input[b * in_sample..(b + 1) * in_sample], &mut cols);
            matmul_a_bt_acc(g.c_out, k, n, go, &cols, gw);
        }
        if let Some(gin) = gin.as_mut() {
            cols.iter_mut().for_each(|v| *v = 0.0);
            matmul_at_b_acc(g.c_out, k, n, weight, go, &mut cols);
            g.col2im_acc(&cols, &mut gin[b * in_sample..(b + 1) * in_sample]);
        }
    }
    Conv3dGrads {
        input: gin,
        weight: gw,
        bias: gb,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut c = vec![0.0; m * n];
        matmul_acc(m, k, n, &a, &b, &mut c);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
        // aᵀ path: treat a as k'×m' and recover the same product from its transpose.
        let at: Vec<f64> = (0..k * m).map(|idx| a[(idx % m) * k + idx / m]).collect();
        let mut c2 = vec![0.0; m * n];
        matmul_at_b_acc(k, m, n, &at, &b, &mut c2);
        assert_eq!(c, c2);
        let bt: Vec<f64> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
        let mut c3 = vec![0.0; m * n];
        matmul_a_bt_acc(m, n, k, &a, &bt, &mut c3);
        for (x, y) in c.iter().zip(&c3) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn geometry_output_extents() {
        let g = Conv3dGeometry::new(&[2, 3, 9, 8, 9], &[4, 3, 3, 5, 5], [1, 1, 1], [1, 2, 2])
            .unwrap();
        assert_eq!(g.output_shape(), vec![2, 4, 9, 8, 9]);
        let g = Conv3dGeometry::new(&[1, 1, 7, 7, 7], &[1, 1, 3, 3, 3], [2, 2, 2], [0, 0, 0])
            .unwrap();
        assert_eq!(g.output, [3, 3, 3]);
    }

    #[test]
    fn geometry_rejects_channel_mismatch_naming_both_shapes() {
        let err = Conv3dGeometry::new(&[1, 2, 3, 3, 3], &[1, 3, 3, 3, 3], [1; 3], [0; 3])
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2, 3, 3, 3]") && msg.contains("[1, 3, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn geometry_rejects_oversized_kernel() {
        assert!(Conv3dGeometry::new(&[1, 1, 2, 2, 2], &[1, 1, 3, 3, 3], [1; 3], [0; 3]).is_err());
        assert!(Conv3dGeometry::new(&[1, 1, 2, 2, 2], &[1, 1, 3, 3, 3], [1; 3], [1; 3]).is_ok());
        assert!(Conv3dGeometry::new(&[1, 1, 3, 3, 3], &[1, 1, 3, 3, 3], [0, 1, 1], [0; 3]).is_err());
    }
}
