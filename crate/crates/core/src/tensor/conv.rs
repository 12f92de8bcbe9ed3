use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Result, Scalar, Tensor, TensorError};

/// Stride and zero padding per spatial axis, ordered (depth, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvParams {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Default for ConvParams {
    fn default() -> Self {
        Self {
            stride: [1; 3],
            padding: [0; 3],
        }
    }
}

impl ConvParams {
    pub fn new(stride: [usize; 3], padding: [usize; 3]) -> Self {
        Self { stride, padding }
    }

    /// Stride 1 with `pad` on every axis.
    pub fn same(pad: usize) -> Self {
        Self::new([1; 3], [pad; 3])
    }

    /// Output length along `axis`, or an error when the kernel does not fit.
    pub fn output_len(&self, axis: usize, input: usize, kernel: usize) -> Result<usize> {
        let stride = self.stride[axis];
        let padding = self.padding[axis];
        if stride == 0 {
            return Err(TensorError::ZeroStride { op: "conv3d", axis });
        }
        let padded = input + 2 * padding;
        if kernel == 0 || padded < kernel {
            return Err(TensorError::DegenerateOutput {
                op: "conv3d",
                axis,
                input,
                kernel,
                stride,
                padding,
            });
        }
        Ok((padded - kernel) / stride + 1)
    }

    pub fn output_dims(&self, input: [usize; 3], kernel: [usize; 3]) -> Result<[usize; 3]> {
        Ok([
            self.output_len(0, input[0], kernel[0])?,
            self.output_len(1, input[1], kernel[1])?,
            self.output_len(2, input[2], kernel[2])?,
        ])
    }
}

/// Output positions `o` in `0..out_len` for which `o * stride + k - pad`
/// lands inside `0..in_len`.
fn valid_outputs(out_len: usize, in_len: usize, stride: usize, k: usize, pad: usize) -> Range<usize> {
    let (s, k, p, n) = (stride as i64, k as i64, pad as i64, in_len as i64);
    // smallest o with o*s + k - p >= 0
    let lo = if p > k { (p - k + s - 1) / s } else { 0 };
    // largest o with o*s + k - p <= n - 1
    let top = n - 1 + p - k;
    let hi = if top < 0 { 0 } else { top / s + 1 };
    let lo = (lo as usize).min(out_len);
    let hi = (hi as usize).min(out_len).max(lo);
    lo..hi
}

struct Geometry {
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    params: ConvParams,
}

fn geometry<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, p: &ConvParams) -> Result<Geometry> {
    let [cin, d, h, wd] = x.dims4("conv3d")?;
    let [cout, wcin, kd, kh, kw] = match w.shape()[..] {
        [a, b, c, d, e] => [a, b, c, d, e],
        _ => {
            return Err(TensorError::ShapeMismatch {
                op: "conv3d",
                detail: format!("kernel must be [Cout,Cin,kD,kH,kW], got {:?}", w.shape()),
            })
        }
    };
    if wcin != cin {
        return Err(TensorError::ShapeMismatch {
            op: "conv3d",
            detail: format!("input has {cin} channels, kernel expects {wcin}"),
        });
    }
    let output = p.output_dims([d, h, wd], [kd, kh, kw])?;
    Ok(Geometry {
        cin,
        cout,
        input: [d, h, wd],
        kernel: [kd, kh, kw],
        output,
        params: *p,
    })
}

impl Geometry {
    /// Visits every (kernel tap, output row) pair that touches the unpadded
    /// input, passing `(kernel offset, output row start, input row start,
    /// valid output columns, input column of the first valid output)`.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, Range<usize>, usize)) {
        let [d, h, w] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [od_n, oh_n, ow_n] = self.output;
        let [sd, sh, sw] = self.params.stride;
        let [pd, ph, pw] = self.params.padding;
        for co in 0..self.cout {
            for ci in 0..self.cin {
                for a in 0..kd {
                    let rd = valid_outputs(od_n, d, sd, a, pd);
                    for b in 0..kh {
                        let rh = valid_outputs(oh_n, h, sh, b, ph);
                        for c in 0..kw {
                            let rw = valid_outputs(ow_n, w, sw, c, pw);
                            if rw.is_empty() {
                                continue;
                            }
                            let k_off = (((co * self.cin + ci) * kd + a) * kh + b) * kw + c;
                            let iw0 = rw.start * sw + c - pw;
                            for od in rd.clone() {
                                let id = od * sd + a - pd;
                                for oh in rh.clone() {
                                    let ih = oh * sh + b - ph;
                                    let out_row = ((co * od_n + od) * oh_n + oh) * ow_n;
                                    let in_row = ((ci * d + id) * h + ih) * w;
                                    f(k_off, out_row, in_row, rw.clone(), iw0);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3D convolution of `x: [Cin,D,H,W]` with `w: [Cout,Cin,kD,kH,kW]` plus
/// per-channel bias `b: [Cout]`.
pub fn conv3d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, p: &ConvParams) -> Result<Tensor<T>> {
    let g = geometry(x, w, p)?;
    if b.shape() != [g.cout] {
        return Err(TensorError::ShapeMismatch {
            op: "conv3d",
            detail: format!("bias must be [{}], got {:?}", g.cout, b.shape()),
        });
    }
    let [od, oh, ow] = g.output;
    let plane = od * oh * ow;
    let mut y = Tensor::zeros_like_shape(vec![g.cout, od, oh, ow]);
    for (co, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
        chunk.fill(b.data()[co]);
    }
    let sw = g.params.stride[2];
    let (xs, ws) = (x.data(), w.data());
    let ys = y.data_mut();
    g.for_each_row(|k_off, out_row, in_row, cols, iw0| {
        let wv = ws[k_off];
        let out = &mut ys[out_row + cols.start..out_row + cols.end];
        if sw == 1 {
            let inp = &xs[in_row + iw0..in_row + iw0 + out.len()];
            for (o, &v) in out.iter_mut().zip(inp) {
                *o += wv * v;
            }
        } else {
            for (j, o) in out.iter_mut().enumerate() {
                *o += wv * xs[in_row + iw0 + j * sw];
            }
        }
    });
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct Conv3dGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

/// Gradients of a scalar loss with respect to the inputs of [`conv3d`],
/// given the upstream gradient `dy`.
pub fn conv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    p: &ConvParams,
) -> Result<Conv3dGrads<T>> {
    conv3d_backward_impl(x, w, dy, p, true)
}

/// Like [`conv3d_backward`] but skips the input gradient, leaving `dx` zero.
pub(crate) fn conv3d_backward_params<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    p: &ConvParams,
) -> Result<Conv3dGrads<T>> {
    conv3d_backward_impl(x, w, dy, p, false)
}

fn conv3d_backward_impl<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    p: &ConvParams,
    need_dx: bool,
) -> Result<Conv3dGrads<T>> {
    let g = geometry(x, w, p)?;
    let [od, oh, ow] = g.output;
    if dy.shape() != [g.cout, od, oh, ow] {
        return Err(TensorError::ShapeMismatch {
            op: "conv3d_backward",
            detail: format!(
                "upstream gradient must be {:?}, got {:?}",
                [g.cout, od, oh, ow],
                dy.shape()
            ),
        });
    }
    let plane = od * oh * ow;
    let mut dx = Tensor::zeros_like_shape(x.shape().to_vec());
    let mut dw = Tensor::zeros_like_shape(w.shape().to_vec());
    let db = Tensor::from_vec(
        &[g.cout],
        dy.data().chunks(plane).map(|c| c.iter().copied().sum()).collect(),
    )?;
    let sw = g.params.stride[2];
    let (xs, ws, dys) = (x.data(), w.data(), dy.data());
    let dxs = dx.data_mut();
    let dws = dw.data_mut();
    g.for_each_row(|k_off, out_row, in_row, cols, iw0| {
        let wv = ws[k_off];
        let grad = &dys[out_row + cols.start..out_row + cols.end];
        let mut acc = T::zero();
        if sw == 1 {
            let base = in_row + iw0;
            let inp = &xs[base..base + grad.len()];
            for (&gv, &v) in grad.iter().zip(inp) {
                acc += gv * v;
            }
            if need_dx {
                for (d, &gv) in dxs[base..base + grad.len()].iter_mut().zip(grad) {
                    *d += wv * gv;
                }
            }
        } else {
            for (j, &gv) in grad.iter().enumerate() {
                let i = in_row + iw0 + j * sw;
                acc += gv * xs[i];
                if need_dx {
                    dxs[i] += wv * gv;
                }
            }
        }
        dws[k_off] += acc;
    });
    Ok(Conv3dGrads { dx, dw, db })
}
