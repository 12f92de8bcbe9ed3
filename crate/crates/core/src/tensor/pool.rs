use super::{Result, Scalar, Tensor, TensorError};

/// Output of [`maxpool3d`]: the pooled tensor plus, for each output element,
/// the linear offset of the input element that produced it.
#[derive(Debug, Clone)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
    pub input_shape: Vec<usize>,
}

fn pooled_len(axis: usize, input: usize, window: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(TensorError::ZeroStride { op: "maxpool3d", axis });
    }
    if window == 0 || window > input {
        return Err(TensorError::DegenerateOutput {
            op: "maxpool3d",
            axis,
            input,
            kernel: window,
            stride,
            padding: 0,
        });
    }
    Ok((input - window) / stride + 1)
}

/// Per-channel 3D max pooling over `x: [C,D,H,W]` without padding.
///
/// Ties go to the lowest linear input offset in the window.
pub fn maxpool3d<T: Scalar>(x: &Tensor<T>, window: [usize; 3], stride: [usize; 3]) -> Result<Pooled<T>> {
    let [c, d, h, w] = x.dims4("maxpool3d")?;
    let od = pooled_len(0, d, window[0], stride[0])?;
    let oh = pooled_len(1, h, window[1], stride[1])?;
    let ow = pooled_len(2, w, window[2], stride[2])?;
    let xs = x.data();
    let n = c * od * oh * ow;
    let mut out = Vec::with_capacity(n);
    let mut argmax = Vec::with_capacity(n);
    for ch in 0..c {
        for i in 0..od {
            for j in 0..oh {
                for k in 0..ow {
                    let mut best = usize::MAX;
                    let mut best_v = T::neg_infinity();
                    // Scanning in increasing offset with a strict comparison
                    // keeps the first (lowest) index on ties.
                    for a in 0..window[0] {
                        for b in 0..window[1] {
                            let row = ((ch * d + i * stride[0] + a) * h + j * stride[1] + b) * w + k * stride[2];
                            for (e, &v) in xs[row..row + window[2]].iter().enumerate() {
                                if best == usize::MAX || v > best_v {
                                    best = row + e;
                                    best_v = v;
                                }
                            }
                        }
                    }
                    out.push(best_v);
                    argmax.push(best);
                }
            }
        }
    }
    Ok(Pooled {
        output: Tensor::from_vec(&[c, od, oh, ow], out)?,
        argmax,
        input_shape: x.shape().to_vec(),
    })
}

/// Routes each upstream gradient element to its recorded argmax position.
pub fn maxpool3d_backward<T: Scalar>(pooled: &Pooled<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if dy.shape() != pooled.output.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "maxpool3d_backward",
            detail: format!(
                "upstream gradient {:?} vs pooled output {:?}",
                dy.shape(),
                pooled.output.shape()
            ),
        });
    }
    let mut dx = Tensor::zeros_like_shape(pooled.input_shape.clone());
    let dxs = dx.data_mut();
    for (&src, &g) in pooled.argmax.iter().zip(dy.data()) {
        dxs[src] += g;
    }
    Ok(dx)
}
