use super::{Result, Scalar, Tensor, TensorError};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`]; the derivative at exactly zero is taken as zero.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != dy.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "relu_backward",
            detail: format!("{:?} vs {:?}", x.shape(), dy.shape()),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

fn linear_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [batch, fin] = x.dims2("linear")?;
    let [fout, wfin] = w.dims2("linear")?;
    if fin != wfin {
        return Err(TensorError::ShapeMismatch {
            op: "linear",
            detail: format!("input width {fin} vs weight width {wfin}"),
        });
    }
    Ok((batch, fin, fout))
}

/// `y = x · wᵀ + b` for `x: [B,Fin]`, `w: [Fout,Fin]`, `b: [Fout]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, fin, fout) = linear_dims(x, w)?;
    if b.shape() != [fout] {
        return Err(TensorError::ShapeMismatch {
            op: "linear",
            detail: format!("bias must be [{fout}], got {:?}", b.shape()),
        });
    }
    let mut y = Vec::with_capacity(batch * fout);
    for row in x.data().chunks(fin) {
        for (wrow, &bias) in w.data().chunks(fin).zip(b.data()) {
            let mut acc = bias;
            for (&a, &c) in row.iter().zip(wrow) {
                acc += a * c;
            }
            y.push(acc);
        }
    }
    Tensor::from_vec(&[batch, fout], y)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> Result<LinearGrads<T>> {
    let (batch, fin, fout) = linear_dims(x, w)?;
    if dy.shape() != [batch, fout] {
        return Err(TensorError::ShapeMismatch {
            op: "linear_backward",
            detail: format!("upstream gradient must be [{batch}, {fout}], got {:?}", dy.shape()),
        });
    }
    let mut dx = vec![T::zero(); batch * fin];
    let mut dw = vec![T::zero(); fout * fin];
    let mut db = vec![T::zero(); fout];
    for ((xrow, dxrow), dyrow) in x.data().chunks(fin).zip(dx.chunks_mut(fin)).zip(dy.data().chunks(fout)) {
        for (o, &g) in dyrow.iter().enumerate() {
            db[o] += g;
            let wrow = &w.data()[o * fin..(o + 1) * fin];
            let dwrow = &mut dw[o * fin..(o + 1) * fin];
            for i in 0..fin {
                dxrow[i] += g * wrow[i];
                dwrow[i] += g * xrow[i];
            }
        }
    }
    Ok(LinearGrads {
        dx: Tensor::from_vec(&[batch, fin], dx)?,
        dw: Tensor::from_vec(&[fout, fin], dw)?,
        db: Tensor::from_vec(&[fout], db)?,
    })
}

/// Row-wise softmax of `[B,K]` logits, shifted by the row maximum.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = logits.dims2("softmax")?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut total = T::zero();
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p = *p / total;
        }
    }
    Tensor::from_vec(logits.shape(), out)
}

#[derive(Debug, Clone)]
pub struct CrossEntropy<T> {
    pub loss: T,
    pub probs: Tensor<T>,
    pub dlogits: Tensor<T>,
}

/// Category-weighted softmax cross-entropy, averaged over the batch:
/// `loss = (1/B) Σ_b w[t_b] · (−ln p_b[t_b])`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    category_weights: &Tensor<T>,
) -> Result<CrossEntropy<T>> {
    let [batch, k] = logits.dims2("softmax_cross_entropy")?;
    if targets.len() != batch {
        return Err(TensorError::ShapeMismatch {
            op: "softmax_cross_entropy",
            detail: format!("{} targets for {batch} rows", targets.len()),
        });
    }
    if category_weights.shape() != [k] {
        return Err(TensorError::ShapeMismatch {
            op: "softmax_cross_entropy",
            detail: format!("category weights must be [{k}], got {:?}", category_weights.shape()),
        });
    }
    for (index, &w) in category_weights.data().iter().enumerate() {
        if !(w > T::zero() && w.is_finite()) {
            return Err(TensorError::InvalidWeight {
                index,
                value: w.to_f64(),
            });
        }
    }
    for (row, &target) in targets.iter().enumerate() {
        if target >= k {
            return Err(TensorError::TargetOutOfRange {
                row,
                target,
                classes: k,
            });
        }
    }
    let probs = softmax(logits)?;
    let scale = T::one() / T::from_f64(batch as f64);
    let mut loss = T::zero();
    let mut dlogits = probs.data().to_vec();
    for (b, (&target, drow)) in targets.iter().zip(dlogits.chunks_mut(k)).enumerate() {
        let w = category_weights.data()[target];
        let p = probs.data()[b * k + target];
        // logits shifted by the row max keep this finite unless p underflows
        loss += -w * p.max(T::min_positive_value()).ln();
        drow[target] -= T::one();
        for v in drow.iter_mut() {
            *v *= w * scale;
        }
    }
    Ok(CrossEntropy {
        loss: loss * scale,
        probs,
        dlogits: Tensor::from_vec(&[batch, k], dlogits)?,
    })
}

fn residual_dims<T: Scalar>(shortcut: &Tensor<T>, branch: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [cs, d, h, w] = shortcut.dims4("residual_add")?;
    let [cb, bd, bh, bw] = branch.dims4("residual_add")?;
    if [d, h, w] != [bd, bh, bw] {
        return Err(TensorError::ShapeMismatch {
            op: "residual_add",
            detail: format!("spatial dims {:?} vs {:?}", [d, h, w], [bd, bh, bw]),
        });
    }
    if cs > cb {
        return Err(TensorError::ShapeMismatch {
            op: "residual_add",
            detail: format!("shortcut has {cs} channels, more than branch {cb}"),
        });
    }
    Ok((cs, cb, d * h * w))
}

/// `branch + shortcut`, with the shortcut zero-padded along the channel axis
/// when the branch has more channels.
pub fn residual_add<T: Scalar>(shortcut: &Tensor<T>, branch: &Tensor<T>) -> Result<Tensor<T>> {
    let (cs, _, plane) = residual_dims(shortcut, branch)?;
    let mut y = branch.clone();
    for (o, &s) in y.data_mut()[..cs * plane].iter_mut().zip(shortcut.data()) {
        *o += s;
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct ResidualGrads<T> {
    pub dshortcut: Tensor<T>,
    pub dbranch: Tensor<T>,
}

/// Splits `dy` between both inputs; the shortcut receives only the channels
/// it actually contributed.
pub fn residual_add_backward<T: Scalar>(shortcut_channels: usize, dy: &Tensor<T>) -> Result<ResidualGrads<T>> {
    let [cb, d, h, w] = dy.dims4("residual_add_backward")?;
    if shortcut_channels == 0 || shortcut_channels > cb {
        return Err(TensorError::ShapeMismatch {
            op: "residual_add_backward",
            detail: format!("shortcut channels {shortcut_channels} not in 1..={cb}"),
        });
    }
    let plane = d * h * w;
    Ok(ResidualGrads {
        dshortcut: Tensor::from_vec(
            &[shortcut_channels, d, h, w],
            dy.data()[..shortcut_channels * plane].to_vec(),
        )?,
        dbranch: dy.clone(),
    })
}
