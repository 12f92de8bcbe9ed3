//! Deliberately naive reference implementations. Nothing here depends on
//! the workspace crates, so tests can hold them up against the real code.

/// Direct 3D convolution. `x: [cin, d, h, w]`, `k: [cout, cin, kd, kh, kw]`.
/// Every output is computed as a sum over the full kernel with an explicit
/// bounds check for padding.
#[allow(clippy::too_many_arguments)]
pub fn conv3d(
    x: &[f64],
    xs: [usize; 4],
    k: &[f64],
    ks: [usize; 5],
    bias: &[f64],
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<f64>, [usize; 4]) {
    let [cin, d, h, w] = xs;
    let [cout, kcin, kd, kh, kw] = ks;
    assert_eq!(cin, kcin);
    let out_len = |n: usize, k: usize, s: usize, p: usize| (n + 2 * p - k) / s + 1;
    let (od, oh, ow) = (
        out_len(d, kd, stride[0], pad[0]),
        out_len(h, kh, stride[1], pad[1]),
        out_len(w, kw, stride[2], pad[2]),
    );
    let mut y = vec![0.0; cout * od * oh * ow];
    for co in 0..cout {
        for z in 0..od {
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for a in 0..kd {
                            for b in 0..kh {
                                for e in 0..kw {
                                    let iz = (z * stride[0] + a) as isize - pad[0] as isize;
                                    let ir = (r * stride[1] + b) as isize - pad[1] as isize;
                                    let ic = (c * stride[2] + e) as isize - pad[2] as isize;
                                    if iz < 0 || ir < 0 || ic < 0 || iz >= d as isize || ir >= h as isize || ic >= w as isize {
                                        continue;
                                    }
                                    let xi = ((ci * d + iz as usize) * h + ir as usize) * w + ic as usize;
                                    let ki = (((co * cin + ci) * kd + a) * kh + b) * kw + e;
                                    acc += x[xi] * k[ki];
                                }
                            }
                        }
                    }
                    y[((co * od + z) * oh + r) * ow + c] = acc;
                }
            }
        }
    }
    (y, [cout, od, oh, ow])
}

/// Max pooling without padding; returns values only.
pub fn maxpool3d(x: &[f64], xs: [usize; 4], window: [usize; 3], stride: [usize; 3]) -> (Vec<f64>, [usize; 4]) {
    let [c, d, h, w] = xs;
    let (od, oh, ow) = (
        (d - window[0]) / stride[0] + 1,
        (h - window[1]) / stride[1] + 1,
        (w - window[2]) / stride[2] + 1,
    );
    let mut y = Vec::with_capacity(c * od * oh * ow);
    for ch in 0..c {
        for z in 0..od {
            for r in 0..oh {
                for col in 0..ow {
                    let mut m = f64::NEG_INFINITY;
                    for a in 0..window[0] {
                        for b in 0..window[1] {
                            for e in 0..window[2] {
                                let i = ((ch * d + z * stride[0] + a) * h + r * stride[1] + b) * w + col * stride[2] + e;
                                m = m.max(x[i]);
                            }
                        }
                    }
                    y.push(m);
                }
            }
        }
    }
    (y, [c, od, oh, ow])
}

/// `x: [batch, fin]`, `w: [fout, fin]`.
pub fn linear(x: &[f64], batch: usize, fin: usize, w: &[f64], fout: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; batch * fout];
    for i in 0..batch {
        for o in 0..fout {
            y[i * fout + o] = b[o] + (0..fin).map(|k| x[i * fin + k] * w[o * fin + k]).sum::<f64>();
        }
    }
    y
}

/// Every window start enumerated one by one.
pub fn window_starts(len: usize, n: usize, stride: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = 0;
    while s + n <= len {
        starts.push(s);
        s += stride;
    }
    starts
}

/// Category codes used by the label and run oracles: 0 unchanged, 1 switch,
/// 2 transition. Event kinds: 1 switch, 2 transition.
pub fn scan_label(start: usize, end: usize, events: &[(usize, u8)]) -> u8 {
    let mut best = 0;
    for f in start..=end {
        for &(frame, kind) in events {
            if frame == f {
                best = best.max(kind);
            }
        }
    }
    best
}

/// Run-length encoding of category codes into `(code, first, last)` runs.
pub fn runs(codes: &[u8]) -> Vec<(u8, usize, usize)> {
    let mut out: Vec<(u8, usize, usize)> = Vec::new();
    for (i, &c) in codes.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.0 == c => r.2 = i,
            _ => out.push((c, i, i)),
        }
    }
    out
}

/// Centre frame of each transition run given inclusive volume ranges.
pub fn transition_centres(codes: &[u8], ranges: &[(usize, usize)]) -> Vec<usize> {
    runs(codes)
        .into_iter()
        .filter(|r| r.0 == 2)
        .map(|(_, a, b)| {
            let lo = (a..=b).map(|i| ranges[i].0).min().unwrap();
            let hi = (a..=b).map(|i| ranges[i].1).max().unwrap();
            (lo + hi) / 2
        })
        .collect()
}

/// Sliding majority with truncated edges; a tie for the top count gives 0.
pub fn sliding_majority(codes: &[u8], window: usize) -> Vec<u8> {
    let half = window / 2;
    (0..codes.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(codes.len() - 1);
            let mut counts = [0; 3];
            for &c in &codes[lo..=hi] {
                counts[c as usize] += 1;
            }
            let top = *counts.iter().max().unwrap();
            let winners: Vec<u8> = (0..3u8).filter(|&c| counts[c as usize] == top).collect();
            if winners.len() == 1 {
                winners[0]
            } else {
                0
            }
        })
        .collect()
}

/// Size of a maximum one-to-one matching between predictions and truth
/// where a pair is allowed when the frames differ by at most `tol`.
/// Exhaustive search over every assignment.
pub fn max_matching(pred: &[usize], truth: &[usize], tol: usize) -> usize {
    fn go(t: usize, truth: &[usize], pred: &[usize], used: &mut [bool], tol: usize) -> usize {
        if t == truth.len() {
            return 0;
        }
        let mut best = go(t + 1, truth, pred, used, tol);
        for i in 0..pred.len() {
            if !used[i] && pred[i].abs_diff(truth[t]) <= tol {
                used[i] = true;
                best = best.max(1 + go(t + 1, truth, pred, used, tol));
                used[i] = false;
            }
        }
        best
    }
    go(0, truth, pred, &mut vec![false; pred.len()], tol)
}

/// Mean over each `bw x bh` block of an image (integral block sizes only).
pub fn block_mean(px: &[u8], w: usize, h: usize, bw: usize, bh: usize) -> Vec<f64> {
    let (ow, oh) = (w / bw, h / bh);
    let mut out = Vec::with_capacity(ow * oh);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut s = 0.0;
            for y in oy * bh..(oy + 1) * bh {
                for x in ox * bw..(ox + 1) * bw {
                    s += px[y * w + x] as f64;
                }
            }
            out.push(s / (bw * bh) as f64);
        }
    }
    out
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
