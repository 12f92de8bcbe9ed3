//! One line per acceptance criterion. Run with
//! `cargo test -p slideloc-cli --test acceptance`; pass a substring to run a
//! subset.

#[path = "../../service/tests/support/mod.rs"]
mod support;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde_json::{json, Value};
use slideloc_core::evalkit::{match_transitions, pixel_diff_baseline};
use slideloc_core::ingest::{
    build_volumes, label_volumes, load_sequence, prepare, remap_events, EventKind, EventLabel, Fps, Frame, FrameSequence,
    FrameVolume, VolumeConfig,
};
use slideloc_core::strnet::{read_weights, write_weights, Network, NetworkConfig, StrnetError};
use slideloc_core::summarizer::{build_outline, merge_transitions, predict, summarize, DecodeParams, PredictionTrack, TrackEntry};
use slideloc_core::synthgen::{generate, preset_spec, write_corpus, Preset};
use slideloc_core::tensor::{
    conv3d, finite_difference, grad_check, linear, maxpool3d, residual_add, residual_add_backward, softmax_cross_entropy,
    Conv3d, ConvParams, Linear, MaxPool3d, Relu, Tensor,
};
use slideloc_core::trainer::{evaluate, train, TrainConfig, Weighting};
use slideloc_core::Category;
use slideloc_service::{MemoryStore, Service, SessionDoc, VideoRecord};
use slideloc_testkit as oracle;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn uniform(rng: &mut SplitMix64, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

fn worst_relative(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| if (x - y).abs() < 1e-12 { 0.0 } else { oracle::relative_error(*x, *y) })
        .fold(0.0, f64::max)
}

// ------------------------------------------------------------- numeric

fn numeric() -> Check {
    let start = Instant::now();
    let mut rng = SplitMix64::seed_from_u64(101);
    let mut forward_worst = 0.0f64;
    let instances = 120;
    for _ in 0..instances {
        let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let k = [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)];
        let stride = [rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2)];
        let pad = [rng.random_range(0..=1), rng.random_range(0..=1), rng.random_range(0..=1)];
        let dims = [cin, rng.random_range(k[0]..=5), rng.random_range(k[1]..=6), rng.random_range(k[2]..=6)];
        let x = uniform(&mut rng, &dims);
        let w = uniform(&mut rng, &[cout, cin, k[0], k[1], k[2]]);
        let b = uniform(&mut rng, &[cout]);
        let y = conv3d(&x, &w, &b, &ConvParams::new(stride, pad)).map_err(|e| e.to_string())?;
        let (expected, shape) = oracle::conv3d(x.data(), dims, w.data(), [cout, cin, k[0], k[1], k[2]], b.data(), stride, pad);
        ensure(y.shape() == shape, || "conv3d shape".into())?;
        forward_worst = forward_worst.max(worst_relative(y.data(), &expected));

        let win = [rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3)];
        let pstride = [rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3)];
        if (0..3).all(|i| dims[i + 1] >= win[i]) {
            let y = maxpool3d(&x, win, pstride).map_err(|e| e.to_string())?.output;
            let (expected, _) = oracle::maxpool3d(x.data(), dims, win, pstride);
            forward_worst = forward_worst.max(worst_relative(y.data(), &expected));
        }

        let (batch, fin, fout) = (rng.random_range(1..=4), rng.random_range(1..=16), rng.random_range(1..=8));
        let xl = uniform(&mut rng, &[batch, fin]);
        let wl = uniform(&mut rng, &[fout, fin]);
        let bl = uniform(&mut rng, &[fout]);
        let y = linear(&xl, &wl, &bl).map_err(|e| e.to_string())?;
        forward_worst = forward_worst.max(worst_relative(y.data(), &oracle::linear(xl.data(), batch, fin, wl.data(), fout, bl.data())));
    }
    ensure(forward_worst < 1e-6, || format!("forward relative error {forward_worst:e}"))?;

    let mut backward_worst = 0.0f64;
    for _ in 0..4 {
        let conv = Conv3d {
            weight: uniform(&mut rng, &[2, 2, 3, 3, 3]),
            bias: uniform(&mut rng, &[2]),
            params: ConvParams::new([1, 2, 1], [1, 1, 0]),
        };
        backward_worst = backward_worst.max(grad_check(&conv, &[uniform(&mut rng, &[2, 3, 5, 4])], 1e-6).unwrap());
        let lin = Linear {
            weight: uniform(&mut rng, &[4, 6]),
            bias: uniform(&mut rng, &[4]),
        };
        backward_worst = backward_worst.max(grad_check(&lin, &[uniform(&mut rng, &[3, 6])], 1e-6).unwrap());
        let n = 2 * 4 * 4 * 4;
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.05).collect();
        for i in (1..n).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        let pool = MaxPool3d {
            window: [2, 2, 2],
            stride: [2, 2, 1],
        };
        backward_worst = backward_worst.max(grad_check(&pool, &[Tensor::from_vec(&[2, 4, 4, 4], vals).unwrap()], 1e-6).unwrap());
        let xr = uniform(&mut rng, &[2, 3, 3, 3]).map(|v| if v.abs() < 0.05 { 0.3 } else { v });
        backward_worst = backward_worst.max(grad_check(&Relu, &[xr], 1e-6).unwrap());

        let logits = uniform(&mut rng, &[3, 3]);
        let targets: Vec<usize> = (0..3).map(|_| rng.random_range(0..3)).collect();
        let cw = Tensor::from_vec(&[3], vec![0.6, 1.0, 2.2]).unwrap();
        let ce = softmax_cross_entropy(&logits, &targets, &cw).unwrap();
        let num = finite_difference(
            |z| softmax_cross_entropy(&Tensor::from_vec(&[3, 3], z.to_vec()).unwrap(), &targets, &cw).unwrap().loss,
            logits.data(),
            1e-6,
        );
        backward_worst = backward_worst.max(worst_relative(ce.dlogits.data(), &num));

        let (s, b, r) = (uniform(&mut rng, &[2, 2, 2, 2]), uniform(&mut rng, &[4, 2, 2, 2]), uniform(&mut rng, &[4, 2, 2, 2]));
        let g = residual_add_backward(2, &r).unwrap();
        let proj = |s: &[f64], b: &[f64]| -> f64 {
            let y = residual_add(&Tensor::from_vec(&[2, 2, 2, 2], s.to_vec()).unwrap(), &Tensor::from_vec(&[4, 2, 2, 2], b.to_vec()).unwrap()).unwrap();
            y.data().iter().zip(r.data()).map(|(a, c)| a * c).sum()
        };
        backward_worst = backward_worst.max(worst_relative(g.dshortcut.data(), &finite_difference(|v| proj(v, b.data()), s.data(), 1e-6)));
        backward_worst = backward_worst.max(worst_relative(g.dbranch.data(), &finite_difference(|v| proj(s.data(), v), b.data(), 1e-6)));
    }
    ensure(backward_worst < 1e-4, || format!("layer gradient relative error {backward_worst:e}"))?;

    let net = Network::<f64>::build(NetworkConfig::tiny(17)).unwrap();
    let mut shape = vec![2];
    shape.extend_from_slice(&net.config().input.dims());
    let batch = Tensor::from_fn(&shape, |_| rng.random_range(0.0..1.0)).unwrap();
    let targets = [Category::Transition, Category::Unchanged];
    let cw = [0.8, 1.2, 1.5];
    let out = net.backward(&batch, &targets, &cw).unwrap();
    let mut net_worst = 0.0f64;
    let mut probes = 0;
    for (idx, entry) in out.gradients.entries.iter().enumerate() {
        let n = entry.tensor.len();
        for _ in 0..n.min(8) {
            let i = rng.random_range(0..n);
            let mut probe = net.clone();
            let base = probe.weights().entries[idx].tensor.data()[i];
            let numeric = finite_difference(
                |v| {
                    probe.weights_mut().entries[idx].tensor.data_mut()[i] = v[0];
                    probe.backward(&batch, &targets, &cw).unwrap().loss
                },
                &[base],
                1e-6,
            )[0];
            net_worst = net_worst.max(worst_relative(&[entry.tensor.data()[i]], &[numeric]));
            probes += 1;
        }
    }
    ensure(net_worst < 1e-3, || format!("whole-network gradient relative error {net_worst:e}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{instances} forward instances worst {forward_worst:.1e}; layer backward worst {backward_worst:.1e}; network {probes} probes worst {net_worst:.1e}; {:.1}s",
        elapsed.as_secs_f64()
    ))
}

// -------------------------------------------------------- architecture

fn architecture() -> Check {
    let mut notes = Vec::new();
    for (name, cfg) in [("tiny", NetworkConfig::tiny(3)), ("paper", NetworkConfig::paper(3))] {
        let net = Network::<f32>::build(cfg).map_err(|e| e.to_string())?;
        ensure(net.conv_layer_count() == 7 && net.fc_layer_count() == 4, || {
            format!("{name}: {} conv, {} fc", net.conv_layer_count(), net.fc_layer_count())
        })?;
        let mut shape = vec![2];
        shape.extend_from_slice(&net.config().input.dims());
        let mut rng = SplitMix64::seed_from_u64(5);
        let batch = Tensor::from_fn(&shape, |_| rng.random_range(0.0f32..1.0)).unwrap();
        let probs = net.forward(&batch).map_err(|e| e.to_string())?;
        ensure(probs.shape() == [2, 3], || format!("{name}: output shape {:?}", probs.shape()))?;
        for row in probs.data().chunks(3) {
            let sum: f32 = row.iter().sum();
            ensure((sum - 1.0).abs() <= 1e-5, || format!("{name}: row sums to {sum}"))?;
        }

        let mut zeroed = net.clone();
        for e in &mut zeroed.weights_mut().entries {
            if e.name.starts_with("block") {
                e.tensor.data_mut().fill(0.0);
            }
        }
        let trace = zeroed.trace(&batch.slice_outer(0).unwrap()).map_err(|e| e.to_string())?;
        for (i, b) in trace.blocks.iter().enumerate() {
            let cs = b.input.shape()[0];
            let plane: usize = b.input.shape()[1..].iter().product();
            let (head, tail) = b.output.data().split_at(cs * plane);
            // block inputs are post-ReLU, so the identity survives the output ReLU
            ensure(head == b.input.data() && tail.iter().all(|&v| v == 0.0), || format!("{name}: block {i} is not a shortcut"))?;
        }
        notes.push(format!("{name} 7 conv/4 fc, {} blocks", trace.blocks.len()));
    }
    Ok(notes.join("; "))
}

// --------------------------------------------------------- persistence

fn persistence() -> Check {
    let net = Network::<f32>::build(NetworkConfig::tiny(77)).unwrap();
    let bytes = write_weights(&net).map_err(|e| e.to_string())?;
    let back = read_weights(&bytes).map_err(|e| e.to_string())?;
    let bits = |n: &Network<f32>| -> Vec<u32> { n.weights().tensors().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect() };
    ensure(bits(&back) == bits(&net) && back.config() == net.config(), || "round trip differs".into())?;
    let mut bad_magic = bytes.clone();
    bad_magic[1] ^= 0x20;
    let magic_err = read_weights(&bad_magic).err();
    let short_err = read_weights(&bytes[..bytes.len() - 8]).err();
    let mut long = bytes.clone();
    long.extend_from_slice(&[0; 4]);
    let long_err = read_weights(&long).err();
    ensure(matches!(magic_err, Some(StrnetError::BadMagic)), || format!("corrupted magic gave {magic_err:?}"))?;
    ensure(matches!(short_err, Some(StrnetError::LengthMismatch { .. })), || format!("truncated file gave {short_err:?}"))?;
    ensure(matches!(long_err, Some(StrnetError::LengthMismatch { .. })), || format!("padded file gave {long_err:?}"))?;
    Ok(format!("{} bytes round trip bit-exact; bad magic and length mismatch rejected distinctly", bytes.len()))
}

// ------------------------------------------------------ pipeline algebra

fn blank(len: usize) -> FrameSequence {
    FrameSequence::new(vec![Frame::filled(2, 2, 0); len], Fps::integer(25)).unwrap()
}

fn pipeline_algebra() -> Check {
    let mut rng = SplitMix64::seed_from_u64(202);
    for case in 0..500 {
        let (len, n, stride) = (rng.random_range(2..300), rng.random_range(2..20), rng.random_range(1..12));
        let expected = if len < n { 0 } else { (len - n) / stride + 1 };
        let cfg = VolumeConfig {
            n,
            stride,
            temporal_rate: 1,
            target_height: 2,
            target_width: 2,
        };
        let got = if len < n { 0 } else { build_volumes(&blank(len), &cfg).map_err(|e| e.to_string())?.len() };
        ensure(got == expected, || format!("count case {case}: T={len} N={n} stride={stride}: {got} != {expected}"))?;
    }
    for case in 0..100 {
        let (len, n, stride) = (rng.random_range(20..150), rng.random_range(2..12), rng.random_range(1..6));
        let events: Vec<(usize, u8)> = (0..rng.random_range(0..15)).map(|_| (rng.random_range(0..len), rng.random_range(1..=2))).collect();
        let labels: Vec<EventLabel> = events
            .iter()
            .map(|&(f, k)| if k == 2 { EventLabel::transition(f) } else { EventLabel::switch(f) })
            .collect();
        let cfg = VolumeConfig {
            n,
            stride,
            temporal_rate: 1,
            target_height: 2,
            target_width: 2,
        };
        let mut vols = build_volumes(&blank(len), &cfg).map_err(|e| e.to_string())?;
        label_volumes(&mut vols, &labels, len).map_err(|e| e.to_string())?;
        for v in &vols {
            let want = oracle::scan_label(v.start, v.end, &events);
            ensure(v.category.map(|c| c.index() as u8) == Some(want), || format!("label case {case} at {}..={}", v.start, v.end))?;
        }
    }
    for case in 0..1000 {
        let count = rng.random_range(1..80);
        let (n, stride) = (rng.random_range(1..10), rng.random_range(1..6));
        let codes: Vec<u8> = (0..count).map(|_| rng.random_range(0..3)).collect();
        let entries: Vec<TrackEntry> = (0..count)
            .map(|i| TrackEntry {
                start: i * stride,
                end: i * stride + n - 1,
                probs: [0.2, 0.2, rng.random_range(0.0..1.0)],
            })
            .collect();
        let cats: Vec<Category> = codes.iter().map(|&c| Category::from_index(c as usize).unwrap()).collect();
        let merged: Vec<usize> = merge_transitions(&cats, &entries).map_err(|e| e.to_string())?.iter().map(|e| e.frame_index).collect();
        let ranges: Vec<(usize, usize)> = entries.iter().map(|e| (e.start, e.end)).collect();
        ensure(merged == oracle::transition_centres(&codes, &ranges), || format!("merge case {case}"))?;
    }
    let mut manifests = 0;
    for case in 0..300 {
        let (n, stride) = (rng.random_range(2..10), rng.random_range(1..6));
        let len = n + rng.random_range(0..200);
        let count = (len - n) / stride + 1;
        let track = PredictionTrack {
            video_id: "v".into(),
            fps: Fps::integer(5),
            frame_count: len,
            temporal_rate: 5,
            entries: (0..count)
                .map(|i| {
                    let mut probs = [0.1; 3];
                    probs[rng.random_range(0..3)] = 0.8;
                    TrackEntry {
                        start: i * stride,
                        end: i * stride + n - 1,
                        probs,
                    }
                })
                .collect(),
        };
        let (_, _, manifest) = summarize(&track, &DecodeParams::default()).map_err(|e| e.to_string())?;
        let segs = build_outline(&manifest).map_err(|e| e.to_string())?.segments;
        let mut at = 0;
        for s in &segs {
            ensure(s.start_frame == at && s.end_frame > s.start_frame, || format!("outline case {case} gap at {at}"))?;
            at = s.end_frame;
        }
        ensure(at == len, || format!("outline case {case} ends at {at}, video has {len}"))?;
        manifests += 1;
    }
    Ok(format!("500 counts, 100 label sets, 1000 merges, {manifests} outlines agree with oracles"))
}

// ------------------------------------------------------------- overfit

fn eight_volumes(seed: u64) -> Vec<FrameVolume> {
    let (seq, events) = generate(&preset_spec(Preset::Mixed, 1200, seed)).unwrap();
    let vols = prepare(&seq, Some(&events), &VolumeConfig::tiny()).unwrap().1;
    let mut out: Vec<FrameVolume> = Vec::new();
    for (cat, take) in [(Category::Transition, 3), (Category::Switch, 1)] {
        out.extend(vols.iter().filter(|v| v.category == Some(cat)).step_by(2).take(take).cloned());
    }
    let rest = 8 - out.len();
    out.extend(vols.iter().filter(|v| v.category == Some(Category::Unchanged)).step_by(7).take(rest).cloned());
    out
}

fn overfit() -> Check {
    let start = Instant::now();
    let mut epochs = Vec::new();
    for seed in 0..5u64 {
        let vols = eight_volumes(900 + seed);
        ensure(vols.len() == 8, || format!("seed {seed}: only {} volumes", vols.len()))?;
        let mut net = Network::build(NetworkConfig::tiny(seed)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 300,
            batch_size: 8,
            shuffle_seed: seed,
            weighting: Weighting::InverseFrequency,
            augment: false,
            target_accuracy: Some(1.0),
        };
        let h = train(&mut net, &vols, &cfg).map_err(|e| e.to_string())?;
        let acc = evaluate(&net, &vols).map_err(|e| e.to_string())?.accuracy;
        ensure(acc == 1.0, || {
            let l = h.last().unwrap();
            format!("seed {seed}: accuracy {acc} after {} epochs (loss {:.4}, train acc {})", h.len(), l.loss, l.accuracy)
        })?;
        epochs.push(h.len());
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("5/5 seeds reach 100% in {epochs:?} epochs; {:.1}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------- end to end

struct Lecture {
    reduced: FrameSequence,
    volumes: Vec<FrameVolume>,
    truth: Vec<usize>,
}

fn lecture(preset: Preset, seed: u64, cfg: &VolumeConfig) -> Lecture {
    let (seq, events) = generate(&preset_spec(preset, 1200, seed)).unwrap();
    let (reduced, volumes) = prepare(&seq, Some(&events), cfg).unwrap();
    let truth = remap_events(&events, cfg.temporal_rate)
        .iter()
        .filter(|e| e.kind == EventKind::Transition)
        .map(|e| e.frame_index)
        .collect();
    Lecture { reduced, volumes, truth }
}

fn f1(tp: usize, predicted: usize, actual: usize) -> f64 {
    let p = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
    let r = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Pooled event F1 of `detect` over `lectures` at tolerance `tol`.
fn event_f1(lectures: &[Lecture], tol: usize, detect: impl Fn(&Lecture) -> Vec<usize>) -> f64 {
    let (mut tp, mut np, mut nt) = (0, 0, 0);
    for l in lectures {
        let pred = detect(l);
        tp += match_transitions(&pred, &l.truth, tol).unwrap().true_positives;
        np += pred.len();
        nt += l.truth.len();
    }
    f1(tp, np, nt)
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let cfg = VolumeConfig::tiny();
    // seeds never used while choosing the configuration
    let lectures: Vec<Lecture> = (0..20).map(|i| lecture(Preset::Mixed, 20260 + i, &cfg)).collect();
    let train_set: Vec<FrameVolume> = lectures[..14].iter().flat_map(|l| l.volumes.clone()).collect();
    let test_set: Vec<FrameVolume> = lectures[14..].iter().flat_map(|l| l.volumes.clone()).collect();
    let mut net = Network::build(NetworkConfig::tiny(7)).unwrap();
    let tc = TrainConfig {
        learning_rate: 0.002,
        momentum: 0.9,
        epochs: 30,
        batch_size: 16,
        shuffle_seed: 0,
        weighting: Weighting::InverseFrequency,
        augment: true,
        target_accuracy: None,
    };
    train(&mut net, &train_set, &tc).map_err(|e| e.to_string())?;
    let macro_f1 = evaluate(&net, &test_set).map_err(|e| e.to_string())?.classification.macro_avg.f1;
    let detect = |l: &Lecture| -> Vec<usize> {
        let track = predict(&net, &l.volumes, "v", &l.reduced, cfg.temporal_rate, 32).unwrap();
        summarize(&track, &DecodeParams::default()).unwrap().1.iter().map(|e| e.frame_index).collect()
    };
    let net_events = event_f1(&lectures[14..], cfg.n, detect);

    let motion: Vec<Lecture> = (0..6).map(|i| lecture(Preset::PanHeavy, 30260 + i, &cfg)).collect();
    let net_motion = event_f1(&motion, cfg.n, detect);
    // the baseline gets its best threshold in hindsight
    let (best_th, base_motion) = [2.0, 3.0, 5.0, 8.0, 12.0, 20.0, 30.0]
        .into_iter()
        .map(|th| {
            let f = event_f1(&motion, cfg.n, |l| pixel_diff_baseline(&l.reduced, th).unwrap().iter().map(|e| e.frame_index).collect());
            (th, f)
        })
        .fold((0.0, -1.0), |best, x| if x.1 > best.1 { x } else { best });
    let elapsed = start.elapsed();
    let detail = format!(
        "macro-F1 {macro_f1:.3} (>= 0.85), event F1 {net_events:.3} (>= 0.90), motion-heavy net {net_motion:.3} vs baseline {base_motion:.3} at threshold {best_th} (margin >= 0.10); {:.0}s",
        elapsed.as_secs_f64()
    );
    let pass = macro_f1 >= 0.85 && net_events >= 0.90 && net_motion - base_motion >= 0.10 && elapsed < Duration::from_secs(900);
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ------------------------------------------------------------- service

fn http(addr: SocketAddr, method: &str, path: &str, body: Option<&Value>) -> Option<(u16, Value)> {
    let mut s = TcpStream::connect_timeout(&addr, Duration::from_secs(2)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    s.write_all(req.as_bytes()).ok()?;
    let mut resp = String::new();
    s.read_to_string(&mut resp).ok()?;
    let status = resp.split(' ').nth(1)?.parse().ok()?;
    let payload = resp.split_once("\r\n\r\n").map(|x| x.1).unwrap_or("");
    Some((status, serde_json::from_str(payload).unwrap_or(Value::Null)))
}

fn kill_during_write(round: u64) -> Result<usize, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut child = Command::new(env!("CARGO_BIN_EXE_slideloc"))
        .args(["serve", "--store", dir.path().to_str().unwrap(), "--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).map_err(|e| e.to_string())?;
    let addr: SocketAddr = line.trim().trim_start_matches("listening on ").parse().map_err(|e| format!("{e}: {line:?}"))?;

    let v = support::video(4);
    let body = json!({
        "manifest": v.manifest,
        "outline": v.outline,
        "keyframes": v.images.iter().map(|i| BASE64.encode(i)).collect::<Vec<_>>(),
    });
    let vid = http(addr, "POST", "/videos", Some(&body)).ok_or("register failed")?.1["id"].as_str().unwrap().to_string();
    let sessions: Vec<String> = (0..3)
        .map(|_| http(addr, "POST", "/sessions", Some(&json!({ "video_id": vid }))).unwrap().1["id"].as_str().unwrap().to_string())
        .collect();

    let stop = Arc::new(AtomicBool::new(false));
    let writers: Vec<_> = sessions
        .iter()
        .cloned()
        .enumerate()
        .map(|(w, sid)| {
            let stop = stop.clone();
            std::thread::spawn(move || {
                let mut version = 1u64;
                let mut i = 0usize;
                while !stop.load(Ordering::Relaxed) {
                    let req = if i % 2 == 0 {
                        json!({ "keyframe": (i + w) % 4, "decision": "accepted", "expected_version": version })
                    } else {
                        json!({ "keyframe": (i + w) % 4, "decision": "rejected", "expected_version": version })
                    };
                    match http(addr, "POST", &format!("/sessions/{sid}/selection"), Some(&req)) {
                        Some((200, s)) => version = s["version"].as_u64().unwrap(),
                        Some(_) => {}
                        None => break,
                    }
                    let _ = http(addr, "POST", &format!("/sessions/{sid}/events"), Some(&json!({ "kind": "clip_reviewed", "payload": { "i": i } })));
                    i += 1;
                }
            })
        })
        .collect();
    std::thread::sleep(Duration::from_millis(150 + 70 * round));
    child.kill().map_err(|e| e.to_string())?;
    child.wait().map_err(|e| e.to_string())?;
    stop.store(true, Ordering::Relaxed);
    for w in writers {
        let _ = w.join();
    }

    let mut checked = 0;
    for entry in std::fs::read_dir(dir.path().join("sessions")).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let doc: SessionDoc = serde_json::from_slice(&std::fs::read(&path).unwrap()).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure(doc.events.iter().enumerate().all(|(i, e)| e.seq == i as u64 + 1), || format!("{}: event gap", path.display()))?;
        ensure(doc.session.references_valid(), || format!("{}: bad reference", path.display()))?;
        checked += 1;
    }
    let video: VideoRecord =
        serde_json::from_slice(&std::fs::read(dir.path().join("videos").join(format!("{vid}.json"))).unwrap()).map_err(|e| e.to_string())?;
    ensure(video.keyframes.len() == 4, || "video record damaged".into())?;
    ensure(checked == sessions.len(), || format!("{checked} session documents for {} sessions", sessions.len()))?;
    Ok(checked)
}

fn service_properties() -> Check {
    let svc = Service::new(Arc::new(MemoryStore::new()));
    let audit = support::random_sequences(&svc, 10_000, 20, 303)?;
    let mut docs = 0;
    for round in 0..5 {
        docs += kill_during_write(round)?;
    }
    Ok(format!(
        "{} sequences, {} actions ({} accepted) hold every invariant; 5 killed servers left {docs} whole documents",
        audit.sequences, audit.actions, audit.successes
    ))
}

// ----------------------------------------------------------------- cli

fn cli_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let cfg = VolumeConfig::tiny();
    // a briefly trained network so tracks contain every category
    let (seq, events) = generate(&preset_spec(Preset::Mixed, 1200, 40)).unwrap();
    let vols = prepare(&seq, Some(&events), &cfg).unwrap().1;
    let mut net = Network::build(NetworkConfig::tiny(7)).unwrap();
    let tc = TrainConfig {
        learning_rate: 0.002,
        epochs: 3,
        batch_size: 16,
        augment: true,
        ..TrainConfig::default()
    };
    train(&mut net, &vols, &tc).map_err(|e| e.to_string())?;
    let weights = d.join("w.strn");
    slideloc_core::strnet::save_weights(&net, &weights).map_err(|e| e.to_string())?;
    let mut keyframes = 0;
    for seed in 0..10u64 {
        let corpus = d.join(format!("lecture{seed}"));
        let preset = Preset::ALL[seed as usize % 4];
        let (seq, events) = generate(&preset_spec(preset, 600, 500 + seed)).unwrap();
        write_corpus(&corpus, &seq, &events).map_err(|e| e.to_string())?;
        let manifest = corpus.join("manifest.json");
        let track = d.join(format!("track{seed}.json"));
        let out = d.join(format!("summary{seed}"));
        run_cli(&["detect", "--weights", s(&weights), "--manifest", s(&manifest), "--video-id", "lecture", "--out", s(&track)])?;
        run_cli(&["summarize", "--track", s(&track), "--out", s(&out)])?;

        let source = load_sequence(&manifest).map_err(|e| e.to_string())?;
        let (reduced, volumes) = prepare(&source, None, &cfg).map_err(|e| e.to_string())?;
        let loaded = slideloc_core::strnet::load_weights(&weights).map_err(|e| e.to_string())?;
        let t = predict(&loaded, &volumes, "lecture", &reduced, cfg.temporal_rate, 32).map_err(|e| e.to_string())?;
        let (_, _, m) = summarize(&t, &DecodeParams::default()).map_err(|e| e.to_string())?;
        let written = std::fs::read(out.join("summary.json")).map_err(|e| e.to_string())?;
        ensure(written == m.to_json().into_bytes(), || format!("corpus {seed}: summary differs"))?;
        keyframes += m.keyframes.len();
    }
    Ok(format!("10 corpora byte-identical ({keyframes} keyframes)"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_slideloc")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("numeric correctness", numeric),
        ("architecture conformance", architecture),
        ("persistence", persistence),
        ("pipeline algebra", pipeline_algebra),
        ("overfit check", overfit),
        ("end-to-end synthetic study", end_to_end),
        ("service properties", service_properties),
        ("cli determinism", cli_determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
