#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use slideloc_core::ingest::{encode_pgm, Fps, Frame};
use slideloc_core::summarizer::{build_outline, Keyframe, SummaryManifest};
use slideloc_service::{Decision, NewVideo, OutlineOp, Service, ServiceError, Session, Stage};

/// `count` keyframes over segments of ten frames each.
pub fn video(count: usize) -> NewVideo {
    let manifest = SummaryManifest {
        video_id: "lecture".into(),
        fps: Fps::integer(1),
        keyframes: (0..count)
            .map(|i| Keyframe {
                frame: 10 * i + 2,
                time_s: (10 * i + 2) as f64,
                confidence: 0.9,
                segment: [10 * i, 10 * i + 10],
            })
            .collect(),
    };
    let outline = build_outline(&manifest).unwrap();
    NewVideo {
        manifest,
        outline,
        images: (0..count).map(|i| encode_pgm(&Frame::filled(4, 3, 40 * i as u8))).collect(),
    }
}

#[derive(Debug, Clone)]
pub enum Action {
    Select(usize, Decision),
    Outline(OutlineOp),
    Block(String, String),
    Stage(Stage),
    Record,
}

impl Action {
    fn required_stage(&self) -> Option<Stage> {
        match self {
            Action::Select(..) => Some(Stage::Selection),
            Action::Outline(_) => Some(Stage::Organization),
            Action::Block(..) => Some(Stage::Integration),
            Action::Stage(_) | Action::Record => None,
        }
    }
}

fn pick_node(rng: &mut SplitMix64, s: &Session) -> String {
    if s.outline.is_empty() || rng.random_bool(0.1) {
        "n999".into()
    } else {
        s.outline[rng.random_range(0..s.outline.len())].id.clone()
    }
}

pub fn random_action(rng: &mut SplitMix64, s: &Session) -> Action {
    let decisions = [Decision::Accepted, Decision::Rejected, Decision::Undecided];
    let len = s.outline.len();
    match rng.random_range(0..10) {
        0 | 1 => Action::Select(rng.random_range(0..=s.selections.len()), decisions[rng.random_range(0..3)]),
        2 | 3 => Action::Outline(match rng.random_range(0..4) {
            0 => OutlineOp::AddNode {
                position: rng.random_range(0..=len + 1),
                keyframe: rng.random_bool(0.6).then(|| rng.random_range(0..=s.selections.len())),
                title: rng.random_bool(0.5).then(|| "Heading".to_string()),
            },
            1 => OutlineOp::MoveNode {
                node: pick_node(rng, s),
                to: rng.random_range(0..=len),
            },
            2 => OutlineOp::RenameNode {
                node: pick_node(rng, s),
                title: format!("t{}", rng.random_range(0..100)),
            },
            _ => OutlineOp::RemoveNode { node: pick_node(rng, s) },
        }),
        4 | 5 => {
            let text = if rng.random_bool(0.3) { String::new() } else { format!("notes {}", rng.random_range(0..100)) };
            Action::Block(pick_node(rng, s), text)
        }
        6 | 7 => Action::Stage(Stage::ALL[rng.random_range(0..3)]),
        _ => Action::Record,
    }
}

pub fn apply(svc: &Service, id: &str, action: &Action, version: u64) -> Result<Session, ServiceError> {
    match action {
        Action::Select(k, d) => svc.apply_selection(id, *k, *d, version),
        Action::Outline(op) => svc.apply_outline_op(id, op, version),
        Action::Block(n, t) => svc.set_summary_block(id, n, t, version),
        Action::Stage(st) => svc.set_stage(id, *st, version),
        Action::Record => svc
            .record_event(id, "clip_reviewed", serde_json::json!({ "keyframe": 0 }))
            .and_then(|_| svc.session(id)),
    }
}

/// Node order after replaying one successful action on a plain list.
fn replay(order: &mut Vec<String>, action: &Action, before: &Session, after: &Session) {
    if let Action::Outline(op) = action {
        match op {
            OutlineOp::AddNode { position, .. } => {
                let new = after
                    .outline
                    .iter()
                    .find(|n| !before.outline.iter().any(|b| b.id == n.id))
                    .expect("added node")
                    .id
                    .clone();
                order.insert(*position, new);
            }
            OutlineOp::MoveNode { node, to } => {
                let from = order.iter().position(|n| n == node).unwrap();
                let n = order.remove(from);
                order.insert(*to, n);
            }
            OutlineOp::RemoveNode { node } => order.retain(|n| n != node),
            OutlineOp::RenameNode { .. } => {}
        }
    }
}

#[derive(Debug, Default)]
pub struct Audit {
    pub sequences: usize,
    pub actions: usize,
    pub successes: usize,
}

/// Runs `sequences` random action sequences of `len` steps on fresh
/// sessions and checks every invariant after every step.
pub fn random_sequences(svc: &Service, sequences: usize, len: usize, seed: u64) -> Result<Audit, String> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let videos: Vec<String> = (1..=4).map(|k| svc.register_video(video(k)).unwrap()).collect();
    let mut audit = Audit::default();
    for seq in 0..sequences {
        let vid = &videos[seq % videos.len()];
        let mut s = svc.create_session(vid).map_err(|e| e.to_string())?;
        let fail = |m: String| Err(format!("sequence {seq}: {m}"));
        if s.stage != Stage::Selection || s.version != 1 || s.outline.len() != seq % videos.len() + 1 {
            return fail(format!("bad new session {s:?}"));
        }
        let mut order: Vec<String> = s.outline.iter().map(|n| n.id.clone()).collect();
        let mut event_count = 0u64;
        for step in 0..len {
            let action = random_action(&mut rng, &s);
            let version = match rng.random_range(0..20) {
                0 if s.version > 1 => s.version - 1,
                1 => s.version + 1,
                _ => s.version,
            };
            let stale = version != s.version;
            let versioned = !matches!(action, Action::Record);
            let result = apply(svc, &s.id, &action, version);
            audit.actions += 1;
            let now = svc.session(&s.id).map_err(|e| e.to_string())?;
            let events = svc.list_events(&s.id).map_err(|e| e.to_string())?;
            match &result {
                Ok(returned) => {
                    audit.successes += 1;
                    event_count += 1;
                    if returned != &now {
                        return fail(format!("step {step}: returned state differs from stored"));
                    }
                    if versioned && stale {
                        return fail(format!("step {step}: stale version accepted"));
                    }
                    if let Some(req) = action.required_stage() {
                        if s.stage != req {
                            return fail(format!("step {step}: {action:?} succeeded in {:?}", s.stage));
                        }
                    }
                    let want = if versioned { s.version + 1 } else { s.version };
                    if now.version != want {
                        return fail(format!("step {step}: version {} after {}", now.version, s.version));
                    }
                    replay(&mut order, &action, &s, &now);
                }
                Err(e) => {
                    if now != s {
                        return fail(format!("step {step}: failed {action:?} ({e}) changed state"));
                    }
                    let expected_kind = if versioned && stale {
                        matches!(e, ServiceError::VersionConflict { .. })
                    } else if action.required_stage().is_some_and(|r| r != s.stage) {
                        matches!(e, ServiceError::WrongStage { .. })
                    } else {
                        matches!(e, ServiceError::Invalid(_) | ServiceError::NotFound(_))
                    };
                    if !expected_kind {
                        return fail(format!("step {step}: {action:?} failed with {e:?}"));
                    }
                }
            }
            if events.len() as u64 != event_count || events.iter().enumerate().any(|(i, e)| e.seq != i as u64 + 1) {
                return fail(format!("step {step}: event log not contiguous"));
            }
            if !now.references_valid() {
                return fail(format!("step {step}: outline references a non-accepted keyframe"));
            }
            let ids: Vec<&String> = now.outline.iter().map(|n| &n.id).collect();
            if ids != order.iter().collect::<Vec<_>>() {
                return fail(format!("step {step}: outline order {ids:?}, list oracle {order:?}"));
            }
            if now.summary_blocks.keys().any(|k| !order.contains(k)) {
                return fail(format!("step {step}: summary block for a removed node"));
            }
            s = now;
        }
        audit.sequences += 1;
    }
    Ok(audit)
}
