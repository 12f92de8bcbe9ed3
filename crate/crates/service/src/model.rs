use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use slideloc_core::summarizer::{Outline, SummaryManifest};

use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Selection,
    Organization,
    Integration,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Selection, Stage::Organization, Stage::Integration];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Undecided,
    Accepted,
    Rejected,
}

/// What an outline node points at. `Suggested` is the machine outline's
/// proposal for a keyframe the learner has not accepted yet; only
/// `Keyframe` counts as a reference and it always names an accepted one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeContent {
    Keyframe { keyframe: usize },
    Suggested { keyframe: usize },
    Heading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Machine,
    Learner,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlineNode {
    pub id: String,
    pub content: NodeContent,
    pub title: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub manifest: SummaryManifest,
    pub outline: Outline,
    /// Relative paths of the keyframe images, in keyframe order.
    pub keyframes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub video_id: String,
    pub stage: Stage,
    pub selections: Vec<Decision>,
    pub outline: Vec<OutlineNode>,
    pub summary_blocks: BTreeMap<String, String>,
    pub version: u64,
    pub next_node: u64,
    pub created_ms: u64,
    pub updated_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsEvent {
    pub session_id: String,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub kind: String,
    pub payload: Value,
}

/// Stored form of a session: state plus its event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDoc {
    pub session: Session,
    pub events: Vec<AnalyticsEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "args", rename_all = "snake_case")]
pub enum OutlineOp {
    AddNode {
        position: usize,
        #[serde(default)]
        keyframe: Option<usize>,
        #[serde(default)]
        title: Option<String>,
    },
    MoveNode {
        node: String,
        to: usize,
    },
    RenameNode {
        node: String,
        title: String,
    },
    RemoveNode {
        node: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryBlock {
    pub node: String,
    pub title: String,
    pub text: String,
}

/// Kind and payload of the event a mutation appends.
pub type Change = (&'static str, Value);

impl Session {
    pub fn new(id: String, video: &VideoRecord, now_ms: u64) -> Self {
        let outline: Vec<OutlineNode> = video
            .outline
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| OutlineNode {
                id: format!("n{}", i + 1),
                content: NodeContent::Suggested { keyframe: i },
                title: s.title.clone(),
                origin: Origin::Machine,
            })
            .collect();
        Self {
            id,
            video_id: video.id.clone(),
            stage: Stage::Selection,
            selections: vec![Decision::Undecided; video.manifest.keyframes.len()],
            next_node: outline.len() as u64 + 1,
            outline,
            summary_blocks: BTreeMap::new(),
            version: 1,
            created_ms: now_ms,
            updated_ms: now_ms,
        }
    }

    fn require(&self, stage: Stage) -> Result<(), ServiceError> {
        if self.stage == stage {
            Ok(())
        } else {
            Err(ServiceError::WrongStage {
                required: stage,
                actual: self.stage,
            })
        }
    }

    fn node_index(&self, node: &str) -> Result<usize, ServiceError> {
        self.outline
            .iter()
            .position(|n| n.id == node)
            .ok_or_else(|| ServiceError::NotFound(format!("outline node {node}")))
    }

    /// Records a decision and repairs the outline so that references only
    /// ever name accepted keyframes.
    pub fn select(&mut self, keyframe: usize, decision: Decision) -> Result<Change, ServiceError> {
        self.require(Stage::Selection)?;
        let slot = self
            .selections
            .get_mut(keyframe)
            .ok_or_else(|| ServiceError::Invalid(format!("keyframe {keyframe} does not exist")))?;
        *slot = decision;
        let mut changed = Vec::new();
        for n in &mut self.outline {
            let next = match (n.content, decision) {
                (NodeContent::Suggested { keyframe: k }, Decision::Accepted) if k == keyframe => NodeContent::Keyframe { keyframe: k },
                (NodeContent::Keyframe { keyframe: k }, Decision::Undecided) if k == keyframe => NodeContent::Suggested { keyframe: k },
                (NodeContent::Keyframe { keyframe: k } | NodeContent::Suggested { keyframe: k }, Decision::Rejected) if k == keyframe => {
                    NodeContent::Heading
                }
                _ => continue,
            };
            n.content = next;
            changed.push(n.id.clone());
        }
        let kind = match decision {
            Decision::Accepted => "keyframe_accepted",
            Decision::Rejected => "keyframe_rejected",
            Decision::Undecided => "keyframe_undecided",
        };
        Ok((kind, json!({ "keyframe": keyframe, "changed_nodes": changed })))
    }

    pub fn apply_outline(&mut self, op: &OutlineOp, video: &VideoRecord) -> Result<Change, ServiceError> {
        self.require(Stage::Organization)?;
        match op {
            OutlineOp::AddNode { position, keyframe, title } => {
                if *position > self.outline.len() {
                    return Err(ServiceError::Invalid(format!(
                        "position {position} is past the end of a {}-node outline",
                        self.outline.len()
                    )));
                }
                let content = match keyframe {
                    Some(k) => match self.selections.get(*k) {
                        Some(Decision::Accepted) => NodeContent::Keyframe { keyframe: *k },
                        Some(_) => return Err(ServiceError::Invalid(format!("keyframe {k} is not accepted"))),
                        None => return Err(ServiceError::Invalid(format!("keyframe {k} does not exist"))),
                    },
                    None => NodeContent::Heading,
                };
                let title = title.clone().unwrap_or_else(|| match keyframe {
                    Some(k) => video.outline.segments[*k].title.clone(),
                    None => "Heading".to_string(),
                });
                let id = format!("n{}", self.next_node);
                self.next_node += 1;
                self.outline.insert(
                    *position,
                    OutlineNode {
                        id: id.clone(),
                        content,
                        title,
                        origin: Origin::Learner,
                    },
                );
                Ok(("node_added", json!({ "node": id, "position": position, "keyframe": keyframe })))
            }
            OutlineOp::MoveNode { node, to } => {
                let from = self.node_index(node)?;
                if *to >= self.outline.len() {
                    return Err(ServiceError::Invalid(format!(
                        "position {to} is outside a {}-node outline",
                        self.outline.len()
                    )));
                }
                let n = self.outline.remove(from);
                self.outline.insert(*to, n);
                Ok(("node_moved", json!({ "node": node, "from": from, "to": to })))
            }
            OutlineOp::RenameNode { node, title } => {
                let i = self.node_index(node)?;
                self.outline[i].title = title.clone();
                Ok(("node_renamed", json!({ "node": node, "title": title })))
            }
            OutlineOp::RemoveNode { node } => {
                let i = self.node_index(node)?;
                self.outline.remove(i);
                self.summary_blocks.remove(node);
                Ok(("node_removed", json!({ "node": node, "position": i })))
            }
        }
    }

    pub fn set_block(&mut self, node: &str, text: &str) -> Result<Change, ServiceError> {
        self.require(Stage::Integration)?;
        self.node_index(node)?;
        if text.is_empty() {
            self.summary_blocks.remove(node);
        } else {
            self.summary_blocks.insert(node.to_string(), text.to_string());
        }
        Ok(("text_edited", json!({ "node": node, "length": text.chars().count() })))
    }

    pub fn set_stage(&mut self, stage: Stage) -> Change {
        let from = self.stage;
        self.stage = stage;
        ("stage_changed", json!({ "from": from, "to": stage }))
    }

    /// Summary blocks in outline order; nodes without text are skipped.
    pub fn summary_document(&self) -> Vec<SummaryBlock> {
        self.outline
            .iter()
            .filter_map(|n| {
                self.summary_blocks.get(&n.id).map(|text| SummaryBlock {
                    node: n.id.clone(),
                    title: n.title.clone(),
                    text: text.clone(),
                })
            })
            .collect()
    }

    /// Every `Keyframe` node names an accepted keyframe.
    pub fn references_valid(&self) -> bool {
        self.outline.iter().all(|n| match n.content {
            NodeContent::Keyframe { keyframe } => self.selections.get(keyframe) == Some(&Decision::Accepted),
            _ => true,
        })
    }
}
