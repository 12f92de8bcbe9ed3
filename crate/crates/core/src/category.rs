use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Class of a frame volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// Same slide, possibly with camera motion or speaker movement.
    Unchanged,
    /// Cut between the slide view and the speaker view.
    Switch,
    /// Real slide change.
    Transition,
}

impl Category {
    pub const COUNT: usize = 3;
    pub const ALL: [Category; 3] = [Category::Unchanged, Category::Switch, Category::Transition];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Unchanged => "unchanged",
            Category::Switch => "switch",
            Category::Transition => "transition",
        }
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax<T: PartialOrd + Copy>(probs: &[T]) -> Self {
        let mut best = 0;
        for (i, p) in probs.iter().enumerate().take(Self::COUNT) {
            if *p > probs[best] {
                best = i;
            }
        }
        Self::ALL[best]
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unchanged" | "U" => Ok(Category::Unchanged),
            "switch" | "S" => Ok(Category::Switch),
            "transition" | "T" => Ok(Category::Transition),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}
