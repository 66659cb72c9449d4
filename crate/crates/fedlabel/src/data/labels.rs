//! Activity labels and per-user label subsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type LabelId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityLabel {
    pub id: LabelId,
    pub name: String,
}

impl ActivityLabel {
    pub fn new(id: LabelId, name: impl Into<String>) -> Self {
        ActivityLabel { id, name: name.into() }
    }
}

/// Ordered set of label ids owned by one user. Order is significant: it
/// fixes the column order of every score matrix and soft-target matrix
/// built for that user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    members: Vec<LabelId>,
}

impl LabelSet {
    pub fn new(members: Vec<LabelId>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidInput("label set must be non-empty".into()));
        }
        for (i, l) in members.iter().enumerate() {
            if members[..i].contains(l) {
                return Err(Error::InvalidInput(format!("duplicate label id {l} in label set")));
            }
        }
        Ok(LabelSet { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: LabelId) -> bool {
        self.members.contains(&id)
    }

    /// Column index of a label within this set.
    pub fn position(&self, id: LabelId) -> Option<usize> {
        self.members.iter().position(|&m| m == id)
    }

    pub fn ids(&self) -> &[LabelId] {
        &self.members
    }

    pub fn iter(&self) -> impl Iterator<Item = LabelId> + '_ {
        self.members.iter().copied()
    }

    pub fn is_subset_of(&self, other: &LabelSet) -> bool {
        self.members.iter().all(|&m| other.contains(m))
    }
}
