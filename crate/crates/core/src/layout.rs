//! Docking layout tree for view instances.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ids::InstanceId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    #[serde(alias = "horizontal")]
    H,
    #[serde(alias = "vertical")]
    V,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum LayoutNode {
    Split {
        orientation: Orientation,
        ratio: f64,
        children: Vec<LayoutNode>,
    },
    #[serde(rename_all = "camelCase")]
    Tabs { instance_ids: Vec<InstanceId> },
    #[serde(rename_all = "camelCase")]
    Leaf { instance_id: InstanceId },
}

impl LayoutNode {
    pub fn leaf(instance_id: InstanceId) -> Self {
        LayoutNode::Leaf { instance_id }
    }

    pub fn split(orientation: Orientation, ratio: f64, a: LayoutNode, b: LayoutNode) -> Self {
        LayoutNode::Split {
            orientation,
            ratio,
            children: vec![a, b],
        }
    }

    /// Instance ids in depth-first order.
    pub fn instance_ids(&self) -> Vec<InstanceId> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut Vec<InstanceId>) {
        match self {
            LayoutNode::Split { children, .. } => children.iter().for_each(|c| c.collect(out)),
            LayoutNode::Tabs { instance_ids } => out.extend(instance_ids),
            LayoutNode::Leaf { instance_id } => out.push(*instance_id),
        }
    }

    pub fn contains(&self, id: InstanceId) -> bool {
        self.instance_ids().contains(&id)
    }

    /// Checks the structural rules: splits have two children and a ratio in
    /// `[0, 1]`, tab sets are non-empty, and no instance appears twice.
    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        let ids = self.instance_ids();
        let mut seen = HashSet::new();
        for id in ids {
            if !seen.insert(id) {
                return Err(CoreError::Malformed(format!("instance {id} appears twice in the layout")));
            }
        }
        Ok(())
    }

    fn validate_shape(&self) -> Result<()> {
        match self {
            LayoutNode::Split { ratio, children, .. } => {
                if children.len() != 2 {
                    return Err(CoreError::Malformed("a split has exactly two children".into()));
                }
                if !(0.0..=1.0).contains(ratio) {
                    return Err(CoreError::Malformed(format!("split ratio {ratio} outside [0, 1]")));
                }
                children.iter().try_for_each(LayoutNode::validate_shape)
            }
            LayoutNode::Tabs { instance_ids } if instance_ids.is_empty() => {
                Err(CoreError::Malformed("empty tab set".into()))
            }
            _ => Ok(()),
        }
    }

    /// Removes `id`, collapsing splits that are left with one child.
    /// Returns `None` when nothing remains.
    pub fn without(self, id: InstanceId) -> Option<LayoutNode> {
        match self {
            LayoutNode::Leaf { instance_id } if instance_id == id => None,
            LayoutNode::Leaf { .. } => Some(self),
            LayoutNode::Tabs { mut instance_ids } => {
                instance_ids.retain(|&i| i != id);
                (!instance_ids.is_empty()).then_some(LayoutNode::Tabs { instance_ids })
            }
            LayoutNode::Split {
                orientation,
                ratio,
                children,
            } => {
                let mut kept: Vec<_> = children.into_iter().filter_map(|c| c.without(id)).collect();
                match kept.len() {
                    0 => None,
                    1 => kept.pop(),
                    _ => Some(LayoutNode::Split {
                        orientation,
                        ratio,
                        children: kept,
                    }),
                }
            }
        }
    }
}
