//! JSON form of action trees.
//!
//! ```json
//! { "formatVersion": 1,
//!   "root": { "name": "Settings", "kind": "Group", "flags": {..}, "link": null,
//!             "children": [ { "name": "Sigma", "kind": "Decimal",
//!                             "value": { "value": 0.15, "min": 0.0, .. }, .. } ] } }
//! ```
//!
//! Identifiers are not part of the document; links are stored by public name.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ActionKind, ActionManager, ActionSpec, ActionValue, PermissionFlags};
use crate::error::{CoreError, Result};
use crate::ids::{ActionId, InstanceId};

pub const FORMAT_VERSION: u32 = 1;

/// Identifier-free snapshot of an action tree. Two trees are value-equal
/// when their nodes compare equal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionNode {
    pub name: String,
    #[serde(flatten)]
    pub value: ActionValue,
    pub flags: PermissionFlags,
    #[serde(default)]
    pub link: Option<String>,
    #[serde(default)]
    pub children: Vec<ActionNode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActionDocument {
    pub format_version: u32,
    pub root: ActionNode,
}

/// Result of rebuilding a tree from a document.
#[derive(Clone, Debug)]
pub struct Restored {
    pub root: ActionId,
    /// Links that could not be re-established, one message each.
    pub warnings: Vec<String>,
}

impl ActionManager {
    pub fn to_node(&self, root: ActionId) -> Result<ActionNode> {
        let a = self.get(root)?;
        Ok(ActionNode {
            name: a.name.clone(),
            value: a.value.clone(),
            flags: a.flags,
            link: a.link.clone(),
            children: a
                .children
                .iter()
                .map(|&c| self.to_node(c))
                .collect::<Result<_>>()?,
        })
    }

    pub fn serialize_tree(&self, root: ActionId) -> Result<Value> {
        let doc = ActionDocument {
            format_version: FORMAT_VERSION,
            root: self.to_node(root)?,
        };
        Ok(serde_json::to_value(doc)?)
    }

    /// Rebuilds a tree. Links to pool entries that exist (with a matching
    /// kind) are restored, adopting the pool value; others are dropped and
    /// reported in [`Restored::warnings`].
    pub fn deserialize_tree(&mut self, doc: &Value, owner: Option<InstanceId>) -> Result<Restored> {
        let doc = parse_document(doc)?;
        self.restore_node(doc.root, owner)
    }

    pub(crate) fn restore_node(&mut self, node: ActionNode, owner: Option<InstanceId>) -> Result<Restored> {
        let mut links = Vec::new();
        let spec = to_spec(node, &mut Vec::new(), &mut links);
        let root = self.create_owned(spec, owner)?;
        let mut warnings = Vec::new();
        for (path, public_name) in links {
            let id = self.find_index_path(root, &path)?;
            let ok = match self.pool.get(&public_name) {
                Some(entry) if entry.kind() == self.get(id)?.kind() => {
                    self.connect_unchecked(id, &public_name)?;
                    true
                }
                _ => false,
            };
            if !ok {
                warnings.push(format!(
                    "`{}` could not be linked to `{public_name}`",
                    self.get(id)?.name
                ));
            }
        }
        Ok(Restored { root, warnings })
    }

    fn find_index_path(&self, root: ActionId, path: &[usize]) -> Result<ActionId> {
        path.iter()
            .try_fold(root, |cur, &i| {
                self.get(cur)?
                    .children
                    .get(i)
                    .copied()
                    .ok_or_else(|| CoreError::Malformed("bad child index".into()))
            })
    }
}

fn to_spec(node: ActionNode, path: &mut Vec<usize>, links: &mut Vec<(Vec<usize>, String)>) -> ActionSpec {
    if let Some(l) = node.link {
        links.push((path.clone(), l));
    }
    let children = node
        .children
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            path.push(i);
            let s = to_spec(c, path, links);
            path.pop();
            s
        })
        .collect();
    ActionSpec {
        name: node.name,
        value: node.value,
        flags: node.flags,
        children,
    }
}

/// Validates and decodes an action document, reporting unknown kinds by
/// name.
pub fn parse_document(doc: &Value) -> Result<ActionDocument> {
    let version = doc
        .get("formatVersion")
        .and_then(Value::as_u64)
        .ok_or_else(|| CoreError::Malformed("missing formatVersion".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(CoreError::Malformed(format!("unsupported formatVersion {version}")));
    }
    let root = doc
        .get("root")
        .ok_or_else(|| CoreError::Malformed("missing root".into()))?;
    check_kinds(root)?;
    let doc: ActionDocument =
        serde_json::from_value(doc.clone()).map_err(|e| CoreError::Malformed(e.to_string()))?;
    check_node(&doc.root)?;
    Ok(doc)
}

fn check_kinds(node: &Value) -> Result<()> {
    let kind = node
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| CoreError::Malformed("node without kind".into()))?;
    kind.parse::<ActionKind>()?;
    if let Some(children) = node.get("children") {
        let children = children
            .as_array()
            .ok_or_else(|| CoreError::Malformed("children must be an array".into()))?;
        children.iter().try_for_each(check_kinds)?;
    }
    Ok(())
}

fn check_node(node: &ActionNode) -> Result<()> {
    node.value.validate()?;
    if node.value.kind() != ActionKind::Group && !node.children.is_empty() {
        return Err(CoreError::Malformed(format!("`{}`: only groups have children", node.name)));
    }
    node.children.iter().try_for_each(check_node)
}
