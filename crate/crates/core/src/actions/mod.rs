//! Actions: typed, serializable parameters that double as GUI building
//! blocks, the unit of cross-plugin parameter linking, and the content of
//! presets and workspaces.
//!
//! An action can be *published* into the public pool under a unique name and
//! other actions of the same kind can *connect* to that entry. From then on a
//! change to any linked action is copied to the pool and to every other
//! subscriber within the same call, so no observer ever sees a half-updated
//! link.

mod preset;
mod serialize;
mod value;

use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use preset::PresetStore;
pub use serialize::{parse_document, ActionDocument, ActionNode, Restored, FORMAT_VERSION};
pub use value::{ActionKind, ActionValue, ValueUpdate};

use crate::error::{CoreError, Result};
use crate::ids::{ActionId, InstanceId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PermissionFlags {
    pub enabled: bool,
    pub visible: bool,
    pub may_publish: bool,
    pub may_connect: bool,
    pub may_disconnect: bool,
}

impl Default for PermissionFlags {
    fn default() -> Self {
        Self {
            enabled: true,
            visible: true,
            may_publish: true,
            may_connect: true,
            may_disconnect: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub id: ActionId,
    pub name: String,
    pub value: ActionValue,
    pub flags: PermissionFlags,
    pub children: Vec<ActionId>,
    /// Public name of the pool entry this action is linked to.
    pub link: Option<String>,
    pub owner: Option<InstanceId>,
    pub parent: Option<ActionId>,
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        self.value.kind()
    }
}

/// Declarative description of an action tree, used to create actions.
#[derive(Clone, Debug)]
pub struct ActionSpec {
    pub name: String,
    pub value: ActionValue,
    pub flags: PermissionFlags,
    pub children: Vec<ActionSpec>,
}

impl ActionSpec {
    pub fn new(name: impl Into<String>, value: ActionValue) -> Self {
        Self {
            name: name.into(),
            value,
            flags: PermissionFlags::default(),
            children: Vec::new(),
        }
    }

    pub fn group(name: impl Into<String>, children: Vec<ActionSpec>) -> Self {
        Self {
            children,
            ..Self::new(name, ActionValue::Group)
        }
    }

    pub fn with_flags(mut self, flags: PermissionFlags) -> Self {
        self.flags = flags;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub public_name: String,
    pub value: ActionValue,
    pub subscribers: Vec<ActionId>,
}

impl PoolEntry {
    pub fn kind(&self) -> ActionKind {
        self.value.kind()
    }
}

/// What an action operation changed. `via_link` marks updates that arrived
/// through a pool link rather than from the caller.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ActionChange {
    Value { action: ActionId, via_link: bool },
    Fired { action: ActionId, via_link: bool },
    Pool { public_name: String },
    Link { action: ActionId },
    Flags { action: ActionId },
}

impl ActionChange {
    pub fn action(&self) -> Option<ActionId> {
        match self {
            ActionChange::Value { action, .. }
            | ActionChange::Fired { action, .. }
            | ActionChange::Link { action }
            | ActionChange::Flags { action } => Some(*action),
            ActionChange::Pool { .. } => None,
        }
    }
}

#[derive(Default)]
pub struct ActionManager {
    actions: HashMap<ActionId, Action>,
    pool: IndexMap<String, PoolEntry>,
}

impl ActionManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ActionId) -> Result<&Action> {
        self.actions
            .get(&id)
            .ok_or_else(|| CoreError::not_found("action", id))
    }

    fn get_mut(&mut self, id: ActionId) -> Result<&mut Action> {
        self.actions
            .get_mut(&id)
            .ok_or_else(|| CoreError::not_found("action", id))
    }

    pub fn contains(&self, id: ActionId) -> bool {
        self.actions.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn value(&self, id: ActionId) -> Result<&ActionValue> {
        Ok(&self.get(id)?.value)
    }

    /// Creates the action tree described by `spec` and returns its root.
    pub fn create(&mut self, spec: ActionSpec) -> Result<ActionId> {
        self.create_owned(spec, None)
    }

    pub fn create_owned(&mut self, spec: ActionSpec, owner: Option<InstanceId>) -> Result<ActionId> {
        validate_spec(&spec)?;
        Ok(self.insert_tree(spec, owner, None))
    }

    fn insert_tree(
        &mut self,
        spec: ActionSpec,
        owner: Option<InstanceId>,
        parent: Option<ActionId>,
    ) -> ActionId {
        let id = loop {
            let id = ActionId::random();
            if !self.actions.contains_key(&id) {
                break id;
            }
        };
        let value = spec.value.normalized();
        self.actions.insert(
            id,
            Action {
                id,
                name: spec.name,
                value,
                flags: spec.flags,
                children: Vec::new(),
                link: None,
                owner,
                parent,
            },
        );
        let children: Vec<ActionId> = spec
            .children
            .into_iter()
            .map(|c| self.insert_tree(c, owner, Some(id)))
            .collect();
        self.actions.get_mut(&id).unwrap().children = children;
        id
    }

    /// Attaches an existing parentless action tree under a group.
    pub fn add_child(&mut self, group: ActionId, child: ActionId) -> Result<()> {
        if self.get(group)?.kind() != ActionKind::Group {
            return Err(CoreError::InvalidAction("children require a group".into()));
        }
        if self.get(child)?.parent.is_some() {
            return Err(CoreError::InvalidAction("action already has a parent".into()));
        }
        // refuse cycles: group must not live inside child
        let mut cur = Some(group);
        while let Some(c) = cur {
            if c == child {
                return Err(CoreError::InvalidAction("cycle in action tree".into()));
            }
            cur = self.get(c)?.parent;
        }
        self.get_mut(child)?.parent = Some(group);
        self.get_mut(group)?.children.push(child);
        Ok(())
    }

    /// Finds a direct child by name.
    pub fn child(&self, group: ActionId, name: &str) -> Result<ActionId> {
        self.get(group)?
            .children
            .iter()
            .copied()
            .find(|&c| self.actions[&c].name == name)
            .ok_or_else(|| CoreError::not_found("action", format!("{name}")))
    }

    /// Resolves a `/`-separated path of names below `root`.
    pub fn find_path(&self, root: ActionId, path: &str) -> Result<ActionId> {
        path.split('/')
            .filter(|s| !s.is_empty())
            .try_fold(root, |cur, name| self.child(cur, name))
    }

    /// Ids of the tree rooted at `root` in depth-first pre-order.
    pub fn tree_ids(&self, root: ActionId) -> Result<Vec<ActionId>> {
        let mut out = Vec::new();
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            let a = self.get(id)?;
            out.push(id);
            stack.extend(a.children.iter().rev().copied());
        }
        Ok(out)
    }

    /// Sets a value: numeric values are clamped, other kinds validated. When
    /// the action is linked, the pool entry and every other subscriber are
    /// updated too. Setting an unchanged value reports nothing.
    pub fn set_value(&mut self, id: ActionId, update: ValueUpdate) -> Result<Vec<ActionChange>> {
        let action = self.get(id)?;
        if matches!(update, ValueUpdate::Trigger) {
            if action.kind() != ActionKind::Trigger {
                return Err(CoreError::KindMismatch {
                    expected: action.kind().to_string(),
                    found: ActionKind::Trigger.to_string(),
                });
            }
            let mut changes = vec![ActionChange::Fired {
                action: id,
                via_link: false,
            }];
            if let Some(entry) = action.link.as_ref().and_then(|l| self.pool.get(l)) {
                changes.extend(entry.subscribers.iter().filter(|&&p| p != id).map(|&p| {
                    ActionChange::Fired {
                        action: p,
                        via_link: true,
                    }
                }));
            }
            return Ok(changes);
        }
        let new_value = action.value.apply(update)?;
        Ok(self.store_value(id, new_value))
    }

    /// Replaces the whole kind payload (ranges, choices included).
    pub fn replace_value(&mut self, id: ActionId, value: ActionValue) -> Result<Vec<ActionChange>> {
        let action = self.get(id)?;
        if action.kind() != value.kind() {
            return Err(CoreError::KindMismatch {
                expected: action.kind().to_string(),
                found: value.kind().to_string(),
            });
        }
        value.validate()?;
        Ok(self.store_value(id, value.normalized()))
    }

    fn store_value(&mut self, id: ActionId, value: ActionValue) -> Vec<ActionChange> {
        let action = self.actions.get_mut(&id).expect("checked by caller");
        if action.value == value {
            return Vec::new();
        }
        action.value = value.clone();
        let mut changes = vec![ActionChange::Value {
            action: id,
            via_link: false,
        }];
        let Some(link) = action.link.clone() else {
            return changes;
        };
        let Some(entry) = self.pool.get_mut(&link) else {
            return changes;
        };
        entry.value = value.clone();
        changes.push(ActionChange::Pool {
            public_name: link.clone(),
        });
        for peer in entry.subscribers.clone() {
            if peer == id {
                continue;
            }
            if let Some(p) = self.actions.get_mut(&peer) {
                if p.value != value {
                    p.value = value.clone();
                    changes.push(ActionChange::Value {
                        action: peer,
                        via_link: true,
                    });
                }
            }
        }
        changes
    }

    pub fn set_flags(&mut self, id: ActionId, flags: PermissionFlags) -> Result<Vec<ActionChange>> {
        let a = self.get_mut(id)?;
        if a.flags == flags {
            return Ok(Vec::new());
        }
        a.flags = flags;
        Ok(vec![ActionChange::Flags { action: id }])
    }

    pub fn pool(&self) -> impl Iterator<Item = &PoolEntry> {
        self.pool.values()
    }

    pub fn pool_entry(&self, public_name: &str) -> Result<&PoolEntry> {
        self.pool
            .get(public_name)
            .ok_or_else(|| CoreError::not_found("public action", public_name))
    }

    /// Moves a copy of the action's value into the pool under `public_name`
    /// and links the action to it.
    pub fn publish(&mut self, id: ActionId, public_name: &str) -> Result<Vec<ActionChange>> {
        let action = self.get(id)?;
        if !action.flags.may_publish {
            return Err(CoreError::PermissionDenied(format!(
                "`{}` may not be published",
                action.name
            )));
        }
        if action.kind() == ActionKind::Group {
            return Err(CoreError::InvalidAction("groups cannot be published".into()));
        }
        if public_name.is_empty() {
            return Err(CoreError::InvalidAction("public name must not be empty".into()));
        }
        if self.pool.contains_key(public_name) {
            return Err(CoreError::NameCollision(public_name.to_string()));
        }
        if action.link.is_some() {
            return Err(CoreError::InvalidAction(format!(
                "`{}` is already linked",
                action.name
            )));
        }
        let value = action.value.clone();
        self.pool.insert(
            public_name.to_string(),
            PoolEntry {
                public_name: public_name.to_string(),
                value,
                subscribers: vec![id],
            },
        );
        self.get_mut(id)?.link = Some(public_name.to_string());
        Ok(vec![
            ActionChange::Pool {
                public_name: public_name.to_string(),
            },
            ActionChange::Link { action: id },
        ])
    }

    /// Creates a pool entry without a publishing action (used when
    /// restoring workspaces).
    pub fn insert_pool_entry(&mut self, public_name: &str, value: ActionValue) -> Result<()> {
        if self.pool.contains_key(public_name) {
            return Err(CoreError::NameCollision(public_name.to_string()));
        }
        value.validate()?;
        self.pool.insert(
            public_name.to_string(),
            PoolEntry {
                public_name: public_name.to_string(),
                value: value.normalized(),
                subscribers: Vec::new(),
            },
        );
        Ok(())
    }

    /// Links the action to a pool entry; the action adopts the pool value.
    pub fn connect(&mut self, id: ActionId, public_name: &str) -> Result<Vec<ActionChange>> {
        let action = self.get(id)?;
        if !action.flags.may_connect {
            return Err(CoreError::PermissionDenied(format!(
                "`{}` may not be connected",
                action.name
            )));
        }
        self.connect_unchecked(id, public_name)
    }

    fn connect_unchecked(&mut self, id: ActionId, public_name: &str) -> Result<Vec<ActionChange>> {
        let action = self.get(id)?;
        let entry = self.pool_entry(public_name)?;
        if entry.kind() != action.kind() {
            return Err(CoreError::KindMismatch {
                expected: action.kind().to_string(),
                found: entry.kind().to_string(),
            });
        }
        if action.link.as_deref() == Some(public_name) {
            return Ok(Vec::new());
        }
        let pool_value = entry.value.clone();
        if action.link.is_some() {
            self.unlink(id);
        }
        let mut changes = Vec::new();
        let a = self.actions.get_mut(&id).unwrap();
        a.link = Some(public_name.to_string());
        if a.value != pool_value {
            a.value = pool_value;
            changes.push(ActionChange::Value {
                action: id,
                via_link: true,
            });
        }
        self.pool
            .get_mut(public_name)
            .unwrap()
            .subscribers
            .push(id);
        changes.push(ActionChange::Link { action: id });
        Ok(changes)
    }

    /// Severs the link; the action keeps its last value.
    pub fn disconnect(&mut self, id: ActionId) -> Result<Vec<ActionChange>> {
        let action = self.get(id)?;
        if action.link.is_none() {
            return Err(CoreError::InvalidAction(format!("`{}` is not linked", action.name)));
        }
        if !action.flags.may_disconnect {
            return Err(CoreError::PermissionDenied(format!(
                "`{}` may not be disconnected",
                action.name
            )));
        }
        self.unlink(id);
        Ok(vec![ActionChange::Link { action: id }])
    }

    fn unlink(&mut self, id: ActionId) {
        let Some(a) = self.actions.get_mut(&id) else { return };
        if let Some(link) = a.link.take() {
            if let Some(entry) = self.pool.get_mut(&link) {
                entry.subscribers.retain(|&s| s != id);
            }
        }
    }

    /// Deletes a pool entry, unlinking its subscribers.
    pub fn unpublish(&mut self, public_name: &str) -> Result<()> {
        let entry = self
            .pool
            .shift_remove(public_name)
            .ok_or_else(|| CoreError::not_found("public action", public_name))?;
        for s in entry.subscribers {
            if let Some(a) = self.actions.get_mut(&s) {
                a.link = None;
            }
        }
        Ok(())
    }

    pub fn clear_pool(&mut self) {
        let names: Vec<String> = self.pool.keys().cloned().collect();
        for n in names {
            let _ = self.unpublish(&n);
        }
    }

    /// Removes the tree rooted at `root`, disconnecting linked members
    /// regardless of their flags. Pool entries stay published.
    pub fn remove_tree(&mut self, root: ActionId) -> Result<Vec<ActionId>> {
        let ids = self.tree_ids(root)?;
        if let Some(parent) = self.get(root)?.parent {
            if let Some(p) = self.actions.get_mut(&parent) {
                p.children.retain(|&c| c != root);
            }
        }
        for &id in &ids {
            self.unlink(id);
            self.actions.remove(&id);
        }
        Ok(ids)
    }

    pub fn roots_owned_by(&self, owner: InstanceId) -> Vec<ActionId> {
        self.actions
            .values()
            .filter(|a| a.owner == Some(owner) && a.parent.is_none())
            .map(|a| a.id)
            .collect()
    }

    /// The action trees' root for `id`.
    pub fn root_of(&self, id: ActionId) -> Result<ActionId> {
        let mut cur = id;
        while let Some(p) = self.get(cur)?.parent {
            cur = p;
        }
        Ok(cur)
    }

    /// `/`-separated names from `root` (exclusive) down to `id`.
    pub fn path_from(&self, root: ActionId, id: ActionId) -> Result<String> {
        let mut names = Vec::new();
        let mut cur = id;
        while cur != root {
            let a = self.get(cur)?;
            names.push(a.name.clone());
            cur = a.parent.ok_or_else(|| {
                CoreError::InvalidAction("action is not below the given root".into())
            })?;
        }
        names.reverse();
        Ok(names.join("/"))
    }
}

fn validate_spec(spec: &ActionSpec) -> Result<()> {
    spec.value.validate()?;
    if spec.value.kind() != ActionKind::Group && !spec.children.is_empty() {
        return Err(CoreError::InvalidAction(format!(
            "`{}`: only groups have children",
            spec.name
        )));
    }
    spec.children.iter().try_for_each(validate_spec)
}
