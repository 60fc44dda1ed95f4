//! Presets: named snapshots of an action tree, stored as JSON files under
//! `<dir>/<key>/<name>.json` where the key is usually the plugin id.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::serialize::{parse_document, ActionNode};
use super::{ActionChange, ActionKind, ActionManager};
use crate::error::{CoreError, Result};
use crate::ids::ActionId;

#[derive(Clone, Debug)]
pub struct PresetStore {
    dir: PathBuf,
}

impl PresetStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// `$VAULT_PRESET_DIR`, else `$HOME/.config/vault/presets`, else a
    /// directory under the system temp dir.
    pub fn default_location() -> Self {
        if let Some(dir) = std::env::var_os("VAULT_PRESET_DIR") {
            return Self::new(dir);
        }
        match std::env::var_os("HOME") {
            Some(home) => Self::new(Path::new(&home).join(".config/vault/presets")),
            None => Self::new(std::env::temp_dir().join("vault-presets")),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str, name: &str) -> Result<PathBuf> {
        let clean = |s: &str| {
            !s.is_empty() && !s.contains(['/', '\\']) && s != "." && s != ".."
        };
        if !clean(key) || !clean(name) {
            return Err(CoreError::InvalidParameter(format!("bad preset name `{key}/{name}`")));
        }
        Ok(self.dir.join(key).join(format!("{name}.json")))
    }

    pub fn save(&self, key: &str, name: &str, doc: &Value) -> Result<()> {
        let path = self.path(key, name)?;
        fs::create_dir_all(path.parent().unwrap())?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(doc)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(&self, key: &str, name: &str) -> Result<Value> {
        let path = self.path(key, name)?;
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CoreError::not_found("preset", format!("{key}/{name}")),
            _ => e.into(),
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        let mut names: Vec<String> = fs::read_dir(self.dir.join(key))
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| {
                let p = e.path();
                if p.extension()? != "json" {
                    return None;
                }
                Some(p.file_stem()?.to_string_lossy().into_owned())
            })
            .collect();
        names.sort();
        names
    }
}

impl ActionManager {
    /// Overwrites values and flags of the tree at `root` from a preset
    /// document. Structure is never changed: if names or kinds differ
    /// anywhere, nothing is applied.
    pub fn apply_document(&mut self, root: ActionId, doc: &Value) -> Result<Vec<ActionChange>> {
        let doc = parse_document(doc)?;
        let mut pairs = Vec::new();
        self.match_shape(root, &doc.root, &mut pairs)?;
        let mut changes = Vec::new();
        for (id, node) in pairs {
            if node.value.kind() != ActionKind::Trigger && node.value.kind() != ActionKind::Group {
                changes.extend(self.replace_value(id, node.value.clone())?);
            }
            changes.extend(self.set_flags(id, node.flags)?);
        }
        Ok(changes)
    }

    fn match_shape<'n>(
        &self,
        id: ActionId,
        node: &'n ActionNode,
        out: &mut Vec<(ActionId, &'n ActionNode)>,
    ) -> Result<()> {
        let a = self.get(id)?;
        if a.name != node.name || a.kind() != node.value.kind() {
            return Err(CoreError::PresetMismatch(format!(
                "`{}` ({}) vs `{}` ({})",
                a.name,
                a.kind(),
                node.name,
                node.value.kind()
            )));
        }
        if a.children.len() != node.children.len() {
            return Err(CoreError::PresetMismatch(format!(
                "`{}` has {} children, preset has {}",
                a.name,
                a.children.len(),
                node.children.len()
            )));
        }
        out.push((id, node));
        for (&c, n) in a.children.iter().zip(&node.children) {
            self.match_shape(c, n, out)?;
        }
        Ok(())
    }
}
