//! Request handling shared by the WebSocket server and the CLI.
//!
//! [`dispatch`] runs on the core context and either answers right away or
//! asks the caller to wait until a plugin instance goes idle
//! ([`Outcome::Await`]). The server parks such requests; [`Session`] simply
//! blocks.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Map, Value};
use vault_core::actions::{Action, ActionValue, PermissionFlags, ValueUpdate};
use vault_core::core::{Core, Notice};
use vault_core::data::DatasetRecord;
use vault_core::error::CoreError;
use vault_core::events::{CoreEvent, EventFilter};
use vault_core::ids::{ActionId, DatasetId, InstanceId};
use vault_core::layout::LayoutNode;
use vault_core::payload::{PayloadKind, RawPayload};
use vault_core::plugins;
use vault_core::project;
use vault_core::registry::{Control, InstanceInfo, InstanceState, PluginKind};

use crate::protocol::WireMessage;

/// Default limit for requests that wait on a plugin instance.
pub const DEFAULT_WAIT: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError(pub String);

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ApiError {}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        ApiError(e.to_string())
    }
}

impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        ApiError(format!("malformed payload: {e}"))
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

fn bad(msg: impl Into<String>) -> ApiError {
    ApiError(msg.into())
}

/// Point values that accompany a reply as binary frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Bulk {
    pub values: Vec<f32>,
    pub dim_major: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub payload: Value,
    pub data: Option<Bulk>,
}

impl Reply {
    fn json(payload: Value) -> Self {
        Self { payload, data: None }
    }
}

pub type Continuation = Box<dyn FnOnce(&mut Core) -> ApiResult<Reply> + Send>;

pub enum Outcome {
    Done(Reply),
    /// Answer once `instance` is neither running nor paused, by calling
    /// `then`. If the instance disappears, the request fails.
    Await {
        instance: InstanceId,
        timeout: Duration,
        then: Continuation,
    },
}

impl From<Reply> for Outcome {
    fn from(r: Reply) -> Self {
        Outcome::Done(r)
    }
}

// ---- payload access ----------------------------------------------------------

fn field<'a>(p: &'a Value, name: &str) -> ApiResult<&'a Value> {
    p.get(name).filter(|v| !v.is_null()).ok_or_else(|| bad(format!("missing `{name}`")))
}

fn str_field<'a>(p: &'a Value, name: &str) -> ApiResult<&'a str> {
    field(p, name)?.as_str().ok_or_else(|| bad(format!("`{name}` must be a string")))
}

fn opt_str<'a>(p: &'a Value, name: &str) -> ApiResult<Option<&'a str>> {
    match p.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v.as_str().map(Some).ok_or_else(|| bad(format!("`{name}` must be a string"))),
    }
}

fn opt_bool(p: &Value, name: &str, default: bool) -> ApiResult<bool> {
    match p.get(name) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v.as_bool().ok_or_else(|| bad(format!("`{name}` must be a boolean"))),
    }
}

fn opt_u64(p: &Value, name: &str) -> ApiResult<Option<u64>> {
    match p.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v.as_u64().map(Some).ok_or_else(|| bad(format!("`{name}` must be a non-negative integer"))),
    }
}

fn index_list(v: &Value, name: &str) -> ApiResult<Vec<usize>> {
    v.as_array()
        .ok_or_else(|| bad(format!("`{name}` must be an array")))?
        .iter()
        .map(|x| {
            x.as_u64()
                .map(|i| i as usize)
                .ok_or_else(|| bad(format!("`{name}` holds a non-index value")))
        })
        .collect()
}

fn path_field(p: &Value, name: &str) -> ApiResult<PathBuf> {
    Ok(PathBuf::from(str_field(p, name)?))
}

/// A dataset reference is a GUID or an exact dataset name.
pub fn resolve_dataset(core: &Core, reference: &str) -> ApiResult<DatasetId> {
    if let Ok(id) = reference.parse::<DatasetId>() {
        if core.data().contains(id) {
            return Ok(id);
        }
    }
    core.data()
        .find_by_name(reference)
        .map(|r| r.id)
        .ok_or_else(|| bad(format!("unknown dataset `{reference}`")))
}

fn dataset_field(core: &Core, p: &Value, name: &str) -> ApiResult<DatasetId> {
    resolve_dataset(core, str_field(p, name)?)
}

fn dataset_list(core: &Core, p: &Value, name: &str) -> ApiResult<Vec<DatasetId>> {
    match p.get(name) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::String(s)) => Ok(vec![resolve_dataset(core, s)?]),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .ok_or_else(|| bad(format!("`{name}` holds a non-string")))
                    .and_then(|s| resolve_dataset(core, s))
            })
            .collect(),
        Some(_) => Err(bad(format!("`{name}` must be a string or an array"))),
    }
}

fn instance_field(core: &Core, p: &Value) -> ApiResult<InstanceId> {
    let text = str_field(p, "instance")?;
    let id = text.parse::<InstanceId>()?;
    core.plugins().instance(id)?;
    Ok(id)
}

fn normalize_name(s: &str) -> String {
    s.chars().filter(char::is_ascii_alphanumeric).map(|c| c.to_ascii_lowercase()).collect()
}

/// Finds a setting below `root` by `/`-path or by a loose name: case,
/// spaces and punctuation are ignored, so `updateEvery` finds
/// "Update every".
pub fn find_setting(core: &Core, root: ActionId, name: &str) -> ApiResult<ActionId> {
    let actions = core.actions();
    if let Ok(id) = actions.find_path(root, name) {
        return Ok(id);
    }
    let want = normalize_name(name);
    actions
        .tree_ids(root)?
        .into_iter()
        .skip(1)
        .find(|&id| actions.get(id).is_ok_and(|a| normalize_name(&a.name) == want))
        .ok_or_else(|| bad(format!("no setting named `{name}`")))
}

/// `{action}` by id, or `{instance, name}`.
fn action_target(core: &Core, p: &Value) -> ApiResult<ActionId> {
    if let Some(text) = opt_str(p, "action")? {
        let id = text.parse::<ActionId>()?;
        core.actions().get(id)?;
        return Ok(id);
    }
    let instance = instance_field(core, p)?;
    let root = core.plugins().instance(instance)?.settings;
    find_setting(core, root, str_field(p, "name")?)
}

/// Reads a JSON value as a value update of the action's kind. Strings go
/// through the same parser the command line uses.
pub fn json_update(current: &ActionValue, v: &Value) -> ApiResult<ValueUpdate> {
    let text = match v {
        Value::Null => return Ok(ValueUpdate::Trigger),
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        Value::Array(items) => match current {
            ActionValue::Color(_) => {
                let bytes: Vec<u8> = items
                    .iter()
                    .map(|x| x.as_u64().and_then(|b| u8::try_from(b).ok()))
                    .collect::<Option<_>>()
                    .ok_or_else(|| bad("color components must be bytes"))?;
                let rgba: [u8; 4] = bytes.try_into().map_err(|_| bad("a color has 4 components"))?;
                return Ok(ValueUpdate::Color(rgba));
            }
            _ => items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        },
        Value::Object(_) => return Err(bad("action values are scalars or arrays")),
    };
    Ok(current.parse_update(&text)?)
}

// ---- JSON views of core state ---------------------------------------------------

fn kind_name(kind: PayloadKind) -> &'static str {
    kind.as_str()
}

pub fn dataset_json(core: &Core, rec: &DatasetRecord) -> Value {
    let data = core.data();
    let kind = data.kind(rec.id).ok();
    let mut node = json!({
        "id": rec.id,
        "name": rec.name,
        "kind": kind.map(kind_name),
        "parent": rec.parent,
        "derived": rec.derived,
        "subset": rec.is_subset(),
        "items": data.item_count(rec.id).ok(),
        "dims": data.dim_count(rec.id).ok().flatten(),
        "group": rec.group.map(|g| g.to_string()),
        "children": rec.children,
    });
    let obj = node.as_object_mut().expect("object");
    if let Ok(payload) = data.payload(rec.id) {
        match payload.as_ref() {
            RawPayload::Points(p) => {
                obj.insert("dimNames".into(), json!(p.dim_names()));
            }
            RawPayload::Image(img) => {
                obj.insert("image".into(), json!({"width": img.width, "height": img.height}));
            }
            RawPayload::Clusters(c) => {
                let clusters: Vec<Value> = c
                    .clusters
                    .iter()
                    .map(|c| json!({"name": c.name, "color": c.color, "size": c.members.len()}))
                    .collect();
                obj.insert("clusters".into(), Value::Array(clusters));
            }
        }
    }
    node
}

/// Every dataset, parents before children.
pub fn hierarchy_json(core: &Core) -> Value {
    let nodes: Vec<Value> = core.data().records().map(|r| dataset_json(core, r)).collect();
    json!({ "nodes": nodes })
}

fn action_json(core: &Core, id: ActionId) -> ApiResult<Value> {
    let a: &Action = core.actions().get(id)?;
    let mut node = serde_json::to_value(&a.value)?;
    let obj = node.as_object_mut().ok_or_else(|| bad("action value is not an object"))?;
    obj.insert("id".into(), json!(a.id));
    obj.insert("name".into(), json!(a.name));
    obj.insert("flags".into(), serde_json::to_value(a.flags)?);
    obj.insert("link".into(), json!(a.link));
    let children = a
        .children
        .iter()
        .map(|&c| action_json(core, c))
        .collect::<ApiResult<Vec<_>>>()?;
    obj.insert("children".into(), Value::Array(children));
    Ok(node)
}

fn pool_json(core: &Core) -> ApiResult<Value> {
    let entries = core
        .actions()
        .pool()
        .map(|e| {
            let mut v = serde_json::to_value(&e.value)?;
            if let Some(obj) = v.as_object_mut() {
                obj.insert("publicName".into(), json!(e.public_name));
                obj.insert("subscribers".into(), json!(e.subscribers.len()));
            }
            Ok(v)
        })
        .collect::<ApiResult<Vec<_>>>()?;
    Ok(Value::Array(entries))
}

pub fn instance_json(info: &InstanceInfo) -> Value {
    json!({
        "id": info.id,
        "pluginId": info.descriptor.plugin_id,
        "displayName": info.descriptor.display_name,
        "kind": info.descriptor.kind,
        "inputs": info.inputs,
        "output": info.output,
        "settings": info.settings,
        "state": info.state,
        "error": info.error,
    })
}

fn layout_json(core: &Core) -> Value {
    json!({ "layout": core.layout(), "locked": core.is_locked() })
}

fn report_json(r: &project::LoadReport) -> Value {
    let skipped: Vec<Value> = r
        .skipped
        .iter()
        .map(|s| json!({"instanceId": s.instance_id, "pluginId": s.plugin_id, "reason": s.reason}))
        .collect();
    json!({ "skipped": skipped, "unbound": r.unbound, "warnings": r.warnings })
}

// ---- push messages ---------------------------------------------------------------

pub fn event_message(e: &CoreEvent) -> WireMessage {
    WireMessage::push(
        "event",
        json!({ "kind": e.kind.wire_name(), "dataset": e.dataset, "seq": e.seq }),
    )
}

pub fn notice_message(n: &Notice) -> WireMessage {
    use vault_core::actions::ActionChange;
    match n {
        Notice::Progress {
            instance,
            iteration,
            total,
        } => WireMessage::push(
            "progress",
            json!({"instance": instance, "iteration": iteration, "total": total}),
        ),
        Notice::State { instance, state } => {
            WireMessage::push("state", json!({"instance": instance, "state": state}))
        }
        Notice::Action(change) => {
            let body = match change {
                ActionChange::Value { action, via_link } => {
                    json!({"change": "value", "action": action, "viaLink": via_link})
                }
                ActionChange::Fired { action, via_link } => {
                    json!({"change": "fired", "action": action, "viaLink": via_link})
                }
                ActionChange::Pool { public_name } => json!({"change": "pool", "publicName": public_name}),
                ActionChange::Link { action } => json!({"change": "link", "action": action}),
                ActionChange::Flags { action } => json!({"change": "flags", "action": action}),
            };
            WireMessage::push("action", body)
        }
        Notice::InstanceCreated(id) => WireMessage::push("instance", json!({"change": "created", "instance": id})),
        Notice::InstanceDestroyed(id) => {
            WireMessage::push("instance", json!({"change": "destroyed", "instance": id}))
        }
        Notice::Layout => WireMessage::push("layout", Value::Null),
        Notice::Warning(text) => WireMessage::push("warning", json!({"message": text})),
    }
}

// ---- dispatch --------------------------------------------------------------------

/// Names of all request types understood by [`dispatch`].
pub const REQUEST_TYPES: &[&str] = &[
    "session.info",
    "hierarchy.list",
    "data.fetch",
    "data.load",
    "data.export",
    "dataset.subset",
    "dataset.rename",
    "dataset.remove",
    "dataset.group",
    "selection.set",
    "selection.get",
    "action.list",
    "action.set",
    "action.publish",
    "action.connect",
    "action.disconnect",
    "plugin.list",
    "plugin.instantiate",
    "plugin.control",
    "plugin.destroy",
    "plugin.wait",
    "instance.list",
    "view.bind",
    "project.save",
    "project.load",
    "workspace.save",
    "workspace.load",
    "preset.save",
    "preset.apply",
    "preset.list",
    "layout.get",
    "layout.set",
    "layout.lock",
];

pub fn dispatch(core: &mut Core, kind: &str, p: &Value) -> ApiResult<Outcome> {
    let reply = match kind {
        "session.info" => json!({
            "title": core.title(),
            "datasets": core.data().len(),
            "instances": core.plugins().instances().count(),
            "locked": core.is_locked(),
            "requestTypes": REQUEST_TYPES,
        }),
        "hierarchy.list" => hierarchy_json(core),
        "data.fetch" => return fetch(core, p).map(Outcome::Done),
        "data.load" => return load(core, p),
        "data.export" => return export(core, p),
        "dataset.subset" => {
            let source = dataset_field(core, p, "dataset")?;
            let indices = index_list(field(p, "indices")?, "indices")?;
            let name = opt_str(p, "name")?.unwrap_or("Subset");
            let id = core.data_mut().create_subset(source, &indices, name)?;
            json!({ "dataset": id })
        }
        "dataset.rename" => {
            let id = dataset_field(core, p, "dataset")?;
            core.data_mut().rename_dataset(id, str_field(p, "name")?)?;
            json!({ "dataset": id })
        }
        "dataset.remove" => {
            let id = dataset_field(core, p, "dataset")?;
            let removed = core.remove_dataset(id)?;
            json!({ "removed": removed })
        }
        "dataset.group" => {
            let ids = dataset_list(core, p, "datasets")?;
            let group = core.data_mut().group_datasets(&ids)?;
            json!({ "group": group.to_string() })
        }
        "selection.set" => select(core, p)?,
        "selection.get" => {
            let id = dataset_field(core, p, "dataset")?;
            json!({ "dataset": id, "indices": core.data().get_selection(id)? })
        }
        "action.list" => {
            if let Some(reference) = opt_str(p, "dataset")? {
                let id = resolve_dataset(core, reference)?;
                let attached = core.data().get(id)?.attached_actions.clone();
                let trees = attached
                    .iter()
                    .map(|&a| action_json(core, a))
                    .collect::<ApiResult<Vec<_>>>()?;
                json!({ "dataset": id, "actions": trees })
            } else if p.get("instance").is_some_and(|v| !v.is_null()) {
                let id = instance_field(core, p)?;
                let root = core.plugins().instance(id)?.settings;
                json!({ "instance": id, "root": action_json(core, root)? })
            } else {
                json!({ "pool": pool_json(core)? })
            }
        }
        "action.set" => {
            let id = action_target(core, p)?;
            let update = json_update(core.actions().value(id)?, p.get("value").unwrap_or(&Value::Null))?;
            core.set_action_value(id, update)?;
            action_json(core, id)?
        }
        "action.publish" => {
            let id = action_target(core, p)?;
            core.publish_action(id, str_field(p, "publicName")?)?;
            action_json(core, id)?
        }
        "action.connect" => {
            let id = action_target(core, p)?;
            core.connect_action(id, str_field(p, "publicName")?)?;
            action_json(core, id)?
        }
        "action.disconnect" => {
            let id = action_target(core, p)?;
            core.disconnect_action(id)?;
            action_json(core, id)?
        }
        "action.flags" => {
            let id = action_target(core, p)?;
            let flags: PermissionFlags = serde_json::from_value(field(p, "flags")?.clone())?;
            core.set_action_flags(id, flags)?;
            action_json(core, id)?
        }
        "plugin.list" => {
            let kind: Option<PluginKind> = match p.get("kind") {
                None | Some(Value::Null) => None,
                Some(v) => Some(serde_json::from_value(v.clone())?),
            };
            let descriptors = match opt_str(p, "dataset")? {
                Some(reference) => {
                    let id = resolve_dataset(core, reference)?;
                    core.list_compatible(id, kind)?
                }
                None => core
                    .plugins()
                    .descriptors()
                    .into_iter()
                    .filter(|d| kind.is_none_or(|k| d.kind == k))
                    .collect(),
            };
            let list: Vec<&vault_core::registry::PluginDescriptor> = descriptors.iter().map(|d| d.as_ref()).collect();
            json!({ "plugins": list })
        }
        "plugin.instantiate" => return instantiate(core, p),
        "plugin.control" => {
            let id = instance_field(core, p)?;
            let control: Control = str_field(p, "control")?.parse()?;
            core.control(id, control)?;
            instance_json(core.plugins().instance(id)?)
        }
        "plugin.destroy" => {
            let id = instance_field(core, p)?;
            core.destroy(id)?;
            json!({ "instance": id })
        }
        "plugin.wait" => {
            let id = instance_field(core, p)?;
            let timeout = opt_u64(p, "timeoutMs")?.map_or(DEFAULT_WAIT, Duration::from_millis);
            return Ok(Outcome::Await {
                instance: id,
                timeout,
                then: Box::new(move |core| Ok(Reply::json(instance_json(core.plugins().instance(id)?)))),
            });
        }
        "instance.list" => {
            let list: Vec<Value> = core.plugins().instances().map(instance_json).collect();
            json!({ "instances": list })
        }
        "view.bind" => {
            let id = instance_field(core, p)?;
            let inputs = dataset_list(core, p, "inputs")?;
            core.bind(id, &inputs)?;
            instance_json(core.plugins().instance(id)?)
        }
        "project.save" => {
            let path = path_field(p, "path")?;
            if let Some(title) = opt_str(p, "title")? {
                core.set_title(title);
            }
            project::save_project(core, &path)?;
            json!({ "path": path })
        }
        "project.load" => {
            let report = project::load_project(core, &path_field(p, "path")?)?;
            report_json(&report)
        }
        "workspace.save" => {
            let path = path_field(p, "path")?;
            project::save_workspace(core, &path)?;
            json!({ "path": path })
        }
        "workspace.load" => {
            let report = project::load_workspace(core, &path_field(p, "path")?)?;
            report_json(&report)
        }
        "preset.save" => {
            let id = instance_field(core, p)?;
            let info = core.plugins().instance(id)?;
            let (key, root) = (info.descriptor.plugin_id.clone(), info.settings);
            let doc = core.actions().serialize_tree(root)?;
            core.presets().save(&key, str_field(p, "name")?, &doc)?;
            json!({ "pluginId": key, "name": str_field(p, "name")? })
        }
        "preset.apply" => {
            let id = instance_field(core, p)?;
            let info = core.plugins().instance(id)?;
            let (key, root) = (info.descriptor.plugin_id.clone(), info.settings);
            let doc = core.presets().load(&key, str_field(p, "name")?)?;
            core.apply_preset_document(root, &doc)?;
            json!({ "instance": id, "root": action_json(core, root)? })
        }
        "preset.list" => {
            let key = match opt_str(p, "pluginId")? {
                Some(k) => k.to_string(),
                None => {
                    let id = instance_field(core, p)?;
                    core.plugins().instance(id)?.descriptor.plugin_id.clone()
                }
            };
            json!({ "pluginId": key, "presets": core.presets().list(&key) })
        }
        "layout.get" => layout_json(core),
        "layout.set" => {
            let layout: Option<LayoutNode> = match p.get("layout") {
                None | Some(Value::Null) => None,
                Some(v) => Some(serde_json::from_value(v.clone())?),
            };
            core.set_layout(layout)?;
            layout_json(core)
        }
        "layout.lock" => {
            core.set_locked(opt_bool(p, "locked", true)?);
            layout_json(core)
        }
        other => return Err(bad(format!("unknown request type `{other}`"))),
    };
    Ok(Outcome::Done(Reply::json(reply)))
}

fn fetch(core: &mut Core, p: &Value) -> ApiResult<Reply> {
    let id = dataset_field(core, p, "dataset")?;
    let dims = match p.get("dims") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let all = core.data().get_data_view(id, None, Some(&[]))?.dim_names;
            let list = v.as_array().ok_or_else(|| bad("`dims` must be an array"))?;
            Some(
                list.iter()
                    .map(|d| match d {
                        Value::String(s) => all
                            .iter()
                            .position(|n| n == s)
                            .ok_or_else(|| bad(format!("unknown dimension `{s}`"))),
                        other => other
                            .as_u64()
                            .map(|i| i as usize)
                            .ok_or_else(|| bad("`dims` holds neither a name nor an index")),
                    })
                    .collect::<ApiResult<Vec<_>>>()?,
            )
        }
    };
    let items = match p.get("items") {
        None | Some(Value::Null) => None,
        Some(v) => Some(index_list(v, "items")?),
    };
    let dim_major = match opt_str(p, "layout")? {
        None | Some("items") => false,
        Some("dims") => true,
        Some(other) => return Err(bad(format!("unknown layout `{other}`"))),
    };
    let m = core.data().get_data_view(id, dims.as_deref(), items.as_deref())?;
    let values = if dim_major {
        let mut out = Vec::with_capacity(m.values.len());
        for c in 0..m.cols {
            out.extend((0..m.rows).map(|r| m.values[r * m.cols + c]));
        }
        out
    } else {
        m.values
    };
    Ok(Reply {
        payload: json!({
            "dataset": id,
            "rows": m.rows,
            "cols": m.cols,
            "dimNames": m.dim_names,
            "layout": if dim_major { "dims" } else { "items" },
        }),
        data: Some(Bulk { values, dim_major }),
    })
}

fn select(core: &mut Core, p: &Value) -> ApiResult<Value> {
    let id = dataset_field(core, p, "dataset")?;
    let (target, indices) = match opt_u64(p, "cluster")? {
        Some(c) => {
            let payload = core.data().payload(id)?;
            let clusters = payload
                .as_clusters()
                .ok_or_else(|| bad("`cluster` needs a cluster dataset"))?;
            let cluster = clusters
                .clusters
                .get(c as usize)
                .ok_or_else(|| bad(format!("no cluster {c}")))?;
            let parent = core
                .data()
                .get(id)?
                .parent
                .ok_or_else(|| bad("cluster dataset without parent"))?;
            (parent, cluster.members.clone())
        }
        None => (id, index_list(field(p, "indices")?, "indices")?),
    };
    let current = core.data().get_selection(target)?;
    let next: Vec<usize> = match opt_str(p, "mode")?.unwrap_or("replace") {
        "replace" => indices,
        "add" => {
            let mut all = current;
            all.extend(indices);
            all.sort_unstable();
            all.dedup();
            all
        }
        "remove" => {
            let drop: std::collections::HashSet<usize> = indices.into_iter().collect();
            current.into_iter().filter(|i| !drop.contains(i)).collect()
        }
        other => return Err(bad(format!("unknown selection mode `{other}`"))),
    };
    core.data_mut().set_selection(target, &next)?;
    Ok(json!({ "dataset": target, "count": core.data().get_selection(target)?.len() }))
}

/// Sets `name=value` settings on an instance.
fn apply_params(core: &mut Core, instance: InstanceId, params: &Value) -> ApiResult<()> {
    let Some(map) = params.as_object() else {
        return if params.is_null() { Ok(()) } else { Err(bad("`params` must be an object")) };
    };
    let root = core.plugins().instance(instance)?.settings;
    for (name, v) in map {
        let id = find_setting(core, root, name)?;
        let update = json_update(core.actions().value(id)?, v)
            .map_err(|e| bad(format!("parameter `{name}`: {e}")))?;
        core.set_action_value(id, update)
            .map_err(|e| bad(format!("parameter `{name}`: {e}")))?;
    }
    Ok(())
}

/// Creates an instance with its parameters applied before it initializes.
/// With `start`, the instance is started; with `wait`, the reply comes when
/// it is idle again.
fn instantiate(core: &mut Core, p: &Value) -> ApiResult<Outcome> {
    let plugin_id = str_field(p, "pluginId")?;
    let inputs = dataset_list(core, p, "inputs")?;
    let descriptor = core.plugins().descriptor(plugin_id)?;
    for &input in &inputs {
        let kind = core.data().kind(input)?;
        if !descriptor.accepts(kind) {
            return Err(bad(format!("`{plugin_id}` does not accept {} data", kind.as_str())));
        }
    }
    let id = core.instantiate(plugin_id, &[])?;
    let setup = (|| {
        apply_params(core, id, p.get("params").unwrap_or(&Value::Null))?;
        if !inputs.is_empty() {
            core.bind(id, &inputs)?;
        }
        // analytics that run on init are already going
        let idle = core.plugins().instance(id)?.state == InstanceState::Created;
        if opt_bool(p, "start", false)? && idle {
            core.control(id, Control::Start)?;
        }
        ApiResult::Ok(())
    })();
    if let Err(e) = setup {
        let _ = core.destroy(id);
        return Err(e);
    }
    finish_instance(core, id, p)
}

fn finish_instance(core: &mut Core, id: InstanceId, p: &Value) -> ApiResult<Outcome> {
    let reply = move |core: &mut Core| -> ApiResult<Reply> {
        let info = core.plugins().instance(id)?;
        if info.state == InstanceState::Failed {
            return Err(bad(info.error.clone().unwrap_or_else(|| "instance failed".into())));
        }
        Ok(Reply::json(instance_json(info)))
    };
    if opt_bool(p, "wait", false)? {
        let timeout = opt_u64(p, "timeoutMs")?.map_or(DEFAULT_WAIT, Duration::from_millis);
        Ok(Outcome::Await {
            instance: id,
            timeout,
            then: Box::new(reply),
        })
    } else {
        Ok(Outcome::Done(reply(core)?))
    }
}

fn format_of(p: &Value, path: &Path) -> ApiResult<String> {
    if let Some(f) = opt_str(p, "format")? {
        return Ok(f.to_string());
    }
    if path.is_dir() {
        return Ok("stack".into());
    }
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("csv" | "tsv" | "txt") => Ok("csv".into()),
        Some("bin" | "mvbin") => Ok("bin".into()),
        _ => Err(bad(format!("cannot tell the format of {}", path.display()))),
    }
}

fn load(core: &mut Core, p: &Value) -> ApiResult<Outcome> {
    let path = path_field(p, "path")?;
    let format = format_of(p, &path)?;
    let plugin = match format.as_str() {
        "csv" => plugins::CSV_LOADER,
        "bin" => plugins::BIN_LOADER,
        "stack" => plugins::IMAGE_LOADER,
        other => return Err(bad(format!("unknown format `{other}`"))),
    };
    let mut params = Map::new();
    let location = path.to_string_lossy().into_owned();
    params.insert(if format == "stack" { "Folder" } else { "File" }.into(), json!(location));
    let name = match opt_str(p, "name")? {
        Some(n) => n.to_string(),
        None => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into()),
    };
    params.insert("Name".into(), json!(name));
    for (key, setting) in [("subsample", "Subsample"), ("delimiter", "Delimiter"), ("header", "Header")] {
        if let Some(v) = p.get(key).filter(|v| !v.is_null()) {
            params.insert(setting.into(), v.clone());
        }
    }
    let request = json!({
        "pluginId": plugin,
        "params": params,
        "start": true,
        "wait": true,
        "timeoutMs": opt_u64(p, "timeoutMs")?,
    });
    let Outcome::Await { instance, timeout, then } = instantiate(core, &request)? else {
        unreachable!("waiting request");
    };
    Ok(Outcome::Await {
        instance,
        timeout,
        then: Box::new(move |core| {
            let mut reply = then(core)?;
            let output = core.plugins().instance(instance)?.output;
            if let (Some(out), Some(obj)) = (output, reply.payload.as_object_mut()) {
                obj.insert("dataset".into(), dataset_json(core, core.data().get(out)?));
            }
            Ok(reply)
        }),
    })
}

fn export(core: &mut Core, p: &Value) -> ApiResult<Outcome> {
    let dataset = dataset_field(core, p, "dataset")?;
    let path = path_field(p, "path")?;
    let plugin = match format_of(p, &path)?.as_str() {
        "csv" => plugins::CSV_WRITER,
        "bin" => plugins::BIN_WRITER,
        other => return Err(bad(format!("cannot export as `{other}`"))),
    };
    let mut params = Map::new();
    params.insert("File".into(), json!(path.to_string_lossy()));
    for (key, setting) in [("delimiter", "Delimiter"), ("header", "Header")] {
        if let Some(v) = p.get(key).filter(|v| !v.is_null()) {
            params.insert(setting.into(), v.clone());
        }
    }
    let request = json!({
        "pluginId": plugin,
        "inputs": [dataset.to_string()],
        "params": params,
        "start": true,
        "wait": true,
        "timeoutMs": opt_u64(p, "timeoutMs")?,
    });
    let Outcome::Await { instance, timeout, then } = instantiate(core, &request)? else {
        unreachable!("waiting request");
    };
    Ok(Outcome::Await {
        instance,
        timeout,
        then: Box::new(move |core| {
            let result = then(core);
            let _ = core.destroy(instance);
            result.map(|_| Reply::json(json!({ "dataset": dataset, "path": path })))
        }),
    })
}

// ---- in-process session ------------------------------------------------------------

/// A core plus the request vocabulary, driven synchronously. Push messages
/// (events, progress, state changes) go to the handler installed with
/// [`Session::on_push`].
pub struct Session {
    core: Core,
    handler: Arc<Mutex<Option<Box<dyn FnMut(&WireMessage) + Send>>>>,
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

impl Session {
    pub fn new() -> Self {
        Self::with_core(Core::with_builtin_plugins())
    }

    pub fn with_core(mut core: Core) -> Self {
        let handler: Arc<Mutex<Option<Box<dyn FnMut(&WireMessage) + Send>>>> = Arc::default();
        let h = handler.clone();
        core.bus().subscribe(EventFilter::all(), move |e| {
            if let Some(f) = h.lock().unwrap().as_mut() {
                f(&event_message(e));
            }
        });
        let h = handler.clone();
        core.add_listener(move |n| {
            if let Some(f) = h.lock().unwrap().as_mut() {
                f(&notice_message(n));
            }
        });
        Self { core, handler }
    }

    pub fn on_push(&mut self, f: impl FnMut(&WireMessage) + Send + 'static) {
        *self.handler.lock().unwrap() = Some(Box::new(f));
    }

    pub fn request(&mut self, kind: &str, payload: Value) -> ApiResult<Reply> {
        let outcome = dispatch(&mut self.core, kind, &payload)?;
        let reply = match outcome {
            Outcome::Done(r) => r,
            Outcome::Await { instance, timeout, then } => {
                self.core.wait_for(instance, timeout)?;
                then(&mut self.core)?
            }
        };
        // let workers' final posts land before the caller looks again
        self.core.process_pending();
        Ok(reply)
    }

    /// Applies pending posts from background work.
    pub fn pump(&mut self) -> usize {
        self.core.process_pending()
    }

    pub fn core(&self) -> &Core {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut Core {
        &mut self.core
    }
}
