//! Project (`.mvproj`) and workspace (`.mvwork`) archives.
//!
//! Both are deflate-compressed zip files. A project holds
//!
//! - `project.json`: title and the dataset tree,
//! - `workspace.json`: layout, plugin instances with their settings, the
//!   public action pool and the links into it,
//! - `blobs/<guid>.bin`: one MVBIN file per point payload.
//!
//! A workspace archive holds `workspace.json` only. Members are written in a
//! fixed order with zeroed timestamps, so saving an unchanged session twice
//! yields identical bytes. Selections are not saved.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Cursor, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use crate::actions::{ActionNode, ActionValue};
use crate::core::{Core, InstanceSetup};
use crate::error::{CoreError, Result};
use crate::ids::{DatasetId, InstanceId};
use crate::io::mvbin;
use crate::layout::LayoutNode;
use crate::payload::{Cluster, ImagePayload, PayloadKind, RawPayload};

pub const FORMAT_VERSION: u32 = 1;
pub const PROJECT_EXTENSION: &str = "mvproj";
pub const WORKSPACE_EXTENSION: &str = "mvwork";
pub const PROJECT_JSON: &str = "project.json";
pub const WORKSPACE_JSON: &str = "workspace.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProjectDoc {
    pub format_version: u32,
    pub title: String,
    pub datasets: Vec<DatasetNode>,
    /// Member lists of dataset groups.
    #[serde(default)]
    pub groups: Vec<Vec<DatasetId>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetNode {
    pub guid: DatasetId,
    pub name: String,
    pub kind: PayloadKind,
    pub parent_guid: Option<DatasetId>,
    pub derived: bool,
    /// Raw-space indices of a subset.
    pub subset_indices: Option<Vec<usize>>,
    pub properties: BTreeMap<String, String>,
    /// Archive member holding the point values.
    pub blob_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImagePayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<Cluster>>,
    /// Attached action trees that do not belong to a plugin instance.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<ActionNode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkspaceDoc {
    pub format_version: u32,
    pub layout: Option<LayoutNode>,
    pub locked: bool,
    pub instances: Vec<InstanceRecord>,
    pub pool: Vec<PoolRecord>,
    pub links: Vec<LinkRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InstanceRecord {
    pub instance_id: InstanceId,
    pub plugin_id: String,
    pub inputs: Vec<DatasetId>,
    /// Names of the inputs, for binding a workspace to other data.
    pub input_names: Vec<String>,
    pub output: Option<DatasetId>,
    pub settings: ActionNode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PoolRecord {
    pub public_name: String,
    #[serde(flatten)]
    pub value: ActionValue,
}

/// One linked setting. The settings trees carry the same information; this
/// list makes it readable at a glance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LinkRecord {
    pub instance_id: InstanceId,
    pub action_path: String,
    pub public_name: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedInstance {
    pub instance_id: InstanceId,
    pub plugin_id: String,
    pub reason: String,
}

/// What a load could not restore.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub skipped: Vec<SkippedInstance>,
    /// Workspace instances whose inputs were not found by name; they wait
    /// to be bound.
    pub unbound: Vec<InstanceId>,
    pub warnings: Vec<String>,
}

fn blob_name(id: DatasetId) -> String {
    format!("blobs/{id}.bin")
}

// ---- snapshot ---------------------------------------------------------------

pub fn project_doc(core: &Core) -> Result<ProjectDoc> {
    let data = core.data();
    let mut datasets = Vec::new();
    for rec in data.records() {
        let payload = data.payload(rec.id)?;
        let owns_raw = !rec.is_subset();
        let mut actions = Vec::new();
        for &a in &rec.attached_actions {
            if core.actions().get(a)?.owner.is_none() {
                actions.push(core.actions().to_node(a)?);
            }
        }
        datasets.push(DatasetNode {
            guid: rec.id,
            name: rec.name.clone(),
            kind: payload.kind(),
            parent_guid: rec.parent,
            derived: rec.derived,
            subset_indices: rec.subset_indices.as_ref().map(|s| s.to_vec()),
            properties: rec.properties.clone(),
            blob_ref: (owns_raw && payload.kind() == PayloadKind::Points).then(|| blob_name(rec.id)),
            image: match &*payload {
                RawPayload::Image(img) => Some(*img),
                _ => None,
            },
            clusters: payload.as_clusters().map(|c| c.clusters.clone()),
            actions,
        });
    }
    Ok(ProjectDoc {
        format_version: FORMAT_VERSION,
        title: core.title().to_string(),
        datasets,
        groups: data.groups().map(|g| g.members.clone()).collect(),
    })
}

pub fn workspace_doc(core: &Core) -> Result<WorkspaceDoc> {
    let mut instances = Vec::new();
    let mut links = Vec::new();
    for info in core.plugins().instances() {
        let actions = core.actions();
        for id in actions.tree_ids(info.settings)? {
            if let Some(public_name) = &actions.get(id)?.link {
                links.push(LinkRecord {
                    instance_id: info.id,
                    action_path: actions.path_from(info.settings, id)?,
                    public_name: public_name.clone(),
                });
            }
        }
        instances.push(InstanceRecord {
            instance_id: info.id,
            plugin_id: info.descriptor.plugin_id.clone(),
            inputs: info.inputs.clone(),
            input_names: info
                .inputs
                .iter()
                .map(|&d| core.data().get(d).map(|r| r.name.clone()))
                .collect::<Result<_>>()?,
            output: info.output,
            settings: actions.to_node(info.settings)?,
        });
    }
    Ok(WorkspaceDoc {
        format_version: FORMAT_VERSION,
        layout: core.layout().cloned(),
        locked: core.is_locked(),
        instances,
        pool: core
            .actions()
            .pool()
            .map(|e| PoolRecord {
                public_name: e.public_name.clone(),
                value: e.value.clone(),
            })
            .collect(),
        links,
    })
}

// ---- archives ---------------------------------------------------------------

fn zip_err(e: zip::result::ZipError) -> CoreError {
    CoreError::Archive(e.to_string())
}

fn pack(members: &[(String, Vec<u8>)]) -> Result<Vec<u8>> {
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let opts = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default())
        .unix_permissions(0o644);
    for (name, bytes) in members {
        zip.start_file(name.as_str(), opts).map_err(zip_err)?;
        zip.write_all(bytes)?;
    }
    Ok(zip.finish().map_err(zip_err)?.into_inner())
}

fn pretty(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Serializes the whole session into project archive bytes.
pub fn project_bytes(core: &Core) -> Result<Vec<u8>> {
    let project = project_doc(core)?;
    let workspace = workspace_doc(core)?;
    let mut members = vec![
        (PROJECT_JSON.to_string(), pretty(&project)?),
        (WORKSPACE_JSON.to_string(), pretty(&workspace)?),
    ];
    let mut blobs: Vec<&DatasetNode> = project.datasets.iter().filter(|d| d.blob_ref.is_some()).collect();
    blobs.sort_by_key(|d| d.guid);
    for node in blobs {
        let payload = core.data().payload(node.guid)?;
        let points = payload.as_points().expect("blob datasets hold points");
        members.push((node.blob_ref.clone().unwrap(), mvbin::encode(points)));
    }
    pack(&members)
}

pub fn workspace_bytes(core: &Core) -> Result<Vec<u8>> {
    pack(&[(WORKSPACE_JSON.to_string(), pretty(&workspace_doc(core)?)?)])
}

/// Writes next to `path` first and renames, so a failed save leaves no
/// partial file behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CoreError::Io(e.error))?;
    Ok(())
}

pub fn save_project(core: &Core, path: &Path) -> Result<()> {
    write_atomic(path, &project_bytes(core)?)
}

pub fn save_workspace(core: &Core, path: &Path) -> Result<()> {
    write_atomic(path, &workspace_bytes(core)?)
}

struct Archive(ZipArchive<Cursor<Vec<u8>>>);

impl Archive {
    fn open(bytes: Vec<u8>) -> Result<Self> {
        ZipArchive::new(Cursor::new(bytes)).map(Archive).map_err(zip_err)
    }

    fn member(&mut self, name: &str) -> Result<Option<Vec<u8>>> {
        match self.0.by_name(name) {
            Ok(mut f) => {
                let mut out = Vec::new();
                f.read_to_end(&mut out)?;
                Ok(Some(out))
            }
            Err(zip::result::ZipError::FileNotFound) => Ok(None),
            Err(e) => Err(zip_err(e)),
        }
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self, name: &str) -> Result<T> {
        let bytes = self
            .member(name)?
            .ok_or_else(|| CoreError::Archive(format!("missing member {name}")))?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)?;
        check_version(&value, name)?;
        Ok(serde_json::from_value(value)?)
    }
}

fn check_version(doc: &serde_json::Value, member: &str) -> Result<()> {
    match doc.get("formatVersion").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => Ok(()),
        Some(v) => Err(CoreError::Unsupported(format!("{member} format version {v}"))),
        None => Err(CoreError::Malformed(format!("{member} has no formatVersion"))),
    }
}

// ---- loading ----------------------------------------------------------------

/// Orders nodes so that parents precede children, refusing dangling parents
/// and cycles.
fn parents_first(nodes: &[DatasetNode]) -> Result<Vec<&DatasetNode>> {
    let by_id: HashMap<DatasetId, &DatasetNode> = nodes.iter().map(|n| (n.guid, n)).collect();
    if by_id.len() != nodes.len() {
        return Err(CoreError::Malformed("duplicate dataset guid".into()));
    }
    let mut placed: HashSet<DatasetId> = HashSet::new();
    let mut order = Vec::with_capacity(nodes.len());
    for node in nodes {
        if let Some(p) = node.parent_guid {
            if !by_id.contains_key(&p) {
                return Err(CoreError::Malformed(format!("dataset {} has unknown parent {p}", node.guid)));
            }
        }
    }
    while order.len() < nodes.len() {
        let before = order.len();
        for node in nodes {
            if !placed.contains(&node.guid) && node.parent_guid.is_none_or(|p| placed.contains(&p)) {
                placed.insert(node.guid);
                order.push(node);
            }
        }
        if order.len() == before {
            return Err(CoreError::Malformed("dataset hierarchy has a cycle".into()));
        }
    }
    Ok(order)
}

/// A project fully decoded and checked, before anything in the session
/// changes.
struct Prepared {
    project: ProjectDoc,
    workspace: WorkspaceDoc,
    blobs: HashMap<DatasetId, crate::payload::PointPayload>,
}

fn prepare(bytes: Vec<u8>) -> Result<Prepared> {
    let mut archive = Archive::open(bytes)?;
    let project: ProjectDoc = archive.json(PROJECT_JSON)?;
    let workspace: WorkspaceDoc = archive.json(WORKSPACE_JSON)?;
    parents_first(&project.datasets)?;
    let mut blobs = HashMap::new();
    for node in &project.datasets {
        match (&node.blob_ref, node.kind, node.subset_indices.is_some()) {
            (Some(member), PayloadKind::Points, false) => {
                let bytes = archive.member(member)?.ok_or_else(|| {
                    CoreError::Archive(format!("blob for dataset {} is missing", node.guid))
                })?;
                blobs.insert(node.guid, mvbin::decode(&bytes)?);
            }
            (None, PayloadKind::Points, false) => {
                return Err(CoreError::Archive(format!("dataset {} has no blob", node.guid)))
            }
            (None, PayloadKind::Image, false) if node.image.is_none() => {
                return Err(CoreError::Malformed(format!("image {} without extents", node.guid)))
            }
            (None, PayloadKind::Clusters, false) if node.clusters.is_none() => {
                return Err(CoreError::Malformed(format!("clusters {} without members", node.guid)))
            }
            (_, _, true) if node.parent_guid.is_none() => {
                return Err(CoreError::Malformed(format!("subset {} without parent", node.guid)))
            }
            _ => {}
        }
    }
    if let Some(layout) = &workspace.layout {
        layout.validate()?;
    }
    Ok(Prepared {
        project,
        workspace,
        blobs,
    })
}

fn build_datasets(core: &mut Core, prepared: &mut Prepared, report: &mut LoadReport) -> Result<()> {
    let nodes = prepared.project.datasets.clone();
    for node in parents_first(&nodes)? {
        let data = core.data_mut();
        let id = node.guid;
        if let Some(indices) = &node.subset_indices {
            data.restore_subset(id, node.parent_guid.unwrap(), indices.clone(), &node.name)?;
        } else {
            let payload = match node.kind {
                PayloadKind::Points => RawPayload::Points(prepared.blobs.remove(&id).expect("checked in prepare")),
                PayloadKind::Image => RawPayload::Image(node.image.unwrap()),
                PayloadKind::Clusters => RawPayload::Clusters(crate::payload::ClusterPayload::new(
                    node.clusters.clone().unwrap_or_default(),
                )),
            };
            match (node.derived, node.parent_guid) {
                (true, Some(parent)) => data.derive_dataset_with_id(id, parent, &node.name, payload)?,
                (true, None) => {
                    return Err(CoreError::Malformed(format!("derived dataset {id} without parent")))
                }
                (false, parent) => data.add_dataset_with_id(id, payload, &node.name, parent)?,
            };
        }
        for (k, v) in &node.properties {
            core.data_mut().set_property(id, k, v)?;
        }
    }
    for members in &prepared.project.groups {
        core.data_mut().group_datasets(members)?;
    }
    // dataset-level actions may link into the pool, so they come after it
    for node in &nodes {
        for tree in &node.actions {
            let restored = core.actions_mut().restore_node(tree.clone(), None)?;
            report.warnings.extend(restored.warnings);
            core.data_mut().attach_action(node.guid, restored.root)?;
        }
    }
    Ok(())
}

fn restore_pool(core: &mut Core, pool: &[PoolRecord]) -> Result<()> {
    for entry in pool {
        core.actions_mut().insert_pool_entry(&entry.public_name, entry.value.clone())?;
    }
    Ok(())
}

/// Re-creates instances. With `by_name`, inputs are looked up by dataset
/// name and saved outputs are ignored.
fn restore_instances(core: &mut Core, ws: &WorkspaceDoc, by_name: bool, report: &mut LoadReport) -> Result<()> {
    let mut layout = ws.layout.clone();
    for rec in &ws.instances {
        if core.plugins().descriptor(&rec.plugin_id).is_err() {
            report.skipped.push(SkippedInstance {
                instance_id: rec.instance_id,
                plugin_id: rec.plugin_id.clone(),
                reason: "plugin not available".into(),
            });
            layout = layout.and_then(|l| l.without(rec.instance_id));
            continue;
        }
        let inputs: Option<Vec<DatasetId>> = if by_name {
            rec.input_names
                .iter()
                .map(|n| core.data().find_by_name(n).map(|r| r.id))
                .collect()
        } else {
            Some(rec.inputs.clone())
        };
        let inputs = inputs.unwrap_or_else(|| {
            report.unbound.push(rec.instance_id);
            Vec::new()
        });
        let setup = InstanceSetup {
            id: Some(rec.instance_id),
            settings: Some(rec.settings.clone()),
            output: if by_name { None } else { rec.output },
        };
        match core.instantiate_with(&rec.plugin_id, &inputs, setup) {
            Ok((_, warnings)) => report.warnings.extend(warnings),
            Err(e) => {
                report.skipped.push(SkippedInstance {
                    instance_id: rec.instance_id,
                    plugin_id: rec.plugin_id.clone(),
                    reason: e.to_string(),
                });
                layout = layout.and_then(|l| l.without(rec.instance_id));
            }
        }
    }
    core.install_layout(layout)?;
    core.set_locked(ws.locked);
    Ok(())
}

/// Replaces the session with the project in `bytes`. Nothing changes if the
/// archive is refused.
pub fn load_project_bytes(core: &mut Core, bytes: Vec<u8>) -> Result<LoadReport> {
    let mut prepared = prepare(bytes)?;
    core.reset();
    let mut report = LoadReport::default();
    let result = (|| {
        core.set_title(&prepared.project.title);
        restore_pool(core, &prepared.workspace.pool)?;
        build_datasets(core, &mut prepared, &mut report)?;
        let ws = prepared.workspace.clone();
        restore_instances(core, &ws, false, &mut report)
    })();
    if let Err(e) = result {
        core.reset();
        return Err(e);
    }
    Ok(report)
}

pub fn load_project(core: &mut Core, path: &Path) -> Result<LoadReport> {
    load_project_bytes(core, std::fs::read(path)?)
}

/// Replaces instances, pool and layout with those of a workspace, keeping
/// the loaded data. Instances are bound to datasets with the saved input
/// names; the rest stay unbound.
pub fn load_workspace_bytes(core: &mut Core, bytes: Vec<u8>) -> Result<LoadReport> {
    let ws: WorkspaceDoc = Archive::open(bytes)?.json(WORKSPACE_JSON)?;
    if let Some(layout) = &ws.layout {
        layout.validate()?;
    }
    let instances: Vec<InstanceId> = core.plugins().instances().map(|i| i.id).collect();
    core.set_locked(false);
    for i in instances {
        core.destroy(i)?;
    }
    core.actions_mut().clear_pool();
    let mut report = LoadReport::default();
    restore_pool(core, &ws.pool)?;
    restore_instances(core, &ws, true, &mut report)?;
    Ok(report)
}

pub fn load_workspace(core: &mut Core, path: &Path) -> Result<LoadReport> {
    load_workspace_bytes(core, std::fs::read(path)?)
}

/// Dispatches on the file extension.
pub fn save(core: &Core, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(WORKSPACE_EXTENSION) => save_workspace(core, path),
        _ => save_project(core, path),
    }
}
