//! The data manager: raw payloads, dataset views over them, selection sets
//! and dataset groups.
//!
//! Every raw payload is owned by exactly one entry here. Plugins only ever see
//! [`DatasetRecord`]s, which are views onto a raw payload, optionally
//! restricted to a subset of its items. Each raw payload points at one
//! selection set; subsets, derived datasets and image annotations all point at
//! the selection set of the dataset they came from, so selecting items
//! anywhere along such a chain selects them everywhere.
//!
//! Selection sets live in the item space of the *root* raw payload. A raw
//! payload that shares a foreign selection set carries a `to_selection` map
//! from its own item indices into that space.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use indexmap::IndexMap;

use crate::error::{CoreError, Result};
use crate::events::{EventBus, EventKind};
use crate::ids::{ActionId, DatasetId, GroupId};
use crate::payload::{Matrix, PayloadKind, RawPayload};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawId(u64);

/// Opaque handle of a selection set; equal handles mean the same set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SelectionId(u64);

struct RawEntry {
    payload: Arc<RawPayload>,
    item_count: usize,
    selection: SelectionId,
    /// raw item -> selection-space index; `None` is the identity.
    to_selection: Option<Arc<Vec<usize>>>,
}

#[derive(Clone, Debug)]
pub struct DatasetRecord {
    pub id: DatasetId,
    pub name: String,
    pub parent: Option<DatasetId>,
    pub derived: bool,
    /// Raw-space item indices, strictly increasing; `None` for the full set.
    pub subset_indices: Option<Arc<Vec<usize>>>,
    pub attached_actions: Vec<ActionId>,
    pub properties: BTreeMap<String, String>,
    pub group: Option<GroupId>,
    pub children: Vec<DatasetId>,
    raw: RawId,
}

impl DatasetRecord {
    pub fn raw_id(&self) -> RawId {
        self.raw
    }

    pub fn is_subset(&self) -> bool {
        self.subset_indices.is_some()
    }
}

#[derive(Clone, Debug)]
pub struct DatasetGroup {
    pub id: GroupId,
    pub members: Vec<DatasetId>,
}

pub struct DataManager {
    bus: Arc<EventBus>,
    raws: HashMap<RawId, RawEntry>,
    selections: HashMap<SelectionId, Vec<usize>>,
    records: IndexMap<DatasetId, DatasetRecord>,
    groups: IndexMap<GroupId, DatasetGroup>,
    next_raw: u64,
    next_selection: u64,
}

impl DataManager {
    pub fn new(bus: Arc<EventBus>) -> Self {
        Self {
            bus,
            raws: HashMap::new(),
            selections: HashMap::new(),
            records: IndexMap::new(),
            groups: IndexMap::new(),
            next_raw: 0,
            next_selection: 0,
        }
    }

    pub fn bus(&self) -> &Arc<EventBus> {
        &self.bus
    }

    fn fresh_id(&self) -> DatasetId {
        loop {
            let id = DatasetId::random();
            if !self.records.contains_key(&id) {
                return id;
            }
        }
    }

    fn new_selection(&mut self) -> SelectionId {
        self.next_selection += 1;
        let id = SelectionId(self.next_selection);
        self.selections.insert(id, Vec::new());
        id
    }

    fn insert_raw(&mut self, entry: RawEntry) -> RawId {
        self.next_raw += 1;
        let id = RawId(self.next_raw);
        self.raws.insert(id, entry);
        id
    }

    pub fn get(&self, id: DatasetId) -> Result<&DatasetRecord> {
        self.records
            .get(&id)
            .ok_or_else(|| CoreError::not_found("dataset", id))
    }

    fn get_mut(&mut self, id: DatasetId) -> Result<&mut DatasetRecord> {
        self.records
            .get_mut(&id)
            .ok_or_else(|| CoreError::not_found("dataset", id))
    }

    pub fn contains(&self, id: DatasetId) -> bool {
        self.records.contains_key(&id)
    }

    /// All records in creation order.
    pub fn records(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn roots(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.records.values().filter(|r| r.parent.is_none())
    }

    pub fn find_by_name(&self, name: &str) -> Option<&DatasetRecord> {
        self.records.values().find(|r| r.name == name)
    }

    fn raw(&self, id: RawId) -> &RawEntry {
        &self.raws[&id]
    }

    pub fn payload(&self, id: DatasetId) -> Result<Arc<RawPayload>> {
        Ok(self.raw(self.get(id)?.raw).payload.clone())
    }

    pub fn kind(&self, id: DatasetId) -> Result<PayloadKind> {
        Ok(self.raw(self.get(id)?.raw).payload.kind())
    }

    /// Number of items visible through this dataset.
    pub fn item_count(&self, id: DatasetId) -> Result<usize> {
        let rec = self.get(id)?;
        Ok(match &rec.subset_indices {
            Some(s) => s.len(),
            None => self.raw(rec.raw).item_count,
        })
    }

    /// Dimension count of the point data behind `id` (images resolve to
    /// their parent).
    pub fn dim_count(&self, id: DatasetId) -> Result<Option<usize>> {
        let id = self.point_source(id)?;
        Ok(self
            .payload(id)?
            .as_points()
            .map(|p| p.num_dims()))
    }

    pub fn selection_object(&self, id: DatasetId) -> Result<SelectionId> {
        Ok(self.raw(self.get(id)?.raw).selection)
    }

    /// Follows parent links through subsets, derived sets and image
    /// annotations to the dataset that owns the selection space.
    pub fn root_of(&self, id: DatasetId) -> Result<DatasetId> {
        let mut cur = self.get(id)?;
        while let Some(p) = cur.parent {
            let parent = self.get(p)?;
            if self.raw(parent.raw).selection != self.raw(cur.raw).selection {
                break;
            }
            cur = parent;
        }
        Ok(cur.id)
    }

    /// local index -> selection-space index, or `None` for the identity.
    fn local_to_selection(&self, rec: &DatasetRecord) -> Option<Vec<usize>> {
        let raw = self.raw(rec.raw);
        match (&rec.subset_indices, &raw.to_selection) {
            (None, None) => None,
            (Some(s), None) => Some(s.as_ref().clone()),
            (None, Some(t)) => Some(t.as_ref().clone()),
            (Some(s), Some(t)) => Some(s.iter().map(|&i| t[i]).collect()),
        }
    }

    fn register(&mut self, rec: DatasetRecord) -> DatasetId {
        let id = rec.id;
        if let Some(p) = rec.parent {
            if let Some(parent) = self.records.get_mut(&p) {
                parent.children.push(id);
            }
        }
        self.records.insert(id, rec);
        self.bus.publish(EventKind::DatasetAdded, id);
        id
    }

    fn blank_record(&self, id: DatasetId, name: &str, raw: RawId) -> DatasetRecord {
        DatasetRecord {
            id,
            name: name.to_string(),
            parent: None,
            derived: false,
            subset_indices: None,
            attached_actions: Vec::new(),
            properties: BTreeMap::new(),
            group: None,
            children: Vec::new(),
            raw,
        }
    }

    /// Registers a new raw payload and a full-set view of it.
    ///
    /// Point payloads get their own, empty selection set. Image payloads
    /// annotate their parent's point data and share its selection set; they
    /// must cover exactly the parent's items. Cluster payloads must be
    /// created through [`DataManager::derive_dataset`].
    pub fn add_dataset(
        &mut self,
        payload: RawPayload,
        name: &str,
        parent: Option<DatasetId>,
    ) -> Result<DatasetId> {
        let id = self.fresh_id();
        self.add_dataset_with_id(id, payload, name, parent)
    }

    pub(crate) fn add_dataset_with_id(
        &mut self,
        id: DatasetId,
        payload: RawPayload,
        name: &str,
        parent: Option<DatasetId>,
    ) -> Result<DatasetId> {
        if self.records.contains_key(&id) {
            return Err(CoreError::InvalidId(format!("duplicate dataset id {id}")));
        }
        if let Some(p) = parent {
            self.get(p)?;
        }
        let entry = match &payload {
            RawPayload::Points(p) => RawEntry {
                item_count: p.num_items(),
                payload: Arc::new(payload),
                selection: self.new_selection(),
                to_selection: None,
            },
            RawPayload::Image(img) => {
                let parent = parent.ok_or_else(|| {
                    CoreError::Shape("image data must annotate a parent point set".into())
                })?;
                let parent_rec = self.get(parent)?;
                if self.raw(parent_rec.raw).payload.kind() != PayloadKind::Points {
                    return Err(CoreError::Shape("image parent must hold point data".into()));
                }
                let count = self.item_count(parent)?;
                if img.pixel_count() != count {
                    return Err(CoreError::Shape(format!(
                        "{}x{} image does not cover {count} items",
                        img.width, img.height
                    )));
                }
                RawEntry {
                    item_count: count,
                    selection: self.raw(parent_rec.raw).selection,
                    to_selection: self.local_to_selection(parent_rec).map(Arc::new),
                    payload: Arc::new(payload),
                }
            }
            RawPayload::Clusters(_) => {
                return Err(CoreError::Shape(
                    "cluster data must be derived from a source dataset".into(),
                ))
            }
        };
        let raw = self.insert_raw(entry);
        let mut rec = self.blank_record(id, name, raw);
        rec.parent = parent;
        Ok(self.register(rec))
    }

    /// Creates a dataset with its own raw payload that shares `source`'s
    /// selection set. Point payloads must have one item per source item;
    /// cluster payloads index into the source's items.
    pub fn derive_dataset(
        &mut self,
        source: DatasetId,
        name: &str,
        payload: RawPayload,
    ) -> Result<DatasetId> {
        let id = self.fresh_id();
        self.derive_dataset_with_id(id, source, name, payload)
    }

    pub(crate) fn derive_dataset_with_id(
        &mut self,
        id: DatasetId,
        source: DatasetId,
        name: &str,
        payload: RawPayload,
    ) -> Result<DatasetId> {
        if self.records.contains_key(&id) {
            return Err(CoreError::InvalidId(format!("duplicate dataset id {id}")));
        }
        let count = self.item_count(source)?;
        match &payload {
            RawPayload::Points(p) if p.num_items() != count => {
                return Err(CoreError::Shape(format!(
                    "derived point data has {} items, source has {count}",
                    p.num_items()
                )))
            }
            RawPayload::Clusters(c) => c.validate(count)?,
            RawPayload::Image(_) => {
                return Err(CoreError::Shape("image data cannot be derived".into()))
            }
            _ => {}
        }
        let src = self.get(source)?;
        let entry = RawEntry {
            item_count: count,
            selection: self.raw(src.raw).selection,
            to_selection: self.local_to_selection(src).map(Arc::new),
            payload: Arc::new(payload),
        };
        let raw = self.insert_raw(entry);
        let mut rec = self.blank_record(id, name, raw);
        rec.parent = Some(source);
        rec.derived = true;
        Ok(self.register(rec))
    }

    /// Creates a subset view of `source` from source-local indices. No data
    /// is copied; the subset stores raw-space indices only.
    pub fn create_subset(
        &mut self,
        source: DatasetId,
        local: &[usize],
        name: &str,
    ) -> Result<DatasetId> {
        let src = self.get(source)?;
        let kind = self.raw(src.raw).payload.kind();
        if kind != PayloadKind::Points {
            return Err(CoreError::Unsupported(format!(
                "subsets of {} data",
                kind.as_str()
            )));
        }
        if local.is_empty() {
            return Err(CoreError::EmptySubset);
        }
        let count = self.item_count(source)?;
        let mut local = local.to_vec();
        local.sort_unstable();
        local.dedup();
        if let Some(&bad) = local.iter().find(|&&i| i >= count) {
            return Err(CoreError::OutOfRange {
                index: bad,
                len: count,
            });
        }
        let raw_indices: Vec<usize> = match &src.subset_indices {
            Some(s) => local.iter().map(|&i| s[i]).collect(),
            None => local,
        };
        let id = self.fresh_id();
        self.restore_subset(id, source, raw_indices, name)
    }

    /// Inserts a subset from raw-space indices (used when loading archives).
    pub(crate) fn restore_subset(
        &mut self,
        id: DatasetId,
        source: DatasetId,
        raw_indices: Vec<usize>,
        name: &str,
    ) -> Result<DatasetId> {
        if self.records.contains_key(&id) {
            return Err(CoreError::InvalidId(format!("duplicate dataset id {id}")));
        }
        let src = self.get(source)?;
        let raw = src.raw;
        let raw_count = self.raw(raw).item_count;
        if raw_indices.is_empty() {
            return Err(CoreError::EmptySubset);
        }
        if raw_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::Shape("subset indices must be strictly increasing".into()));
        }
        if let Some(&bad) = raw_indices.iter().find(|&&i| i >= raw_count) {
            return Err(CoreError::OutOfRange {
                index: bad,
                len: raw_count,
            });
        }
        let mut rec = self.blank_record(id, name, raw);
        rec.parent = Some(source);
        rec.subset_indices = Some(Arc::new(raw_indices));
        Ok(self.register(rec))
    }

    /// Replaces the raw payload behind a dataset that owns its raw data
    /// (not a subset). The item count must not change.
    pub fn set_payload(&mut self, id: DatasetId, payload: RawPayload) -> Result<()> {
        let rec = self.get(id)?;
        if rec.is_subset() {
            return Err(CoreError::Unsupported("subsets do not own raw data".into()));
        }
        let raw_id = rec.raw;
        let entry = self.raw(raw_id);
        if entry.payload.kind() != payload.kind() {
            return Err(CoreError::KindMismatch {
                expected: entry.payload.kind().as_str().into(),
                found: payload.kind().as_str().into(),
            });
        }
        match &payload {
            RawPayload::Points(p) if p.num_items() != entry.item_count => {
                return Err(CoreError::Shape(format!(
                    "replacement has {} items, dataset has {}",
                    p.num_items(),
                    entry.item_count
                )))
            }
            RawPayload::Clusters(c) => c.validate(entry.item_count)?,
            RawPayload::Image(img) if img.pixel_count() != entry.item_count => {
                return Err(CoreError::Shape("image extents changed".into()))
            }
            _ => {}
        }
        self.raws.get_mut(&raw_id).unwrap().payload = Arc::new(payload);
        let affected: Vec<DatasetId> = self
            .records
            .values()
            .filter(|r| r.raw == raw_id)
            .map(|r| r.id)
            .collect();
        for d in affected {
            self.bus.publish(EventKind::DatasetDataChanged, d);
        }
        Ok(())
    }

    /// Emits `DatasetDataChanged` without touching the payload.
    pub fn notify_data_changed(&self, id: DatasetId) -> Result<()> {
        self.get(id)?;
        self.bus.publish(EventKind::DatasetDataChanged, id);
        Ok(())
    }

    /// Replaces the selection behind `dataset` with the given local indices
    /// and copies them to every member of the dataset's group.
    pub fn set_selection(&mut self, dataset: DatasetId, local: &[usize]) -> Result<()> {
        let count = self.item_count(dataset)?;
        if let Some(&bad) = local.iter().find(|&&i| i >= count) {
            return Err(CoreError::OutOfRange {
                index: bad,
                len: count,
            });
        }
        let mut targets = vec![dataset];
        if let Some(g) = self.get(dataset)?.group {
            if let Some(group) = self.groups.get(&g) {
                targets.extend(group.members.iter().copied().filter(|&m| m != dataset));
            }
        }
        let mut changed: Vec<SelectionId> = Vec::new();
        for target in targets {
            let rec = self.get(target)?;
            let sel_id = self.raw(rec.raw).selection;
            let mut mapped: Vec<usize> = match self.local_to_selection(rec) {
                Some(map) => local.iter().map(|&i| map[i]).collect(),
                None => local.to_vec(),
            };
            mapped.sort_unstable();
            mapped.dedup();
            let current = self.selections.get_mut(&sel_id).expect("selection exists");
            if *current != mapped {
                *current = mapped;
                if !changed.contains(&sel_id) {
                    changed.push(sel_id);
                }
            }
        }
        if changed.is_empty() {
            return Ok(());
        }
        let notify: Vec<DatasetId> = self
            .records
            .values()
            .filter(|r| changed.contains(&self.raw(r.raw).selection))
            .map(|r| r.id)
            .collect();
        for d in notify {
            self.bus.publish(EventKind::DatasetSelectionChanged, d);
        }
        Ok(())
    }

    /// The selected items of `dataset`, as sorted local indices.
    pub fn get_selection(&self, dataset: DatasetId) -> Result<Vec<usize>> {
        let rec = self.get(dataset)?;
        let sel = &self.selections[&self.raw(rec.raw).selection];
        Ok(match self.local_to_selection(rec) {
            None => {
                let count = self.item_count(dataset)?;
                sel.iter().copied().take_while(|&i| i < count).collect()
            }
            Some(map) => {
                // both sides are strictly increasing
                let mut out = Vec::new();
                let mut j = 0;
                for (local, &s) in map.iter().enumerate() {
                    while j < sel.len() && sel[j] < s {
                        j += 1;
                    }
                    if j == sel.len() {
                        break;
                    }
                    if sel[j] == s {
                        out.push(local);
                    }
                }
                out
            }
        })
    }

    pub fn clear_selections(&mut self) {
        for sel in self.selections.values_mut() {
            sel.clear();
        }
    }

    /// Groups datasets of equal item count so that their selections are kept
    /// in sync (in local index space).
    pub fn group_datasets(&mut self, ids: &[DatasetId]) -> Result<GroupId> {
        let mut members: Vec<DatasetId> = Vec::new();
        for &id in ids {
            if !members.contains(&id) {
                members.push(id);
            }
        }
        if members.len() < 2 {
            return Err(CoreError::GroupMismatch("a group needs at least two datasets".into()));
        }
        let counts = members
            .iter()
            .map(|&id| self.item_count(id))
            .collect::<Result<Vec<_>>>()?;
        if counts.windows(2).any(|w| w[0] != w[1]) {
            return Err(CoreError::GroupMismatch(format!(
                "item counts differ: {counts:?}"
            )));
        }
        let id = GroupId::random();
        for &m in &members {
            self.leave_group(m);
            self.get_mut(m)?.group = Some(id);
        }
        self.groups.insert(id, DatasetGroup { id, members });
        Ok(id)
    }

    fn leave_group(&mut self, id: DatasetId) {
        let Some(g) = self.records.get(&id).and_then(|r| r.group) else {
            return;
        };
        if let Some(group) = self.groups.get_mut(&g) {
            group.members.retain(|&m| m != id);
            if group.members.len() < 2 {
                let group = self.groups.shift_remove(&g).unwrap();
                for m in group.members {
                    if let Some(r) = self.records.get_mut(&m) {
                        r.group = None;
                    }
                }
            }
        }
        if let Some(r) = self.records.get_mut(&id) {
            r.group = None;
        }
    }

    pub fn groups(&self) -> impl Iterator<Item = &DatasetGroup> {
        self.groups.values()
    }

    pub fn group(&self, id: GroupId) -> Option<&DatasetGroup> {
        self.groups.get(&id)
    }

    /// Removes a dataset and its whole subtree. `DatasetRemoved` is emitted
    /// for every node, children before parents. Returns the removed ids in
    /// that order.
    pub fn remove_dataset(&mut self, id: DatasetId) -> Result<Vec<DatasetId>> {
        self.get(id)?;
        let mut order = Vec::new();
        self.post_order(id, &mut order);
        if let Some(p) = self.records[&id].parent {
            if let Some(parent) = self.records.get_mut(&p) {
                parent.children.retain(|&c| c != id);
            }
        }
        for &d in &order {
            self.leave_group(d);
            self.records.shift_remove(&d);
            self.bus.publish(EventKind::DatasetRemoved, d);
        }
        let live_raws: HashSet<RawId> = self.records.values().map(|r| r.raw).collect();
        self.raws.retain(|id, _| live_raws.contains(id));
        let live_sel: HashSet<SelectionId> = self.raws.values().map(|r| r.selection).collect();
        self.selections.retain(|id, _| live_sel.contains(id));
        Ok(order)
    }

    fn post_order(&self, id: DatasetId, out: &mut Vec<DatasetId>) {
        for &c in &self.records[&id].children {
            self.post_order(c, out);
        }
        out.push(id);
    }

    pub fn rename_dataset(&mut self, id: DatasetId, name: &str) -> Result<()> {
        self.get_mut(id)?.name = name.to_string();
        self.bus.publish(EventKind::DatasetRenamed, id);
        Ok(())
    }

    pub fn set_property(&mut self, id: DatasetId, key: &str, value: &str) -> Result<()> {
        self.get_mut(id)?
            .properties
            .insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn attach_action(&mut self, id: DatasetId, action: ActionId) -> Result<()> {
        let rec = self.get_mut(id)?;
        if !rec.attached_actions.contains(&action) {
            rec.attached_actions.push(action);
        }
        Ok(())
    }

    pub fn detach_action(&mut self, action: ActionId) {
        for rec in self.records.values_mut() {
            rec.attached_actions.retain(|&a| a != action);
        }
    }

    /// Dataset whose point payload backs `id`: image annotations resolve to
    /// their parent.
    pub fn point_source(&self, id: DatasetId) -> Result<DatasetId> {
        let rec = self.get(id)?;
        match self.raw(rec.raw).payload.kind() {
            PayloadKind::Image => rec
                .parent
                .ok_or_else(|| CoreError::Shape("image without parent".into())),
            _ => Ok(id),
        }
    }

    /// Materializes the requested rectangle of the effective point data.
    /// `dims` and `items` are local indices; `None` selects everything.
    pub fn get_data_view(
        &self,
        id: DatasetId,
        dims: Option<&[usize]>,
        items: Option<&[usize]>,
    ) -> Result<Matrix> {
        let source = self.point_source(id)?;
        let rec = self.get(source)?;
        let payload = self.raw(rec.raw).payload.clone();
        let points = payload.as_points().ok_or_else(|| {
            CoreError::Unsupported(format!(
                "{} data has no point values",
                payload.kind().as_str()
            ))
        })?;
        let count = self.item_count(source)?;
        let num_dims = points.num_dims();
        let all_dims: Vec<usize>;
        let dims = match dims {
            Some(d) => d,
            None => {
                all_dims = (0..num_dims).collect();
                &all_dims
            }
        };
        if let Some(&bad) = dims.iter().find(|&&d| d >= num_dims) {
            return Err(CoreError::OutOfRange {
                index: bad,
                len: num_dims,
            });
        }
        if let Some(items) = items {
            if let Some(&bad) = items.iter().find(|&&i| i >= count) {
                return Err(CoreError::OutOfRange {
                    index: bad,
                    len: count,
                });
            }
        }
        let raw_row = |local: usize| match &rec.subset_indices {
            Some(s) => s[local],
            None => local,
        };
        let rows: Vec<usize> = match items {
            Some(items) => items.iter().map(|&i| raw_row(i)).collect(),
            None => (0..count).map(raw_row).collect(),
        };
        let mut values = Vec::with_capacity(rows.len() * dims.len());
        for &r in &rows {
            let row = points.row(r);
            values.extend(dims.iter().map(|&d| row[d]));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols: dims.len(),
            values,
            dim_names: dims.iter().map(|&d| points.dim_names()[d].clone()).collect(),
        })
    }
}
