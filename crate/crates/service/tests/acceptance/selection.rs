//! Selection sharing along derive/subset chains and between grouped
//! datasets. The oracle keeps, for every dataset, the root index of each of
//! its items and derives every expected selection from that alone.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use vault_core::data::DataManager;
use vault_core::events::{EventBus, EventFilter, EventKind};
use vault_core::ids::DatasetId;
use vault_core::payload::{PointPayload, RawPayload};

use crate::oracle::{random_subset, rng};
use crate::{ensure, err, Outcome};

const CHAIN_CASES: usize = 600;
const GROUP_CASES: usize = 400;

fn points(rng: &mut StdRng, n: usize) -> RawPayload {
    let d = rng.random_range(1..=3);
    let values = (0..n * d).map(|_| rng.random::<f32>()).collect();
    RawPayload::Points(PointPayload::with_default_names(values, n, d).unwrap())
}

struct Node {
    id: DatasetId,
    depth: usize,
    /// Root index of every local item.
    to_root: Vec<usize>,
}

/// Random local indices of an `n`-item dataset, unsorted and with repeats.
fn messy_indices(rng: &mut StdRng, n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let k = rng.random_range(0..=n + n / 2);
    (0..k).map(|_| rng.random_range(0..n)).collect()
}

pub fn chains() -> Outcome {
    let mut rng = rng(0x5e1ec7);
    let mut checked = 0usize;
    let mut deepest = 0;
    for case in 0..CHAIN_CASES {
        let bus = Arc::new(EventBus::new());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let sink = seen.clone();
        bus.subscribe(EventFilter::kind(EventKind::DatasetSelectionChanged), move |e| {
            sink.lock().unwrap().push(e.dataset)
        });
        let mut dm = DataManager::new(bus);
        let n = rng.random_range(1..=200);
        let root = dm.add_dataset(points(&mut rng, n), "root", None).map_err(err)?;
        let mut nodes = vec![Node {
            id: root,
            depth: 0,
            to_root: (0..n).collect(),
        }];
        // an unrelated dataset must never be touched
        let other = dm.add_dataset(points(&mut rng, n), "other", None).map_err(err)?;

        let extra = rng.random_range(1..=8);
        for k in 0..extra {
            let candidates: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].depth < 5).collect();
            let src = &nodes[candidates[rng.random_range(0..candidates.len())]];
            let (src_id, depth, src_map) = (src.id, src.depth, src.to_root.clone());
            let node = if rng.random_bool(0.5) {
                let keep = rng.random_range(0.2..0.9);
                let mut local = random_subset(&mut rng, src_map.len(), keep);
                if local.is_empty() {
                    local.push(rng.random_range(0..src_map.len()));
                }
                let id = dm.create_subset(src_id, &local, &format!("s{k}")).map_err(err)?;
                Node {
                    id,
                    depth: depth + 1,
                    to_root: local.iter().map(|&l| src_map[l]).collect(),
                }
            } else {
                let payload = points(&mut rng, src_map.len());
                let id = dm.derive_dataset(src_id, &format!("d{k}"), payload).map_err(err)?;
                Node {
                    id,
                    depth: depth + 1,
                    to_root: src_map,
                }
            };
            deepest = deepest.max(node.depth);
            nodes.push(node);
        }

        let root_sel = dm.selection_object(root).map_err(err)?;
        for node in &nodes {
            ensure(dm.selection_object(node.id).map_err(err)? == root_sel, || {
                format!("case {case}: selection object differs from the root's")
            })?;
            ensure(dm.root_of(node.id).map_err(err)? == root, || format!("case {case}: wrong root"))?;
            ensure(dm.item_count(node.id).map_err(err)? == node.to_root.len(), || {
                format!("case {case}: item count")
            })?;
        }
        ensure(dm.selection_object(other).map_err(err)? != root_sel, || {
            format!("case {case}: unrelated dataset shares the selection")
        })?;

        let mut global: BTreeSet<usize> = BTreeSet::new();
        for round in 0..4 {
            let x = &nodes[rng.random_range(0..nodes.len())];
            let mut local = messy_indices(&mut rng, x.to_root.len());
            local.shuffle(&mut rng);
            seen.lock().unwrap().clear();
            dm.set_selection(x.id, &local).map_err(err)?;
            let next: BTreeSet<usize> = local.iter().map(|&l| x.to_root[l]).collect();
            let changed = next != global;
            global = next;

            let mut want_local: Vec<usize> = local.clone();
            want_local.sort_unstable();
            want_local.dedup();
            ensure(dm.get_selection(x.id).map_err(err)? == want_local, || {
                format!("case {case} round {round}: local round trip")
            })?;
            for node in &nodes {
                let want: Vec<usize> = (0..node.to_root.len()).filter(|&j| global.contains(&node.to_root[j])).collect();
                ensure(dm.get_selection(node.id).map_err(err)? == want, || {
                    format!("case {case} round {round}: selection seen through a relative differs")
                })?;
                checked += 1;
            }
            ensure(dm.get_selection(other).map_err(err)?.is_empty(), || {
                format!("case {case}: unrelated selection changed")
            })?;
            let notified: BTreeSet<DatasetId> = seen.lock().unwrap().iter().copied().collect();
            let want: BTreeSet<DatasetId> = if changed { nodes.iter().map(|n| n.id).collect() } else { BTreeSet::new() };
            ensure(notified == want, || format!("case {case} round {round}: change notifications"))?;
        }
    }
    Ok(format!("{CHAIN_CASES} hierarchies, depth up to {deepest}, {checked} selections compared"))
}

pub fn groups() -> Outcome {
    let mut rng = rng(0x6a0c);
    let mut rejected = 0;
    for case in 0..GROUP_CASES {
        let mut dm = DataManager::new(Arc::new(EventBus::new()));
        let n = rng.random_range(1..=100);
        let k = rng.random_range(2..=4);
        let members: Vec<DatasetId> = (0..k)
            .map(|i| dm.add_dataset(points(&mut rng, n), &format!("m{i}"), None))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        let outsider = dm.add_dataset(points(&mut rng, n), "outsider", None).map_err(err)?;
        let m = n + rng.random_range(1..=20);
        let odd = dm.add_dataset(points(&mut rng, m), "odd", None).map_err(err)?;

        let mut attempt = members.clone();
        attempt.insert(rng.random_range(0..=attempt.len()), odd);
        ensure(dm.group_datasets(&attempt).is_err(), || {
            format!("case {case}: counts {n} and {m} were grouped")
        })?;
        ensure(dm.records().all(|r| r.group.is_none()), || {
            format!("case {case}: rejected group left members behind")
        })?;
        rejected += 1;

        let group = dm.group_datasets(&members).map_err(err)?;
        for round in 0..4 {
            let who = members[rng.random_range(0..k)];
            let local = messy_indices(&mut rng, n);
            dm.set_selection(who, &local).map_err(err)?;
            let mut want = local;
            want.sort_unstable();
            want.dedup();
            for &member in &members {
                ensure(dm.get(member).map_err(err)?.group == Some(group), || format!("case {case}: membership"))?;
                ensure(dm.get_selection(member).map_err(err)? == want, || {
                    format!("case {case} round {round}: member selection differs")
                })?;
            }
            ensure(dm.get_selection(outsider).map_err(err)?.is_empty(), || {
                format!("case {case}: selection leaked outside the group")
            })?;
        }
    }
    Ok(format!("{GROUP_CASES} groups kept in sync, {rejected} mismatched groups refused"))
}
