//! Round trips: action trees through their JSON documents, point data
//! through MVBIN, and whole sessions through project archives.

use rand::rngs::StdRng;
use rand::Rng;
use serde_json::{json, Value};
use vault_core::actions::{ActionManager, ActionSpec, ActionValue, PermissionFlags};
use vault_core::colormap::ColorMapName;
use vault_core::core::Core;
use vault_core::ids::{DatasetId, InstanceId};
use vault_core::io::mvbin;
use vault_core::layout::{LayoutNode, Orientation};
use vault_core::payload::{Cluster, ClusterPayload, ImagePayload, PointPayload, RawPayload};
use vault_core::project;
use vault_service::Session;

use crate::oracle::{random_subset, rng};
use crate::{ensure, err, Outcome};

const TREE_CASES: usize = 1200;
const MVBIN_CASES: usize = 400;
const SESSION_CASES: usize = 40;

const NAME_PIECES: [&str; 8] = ["gain", "Größe", "名前", "a b", "\"q\"", "tab\t", "x", "∑"];

fn random_name(rng: &mut StdRng) -> String {
    (0..rng.random_range(1..=3)).map(|_| NAME_PIECES[rng.random_range(0..NAME_PIECES.len())]).collect()
}

fn random_flags(rng: &mut StdRng) -> PermissionFlags {
    PermissionFlags {
        enabled: rng.random_bool(0.8),
        visible: rng.random_bool(0.8),
        may_publish: rng.random_bool(0.8),
        may_connect: rng.random_bool(0.8),
        may_disconnect: rng.random_bool(0.8),
    }
}

fn random_leaf(rng: &mut StdRng) -> ActionValue {
    match rng.random_range(0..9) {
        0 => {
            let min = rng.random_range(-1e6..1e6);
            let max = min + rng.random_range(0.0..1e6);
            ActionValue::Decimal {
                value: rng.random_range(min..=max),
                min,
                max,
                step: rng.random_range(1e-6..10.0),
                decimals: rng.random_range(0..8),
                suffix: if rng.random_bool(0.5) { " px".into() } else { String::new() },
            }
        }
        1 => {
            let min = rng.random_range(i64::MIN / 2..0);
            let max = rng.random_range(0..i64::MAX / 2);
            ActionValue::integral(rng.random_range(min..=max), min, max)
        }
        2 => ActionValue::String(random_name(rng)),
        3 => {
            let choices: Vec<String> = (0..rng.random_range(0..5)).map(|i| format!("{}{i}", random_name(rng))).collect();
            let current = if choices.is_empty() { -1 } else { rng.random_range(0..choices.len() as i64) };
            ActionValue::Option { choices, current }
        }
        4 => ActionValue::Toggle(rng.random_bool(0.5)),
        5 => ActionValue::Trigger,
        6 => ActionValue::Color(rng.random()),
        7 => {
            let maps = [ColorMapName::Viridis, ColorMapName::Plasma, ColorMapName::Grayscale, ColorMapName::Coolwarm];
            ActionValue::ColorMap1D(maps[rng.random_range(0..maps.len())])
        }
        _ => {
            let mut selected: Vec<usize> = (0..rng.random_range(0..6)).map(|_| rng.random_range(0..50)).collect();
            selected.sort_unstable();
            selected.dedup();
            ActionValue::DimensionPicker {
                dataset: rng.random_bool(0.5).then(|| DatasetId::from_u128(rng.random())),
                selected,
            }
        }
    }
}

fn random_tree(rng: &mut StdRng, depth: usize) -> ActionSpec {
    let spec = if depth < 3 && rng.random_bool(0.5) {
        let children = (0..rng.random_range(0..=4)).map(|_| random_tree(rng, depth + 1)).collect();
        ActionSpec::group(random_name(rng), children)
    } else {
        ActionSpec::new(random_name(rng), random_leaf(rng))
    };
    spec.with_flags(random_flags(rng))
}

fn action_trees(rng: &mut StdRng) -> Result<usize, String> {
    let mut links = 0;
    for case in 0..TREE_CASES {
        let mut source = ActionManager::new();
        let root = source.create(random_tree(rng, 0)).map_err(err)?;
        for (k, id) in source.tree_ids(root).map_err(err)?.into_iter().enumerate() {
            if rng.random_bool(0.3) && source.publish(id, &format!("pub {k}")).is_ok() {
                links += 1;
            }
        }
        let before = source.to_node(root).map_err(err)?;
        let text = serde_json::to_string(&source.serialize_tree(root).map_err(err)?).map_err(err)?;

        let mut target = ActionManager::new();
        for entry in source.pool() {
            target.insert_pool_entry(&entry.public_name, entry.value.clone()).map_err(err)?;
        }
        let doc: Value = serde_json::from_str(&text).map_err(err)?;
        let restored = target.deserialize_tree(&doc, None).map_err(err)?;
        ensure(restored.warnings.is_empty(), || format!("tree {case}: {:?}", restored.warnings))?;
        let after = target.to_node(restored.root).map_err(err)?;
        ensure(after == before, || format!("tree {case}: restored tree differs"))?;
        let again = serde_json::to_string(&target.serialize_tree(restored.root).map_err(err)?).map_err(err)?;
        ensure(again == text, || format!("tree {case}: second serialization differs"))?;
    }
    Ok(links)
}

fn special_f32(rng: &mut StdRng) -> f32 {
    match rng.random_range(0..8) {
        0 => f32::from_bits(0x7fc0_0000 | rng.random_range(0..0x0040_0000u32)),
        1 => f32::from_bits(0xff80_0001 + rng.random_range(0..0x007f_fffeu32)),
        2 => f32::INFINITY,
        3 => f32::NEG_INFINITY,
        4 => -0.0,
        5 => f32::from_bits(rng.random_range(1..0x0080_0000u32)),
        6 => f32::from_bits(rng.random()),
        _ => rng.random_range(-1e3..1e3),
    }
}

fn mvbin_cases(rng: &mut StdRng) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(err)?;
    for case in 0..MVBIN_CASES {
        let n = rng.random_range(0..60);
        let d = rng.random_range(1..=8);
        let values: Vec<f32> = (0..n * d).map(|_| special_f32(rng)).collect();
        let names: Vec<String> = (0..d).map(|j| format!("{}{j}", random_name(rng))).collect();
        let payload = PointPayload::new(values.clone(), n, d, names.clone()).map_err(err)?;
        let bytes = mvbin::encode(&payload);
        let want_len = 24 + 4 * n * d + names.iter().map(|s| 4 + s.len()).sum::<usize>();
        ensure(bytes.len() == want_len, || format!("mvbin {case}: {} bytes, expected {want_len}", bytes.len()))?;
        ensure(&bytes[..8] == b"MVBIN\0\0\x01", || format!("mvbin {case}: magic"))?;
        ensure(bytes[8..16] == (n as u64).to_le_bytes() && bytes[16..24] == (d as u64).to_le_bytes(), || {
            format!("mvbin {case}: header extents")
        })?;
        for (k, v) in values.iter().enumerate() {
            ensure(bytes[24 + 4 * k..28 + 4 * k] == v.to_bits().to_le_bytes(), || format!("mvbin {case}: value {k} bytes"))?;
        }
        let back = if case % 10 == 0 {
            let path = dir.path().join(format!("{case}.bin"));
            mvbin::write_file(&path, &payload).map_err(err)?;
            mvbin::read_file(&path).map_err(err)?
        } else {
            mvbin::decode(&bytes).map_err(err)?
        };
        ensure(back.num_items() == n && back.num_dims() == d && back.dim_names() == names, || {
            format!("mvbin {case}: shape or names")
        })?;
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure(bits(back.values()) == bits(&values), || format!("mvbin {case}: values not bit-exact"))?;
        ensure(mvbin::encode(&back) == bytes, || format!("mvbin {case}: re-encoding differs"))?;
        ensure(mvbin::decode(&bytes[..bytes.len() - 1]).is_err(), || format!("mvbin {case}: truncated file accepted"))?;
    }
    Ok(())
}

fn points(rng: &mut StdRng, n: usize, d: usize) -> RawPayload {
    let values = (0..n * d).map(|_| rng.random_range(-5.0f32..5.0)).collect();
    RawPayload::Points(PointPayload::with_default_names(values, n, d).unwrap())
}

fn instantiate(session: &mut Session, plugin: &str, input: DatasetId, params: Value) -> Result<InstanceId, String> {
    let analysis = plugin == "org.vault.pca";
    let reply = session
        .request(
            "plugin.instantiate",
            json!({"pluginId": plugin, "inputs": [input.to_string()], "params": params, "start": analysis, "wait": analysis}),
        )
        .map_err(err)?;
    reply.payload["id"].as_str().ok_or("no instance id")?.parse().map_err(err)
}

/// A random session: a few point sets with subsets, derived data, clusters,
/// images and groups, plus views and analyses with non-default settings,
/// links, a layout and selections.
fn random_session(rng: &mut StdRng) -> Result<Session, String> {
    let mut session = Session::new();
    let mut points_sets: Vec<DatasetId> = Vec::new();
    let mut images: Vec<DatasetId> = Vec::new();
    let budget: usize = rng.random_range(2..=10);
    let count = |s: &Session| s.core().data().len();
    {
        let data = session.core_mut().data_mut();
        let (w, h) = (rng.random_range(2..6), rng.random_range(2..6));
        let n = w * h;
        let d = rng.random_range(2..5);
        let root = data.add_dataset(points(rng, n, d), "scene", None).map_err(err)?;
        points_sets.push(root);
        if rng.random_bool(0.7) {
            images.push(data.add_dataset(RawPayload::Image(ImagePayload { width: w, height: h }), "scene image", Some(root)).map_err(err)?);
        }
        if rng.random_bool(0.5) {
            let twin = data.add_dataset(points(rng, n, 2), "twin", None).map_err(err)?;
            data.group_datasets(&[root, twin]).map_err(err)?;
            points_sets.push(twin);
        }
    }
    while count(&session) < budget.saturating_sub(2) {
        let src = points_sets[rng.random_range(0..points_sets.len())];
        let data = session.core_mut().data_mut();
        let n = data.item_count(src).map_err(err)?;
        match rng.random_range(0..4) {
            0 => {
                let keep = rng.random_range(0.3..0.9);
                let mut local = random_subset(rng, n, keep);
                if local.is_empty() {
                    local.push(0);
                }
                points_sets.push(data.create_subset(src, &local, &random_name(rng)).map_err(err)?);
            }
            1 => points_sets.push(data.derive_dataset(src, &random_name(rng), points(rng, n, 2)).map_err(err)?),
            2 => {
                let k = rng.random_range(1..=3);
                let mut members = vec![Vec::new(); k];
                for i in 0..n {
                    members[rng.random_range(0..k)].push(i);
                }
                let clusters = members
                    .into_iter()
                    .enumerate()
                    .map(|(c, members)| Cluster {
                        name: format!("c{c}"),
                        color: rng.random(),
                        members,
                    })
                    .collect();
                data.derive_dataset(src, "labels", RawPayload::Clusters(ClusterPayload::new(clusters))).map_err(err)?;
            }
            _ => {
                let m = rng.random_range(3..20);
                let name = random_name(rng);
                points_sets.push(data.add_dataset(points(rng, m, 3), &name, None).map_err(err)?);
            }
        }
    }

    let mut views = Vec::new();
    let mut instances = 0;
    let max_instances = rng.random_range(1..=5);
    while instances < max_instances {
        let src = points_sets[rng.random_range(0..points_sets.len())];
        let n = session.core().data().item_count(src).map_err(err)?;
        match rng.random_range(0..3) {
            0 if count(&session) < 10 && n >= 3 => {
                let d = session.core().data().dim_count(src).map_err(err)?.unwrap_or(1);
                let k = rng.random_range(1..=d.min(n - 1).max(1));
                instantiate(&mut session, "org.vault.pca", src, json!({"Components": k}))?;
            }
            1 if !images.is_empty() => {
                let img = images[rng.random_range(0..images.len())];
                views.push(instantiate(&mut session, "org.vault.imageview", img, json!({"Opacity": rng.random_range(0..=4) as f64 / 4.0}))?);
            }
            _ => {
                let params = json!({"Point size": rng.random_range(1..=40), "Opacity": rng.random_range(0..=4) as f64 / 4.0});
                views.push(instantiate(&mut session, "org.vault.scatterplot", src, params)?);
            }
        }
        instances += 1;
    }

    let core = session.core_mut();
    let setting = |core: &Core, instance: InstanceId, name: &str| -> Option<vault_core::ids::ActionId> {
        let root = core.plugins().instance(instance).ok()?.settings;
        core.actions().tree_ids(root).ok()?.into_iter().find(|&a| core.actions().get(a).is_ok_and(|x| x.name == name))
    };
    if views.len() >= 2 {
        if let (Some(a), Some(b)) = (setting(core, views[0], "Opacity"), setting(core, views[1], "Opacity")) {
            core.publish_action(a, "shared opacity").map_err(err)?;
            core.connect_action(b, "shared opacity").map_err(err)?;
        }
        let layout = LayoutNode::split(Orientation::H, 0.25 * rng.random_range(1..4) as f64, LayoutNode::leaf(views[0]), LayoutNode::leaf(views[1]));
        core.set_layout(Some(layout)).map_err(err)?;
        core.set_locked(rng.random_bool(0.5));
    }
    let ids: Vec<DatasetId> = core.data().records().map(|r| r.id).collect();
    for _ in 0..3 {
        let id = ids[rng.random_range(0..ids.len())];
        if let Ok(n) = core.data().item_count(id) {
            let pick = random_subset(rng, n, 0.5);
            core.data_mut().set_selection(id, &pick).map_err(err)?;
        }
    }
    core.set_title(&random_name(rng));
    Ok(session)
}

fn sessions(rng: &mut StdRng) -> Result<(usize, usize), String> {
    let (mut datasets, mut instances) = (0, 0);
    for case in 0..SESSION_CASES {
        let session = random_session(rng)?;
        let core = session.core();
        datasets += core.data().len();
        instances += core.plugins().instances().count();
        let saved = project::project_bytes(core).map_err(err)?;
        ensure(project::project_bytes(core).map_err(err)? == saved, || {
            format!("session {case}: consecutive saves differ")
        })?;

        let mut loaded = Core::with_builtin_plugins();
        let report = project::load_project_bytes(&mut loaded, saved.clone()).map_err(err)?;
        loaded.process_pending();
        ensure(report.skipped.is_empty() && report.unbound.is_empty() && report.warnings.is_empty(), || {
            format!("session {case}: load reported {report:?}")
        })?;
        ensure(project::project_doc(&loaded).map_err(err)? == project::project_doc(core).map_err(err)?, || {
            format!("session {case}: data hierarchy differs after loading")
        })?;
        ensure(project::workspace_doc(&loaded).map_err(err)? == project::workspace_doc(core).map_err(err)?, || {
            format!("session {case}: workspace differs after loading")
        })?;
        for rec in core.data().records() {
            let a = core.data().payload(rec.id).map_err(err)?;
            let b = loaded.data().payload(rec.id).map_err(err)?;
            let same = match (a.as_points(), b.as_points()) {
                (Some(p), Some(q)) => {
                    p.values().iter().map(|v| v.to_bits()).eq(q.values().iter().map(|v| v.to_bits()))
                        && p.dim_names() == q.dim_names()
                }
                _ => a == b,
            };
            ensure(same, || format!("session {case}: payload of `{}` differs", rec.name))?;
            ensure(loaded.data().get_selection(rec.id).map_err(err)?.is_empty(), || {
                format!("session {case}: selections are not part of a project")
            })?;
        }
        ensure(project::project_bytes(&loaded).map_err(err)? == saved, || {
            format!("session {case}: saving the loaded session gives other bytes")
        })?;
    }
    Ok((datasets, instances))
}

pub fn round_trips() -> Outcome {
    let mut rng = rng(0x5e71a1);
    let links = action_trees(&mut rng)?;
    mvbin_cases(&mut rng)?;
    let (datasets, instances) = sessions(&mut rng)?;
    Ok(format!(
        "{TREE_CASES} action trees ({links} links), {MVBIN_CASES} MVBIN payloads, \
         {SESSION_CASES} sessions ({datasets} datasets, {instances} instances)"
    ))
}
