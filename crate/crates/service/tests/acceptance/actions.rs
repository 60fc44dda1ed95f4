//! Linked actions reach a fixed point: after any operation every action
//! linked to a pool entry holds the entry's value, and an update that does
//! not change anything produces no notification. A plain model of the pool
//! predicts every value and every change record.

use std::collections::BTreeSet;

use rand::rngs::StdRng;
use rand::Rng;
use vault_core::actions::{ActionChange, ActionManager, ActionSpec, ActionValue, ValueUpdate};
use vault_core::ids::ActionId;

use crate::oracle::rng;
use crate::{ensure, err, Outcome};

const CASES: usize = 300;
const OPS: usize = 80;
const MAX_ENTRIES: usize = 10;
const MAX_PER_ENTRY: usize = 20;

#[derive(Clone, Copy, PartialEq)]
enum Flavor {
    Decimal,
    Integral,
    Toggle,
    Text,
}

const FLAVORS: [Flavor; 4] = [Flavor::Decimal, Flavor::Integral, Flavor::Toggle, Flavor::Text];

fn initial(rng: &mut StdRng, flavor: Flavor) -> ActionValue {
    match flavor {
        Flavor::Decimal => {
            let min = rng.random_range(-10..=0) as f64;
            let max = min + rng.random_range(1..=20) as f64;
            ActionValue::decimal(min, min, max)
        }
        Flavor::Integral => {
            let min = rng.random_range(-50..=0);
            ActionValue::integral(min, min, min + rng.random_range(1..=100))
        }
        Flavor::Toggle => ActionValue::Toggle(rng.random_bool(0.5)),
        Flavor::Text => ActionValue::String(format!("t{}", rng.random_range(0..4))),
    }
}

/// A random update for `current` and the value it must produce.
fn update_for(rng: &mut StdRng, current: &ActionValue) -> (ValueUpdate, ActionValue) {
    let mut next = current.clone();
    let update = match &mut next {
        ActionValue::Decimal { value, min, max, .. } => {
            // quarter steps, sometimes outside the range to exercise clamping
            let v = rng.random_range((*min as i64 - 2) * 4..=(*max as i64 + 2) * 4) as f64 / 4.0;
            *value = v.max(*min).min(*max);
            ValueUpdate::Decimal(v)
        }
        ActionValue::Integral { value, min, max } => {
            let v = rng.random_range(*min - 5..=*max + 5);
            *value = v.max(*min).min(*max);
            ValueUpdate::Integral(v)
        }
        ActionValue::Toggle(b) => {
            *b = rng.random_bool(0.5);
            ValueUpdate::Toggle(*b)
        }
        ActionValue::String(s) => {
            *s = format!("t{}", rng.random_range(0..4));
            ValueUpdate::String(s.clone())
        }
        other => unreachable!("no updates generated for {other:?}"),
    };
    (update, next)
}

struct ModelAction {
    id: ActionId,
    flavor: Flavor,
    value: ActionValue,
    link: Option<usize>,
}

struct ModelEntry {
    name: String,
    flavor: Flavor,
    value: ActionValue,
}

struct Model {
    actions: Vec<ModelAction>,
    entries: Vec<ModelEntry>,
}

impl Model {
    fn members(&self, entry: usize) -> Vec<usize> {
        (0..self.actions.len()).filter(|&a| self.actions[a].link == Some(entry)).collect()
    }

    fn check(&self, am: &ActionManager, what: &str) -> Result<(), String> {
        for (i, a) in self.actions.iter().enumerate() {
            let got = am.get(a.id).map_err(err)?;
            ensure(got.value == a.value, || format!("{what}: action {i} holds {:?}, expected {:?}", got.value, a.value))?;
            let link = a.link.map(|e| self.entries[e].name.clone());
            ensure(got.link == link, || format!("{what}: action {i} link"))?;
        }
        for (e, entry) in self.entries.iter().enumerate() {
            let pool = am.pool_entry(&entry.name).map_err(err)?;
            ensure(pool.value == entry.value, || format!("{what}: pool entry {e} value"))?;
            let subs: BTreeSet<ActionId> = pool.subscribers.iter().copied().collect();
            let want: BTreeSet<ActionId> = self.members(e).into_iter().map(|a| self.actions[a].id).collect();
            ensure(subs == want, || format!("{what}: pool entry {e} subscribers"))?;
            // the fixed point itself
            for &s in &pool.subscribers {
                ensure(am.value(s).map_err(err)? == &pool.value, || format!("{what}: linked values differ"))?;
            }
        }
        Ok(())
    }
}

pub fn fixed_point() -> Outcome {
    let mut rng = rng(0xac7);
    let mut sets = 0usize;
    let mut resets = 0usize;
    let mut largest = 0usize;
    for case in 0..CASES {
        let mut am = ActionManager::new();
        let mut model = Model {
            actions: Vec::new(),
            entries: Vec::new(),
        };
        let entry_count = rng.random_range(1..=MAX_ENTRIES);
        for e in 0..entry_count {
            let flavor = FLAVORS[rng.random_range(0..FLAVORS.len())];
            let size = rng.random_range(1..=MAX_PER_ENTRY);
            largest = largest.max(size);
            let name = format!("shared {e}");
            let mut entry_value = None;
            for k in 0..size {
                let value = initial(&mut rng, flavor);
                let id = am.create(ActionSpec::new(format!("a{e}.{k}"), value.clone())).map_err(err)?;
                let mut value = value;
                if k == 0 {
                    am.publish(id, &name).map_err(err)?;
                    entry_value = Some(value.clone());
                } else {
                    am.connect(id, &name).map_err(err)?;
                    value = entry_value.clone().unwrap();
                }
                model.actions.push(ModelAction {
                    id,
                    flavor,
                    value,
                    link: Some(e),
                });
            }
            model.entries.push(ModelEntry {
                name,
                flavor,
                value: entry_value.unwrap(),
            });
        }
        for k in 0..rng.random_range(0..=5) {
            let flavor = FLAVORS[rng.random_range(0..FLAVORS.len())];
            let value = initial(&mut rng, flavor);
            let id = am.create(ActionSpec::new(format!("loose{k}"), value.clone())).map_err(err)?;
            model.actions.push(ModelAction {
                id,
                flavor,
                value,
                link: None,
            });
        }
        model.check(&am, &format!("case {case} setup"))?;

        for op in 0..OPS {
            let what = format!("case {case} op {op}");
            let a = rng.random_range(0..model.actions.len());
            match rng.random_range(0..10) {
                0 if model.actions[a].link.is_some() => {
                    am.disconnect(model.actions[a].id).map_err(err)?;
                    model.actions[a].link = None;
                }
                1 => {
                    let fits: Vec<usize> = (0..model.entries.len())
                        .filter(|&e| model.entries[e].flavor == model.actions[a].flavor)
                        .filter(|&e| model.members(e).len() < MAX_PER_ENTRY)
                        .collect();
                    if fits.is_empty() {
                        continue;
                    }
                    let e = fits[rng.random_range(0..fits.len())];
                    am.connect(model.actions[a].id, &model.entries[e].name).map_err(err)?;
                    model.actions[a].link = Some(e);
                    model.actions[a].value = model.entries[e].value.clone();
                }
                _ => {
                    let (update, next) = update_for(&mut rng, &model.actions[a].value);
                    let id = model.actions[a].id;
                    let changes = am.set_value(id, update.clone()).map_err(err)?;
                    sets += 1;
                    let mut want = Vec::new();
                    if next != model.actions[a].value {
                        want.push(ActionChange::Value { action: id, via_link: false });
                        model.actions[a].value = next.clone();
                        if let Some(e) = model.actions[a].link {
                            model.entries[e].value = next.clone();
                            want.push(ActionChange::Pool {
                                public_name: model.entries[e].name.clone(),
                            });
                            for peer in model.members(e) {
                                if peer != a {
                                    want.push(ActionChange::Value {
                                        action: model.actions[peer].id,
                                        via_link: true,
                                    });
                                    model.actions[peer].value = next.clone();
                                }
                            }
                        }
                    }
                    let sorted = |v: &[ActionChange]| {
                        let mut s: Vec<String> = v.iter().map(|c| format!("{c:?}")).collect();
                        s.sort();
                        s
                    };
                    ensure(sorted(&changes) == sorted(&want), || {
                        format!("{what}: {} change records, expected {}", changes.len(), want.len())
                    })?;
                    // the same update again is a no-op, here and via every peer
                    let again = am.set_value(id, update).map_err(err)?;
                    ensure(again.is_empty(), || format!("{what}: identical re-set notified {again:?}"))?;
                    if let Some(e) = model.actions[a].link {
                        for peer in model.members(e) {
                            let same = am.replace_value(model.actions[peer].id, next.clone()).map_err(err)?;
                            ensure(same.is_empty(), || format!("{what}: identical value via a peer notified"))?;
                            resets += 1;
                        }
                    }
                    resets += 1;
                }
            }
            model.check(&am, &what)?;
        }
    }
    Ok(format!(
        "{CASES} pools (up to {largest} actions per entry), {sets} updates, {resets} identical re-sets silent"
    ))
}
