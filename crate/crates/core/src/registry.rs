//! Plugin registration, compatibility matching and instance bookkeeping.
//!
//! Plugins are registered statically as a [`PluginDescriptor`] plus a factory.
//! An instance is created from the context menu of one or more datasets
//! (its inputs); analytics and transformations derive their output dataset
//! under the first input and attach their settings to it.

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::actions::{ActionChange, ActionSpec};
use crate::core::Core;
use crate::error::{CoreError, Result};
use crate::ids::{ActionId, DatasetId, InstanceId};
use crate::payload::{PayloadKind, RawPayload};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PluginKind {
    DataType,
    View,
    Analytics,
    Transformation,
    Loader,
    Writer,
}

impl PluginKind {
    fn needs_inputs(self) -> bool {
        matches!(
            self,
            PluginKind::View | PluginKind::Analytics | PluginKind::Transformation | PluginKind::Writer
        )
    }

    /// Kinds whose instances produce an output dataset derived from their
    /// first input.
    pub fn derives_output(self) -> bool {
        matches!(self, PluginKind::Analytics | PluginKind::Transformation)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PluginDescriptor {
    /// Reverse-DNS style, unique in the registry.
    pub plugin_id: String,
    pub kind: PluginKind,
    pub display_name: String,
    pub accepted_input_kinds: BTreeSet<PayloadKind>,
    pub version: String,
}

impl PluginDescriptor {
    pub fn new(plugin_id: &str, kind: PluginKind, display_name: &str, accepts: &[PayloadKind]) -> Self {
        Self {
            plugin_id: plugin_id.to_string(),
            kind,
            display_name: display_name.to_string(),
            accepted_input_kinds: accepts.iter().copied().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Image datasets expose their parent's points, so point consumers
    /// accept them too.
    pub fn accepts(&self, kind: PayloadKind) -> bool {
        self.accepted_input_kinds.contains(&kind)
            || (kind == PayloadKind::Image && self.accepted_input_kinds.contains(&PayloadKind::Points))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstanceState {
    Created,
    Running,
    Paused,
    Finished,
    Failed,
}

impl InstanceState {
    pub fn is_busy(self) -> bool {
        matches!(self, InstanceState::Running | InstanceState::Paused)
    }
}

impl fmt::Display for InstanceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    Start,
    Pause,
    Resume,
    Cancel,
}

impl std::str::FromStr for Control {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start" => Ok(Control::Start),
            "pause" => Ok(Control::Pause),
            "resume" => Ok(Control::Resume),
            "cancel" => Ok(Control::Cancel),
            other => Err(CoreError::InvalidParameter(format!("unknown control `{other}`"))),
        }
    }
}

/// Behavior of a plugin instance. Every hook runs on the core context; long
/// computations belong on a worker thread that reports back through
/// [`Core::command_sender`](crate::core::Core::command_sender).
pub trait Plugin: Send + Any {
    /// The settings tree created for every instance before [`Plugin::init`].
    fn settings(&self) -> ActionSpec {
        ActionSpec::group("Settings", Vec::new())
    }

    /// Called once the instance has its inputs.
    fn init(&mut self, ctx: &mut PluginContext<'_>) -> Result<()>;

    /// Called for every change of an action owned by this instance.
    fn on_action(&mut self, _ctx: &mut PluginContext<'_>, _change: &ActionChange) -> Result<()> {
        Ok(())
    }

    fn control(&mut self, _ctx: &mut PluginContext<'_>, control: Control) -> Result<()> {
        Err(CoreError::Unsupported(format!("{control:?} on this plugin")))
    }

    /// Stops background work. Subscriptions and actions are removed by the
    /// core afterwards.
    fn teardown(&mut self, _ctx: &mut PluginContext<'_>) {}

    fn as_any(&self) -> &dyn Any;
}

pub type PluginFactory = Arc<dyn Fn() -> Box<dyn Plugin> + Send + Sync>;

#[derive(Clone, Debug)]
pub struct InstanceInfo {
    pub id: InstanceId,
    pub descriptor: Arc<PluginDescriptor>,
    pub inputs: Vec<DatasetId>,
    pub output: Option<DatasetId>,
    pub settings: ActionId,
    pub state: InstanceState,
    pub initialized: bool,
    /// Why the last run failed.
    pub error: Option<String>,
    /// Incremented for every started run; results of older runs are
    /// discarded.
    pub(crate) run: u64,
    /// Output to adopt instead of deriving a new one (archive restore).
    pub(crate) restore_output: Option<DatasetId>,
}

pub(crate) struct Slot {
    pub(crate) info: InstanceInfo,
    pub(crate) plugin: Option<Box<dyn Plugin>>,
}

#[derive(Default)]
pub struct PluginManager {
    registry: BTreeMap<String, (Arc<PluginDescriptor>, PluginFactory)>,
    pub(crate) instances: IndexMap<InstanceId, Slot>,
}

impl PluginManager {
    pub fn register(&mut self, descriptor: PluginDescriptor, factory: PluginFactory) -> Result<()> {
        if self.registry.contains_key(&descriptor.plugin_id) {
            return Err(CoreError::DuplicatePlugin(descriptor.plugin_id));
        }
        if descriptor.kind.needs_inputs() && descriptor.accepted_input_kinds.is_empty() {
            return Err(CoreError::InvalidParameter(format!(
                "{:?} plugin `{}` must accept at least one input kind",
                descriptor.kind, descriptor.plugin_id
            )));
        }
        self.registry
            .insert(descriptor.plugin_id.clone(), (Arc::new(descriptor), factory));
        Ok(())
    }

    pub fn descriptor(&self, plugin_id: &str) -> Result<Arc<PluginDescriptor>> {
        self.registry
            .get(plugin_id)
            .map(|(d, _)| d.clone())
            .ok_or_else(|| CoreError::not_found("plugin", plugin_id))
    }

    pub(crate) fn factory(&self, plugin_id: &str) -> Result<PluginFactory> {
        self.registry
            .get(plugin_id)
            .map(|(_, f)| f.clone())
            .ok_or_else(|| CoreError::not_found("plugin", plugin_id))
    }

    /// All descriptors, sorted by display name.
    pub fn descriptors(&self) -> Vec<Arc<PluginDescriptor>> {
        let mut all: Vec<_> = self.registry.values().map(|(d, _)| d.clone()).collect();
        all.sort_by(|a, b| a.display_name.cmp(&b.display_name).then(a.plugin_id.cmp(&b.plugin_id)));
        all
    }

    pub fn instance(&self, id: InstanceId) -> Result<&InstanceInfo> {
        self.instances
            .get(&id)
            .map(|s| &s.info)
            .ok_or_else(|| CoreError::not_found("plugin instance", id))
    }

    pub(crate) fn instance_mut(&mut self, id: InstanceId) -> Result<&mut InstanceInfo> {
        self.instances
            .get_mut(&id)
            .map(|s| &mut s.info)
            .ok_or_else(|| CoreError::not_found("plugin instance", id))
    }

    pub fn instances(&self) -> impl Iterator<Item = &InstanceInfo> {
        self.instances.values().map(|s| &s.info)
    }

    /// Borrows the plugin object of an instance, for inspection.
    pub fn plugin<T: Plugin>(&self, id: InstanceId) -> Option<&T> {
        self.instances
            .get(&id)?
            .plugin
            .as_ref()?
            .as_any()
            .downcast_ref::<T>()
    }
}

/// What a plugin hook may touch: the whole core plus its own instance
/// record.
pub struct PluginContext<'a> {
    pub core: &'a mut Core,
    pub instance: InstanceId,
}

impl PluginContext<'_> {
    pub fn info(&self) -> &InstanceInfo {
        self.core
            .plugins()
            .instance(self.instance)
            .expect("context refers to a live instance")
    }

    pub fn inputs(&self) -> Vec<DatasetId> {
        self.info().inputs.clone()
    }

    pub fn input(&self) -> Result<DatasetId> {
        self.info()
            .inputs
            .first()
            .copied()
            .ok_or_else(|| CoreError::Incompatible("instance has no input".into()))
    }

    pub fn output(&self) -> Option<DatasetId> {
        self.info().output
    }

    pub fn settings(&self) -> ActionId {
        self.info().settings
    }

    /// Looks up a settings action by `/`-separated path.
    pub fn setting(&self, path: &str) -> Result<ActionId> {
        self.core.actions().find_path(self.settings(), path)
    }

    /// Whether the instance is being re-created from an archive that holds
    /// its last output; analytics then wait for an explicit start.
    pub fn is_restoring(&self) -> bool {
        self.info().restore_output.is_some()
    }

    pub fn set_state(&mut self, state: InstanceState) {
        self.core.set_instance_state(self.instance, state);
    }

    pub fn progress(&mut self, iteration: usize, total: usize) {
        self.core.report_progress(self.instance, iteration, total);
    }

    /// Derives the output dataset under the first input and attaches the
    /// settings tree to it. When restoring an archive the saved output is
    /// adopted instead and `payload` is ignored.
    pub fn derive_output(&mut self, name: &str, payload: RawPayload) -> Result<DatasetId> {
        let info = self.info().clone();
        let output = match info.restore_output {
            Some(existing) if self.core.data().contains(existing) => existing,
            _ => {
                let input = self.input()?;
                self.core.data_mut().derive_dataset(input, name, payload)?
            }
        };
        self.core.data_mut().attach_action(output, info.settings)?;
        let slot = self.core.plugins_mut().instance_mut(self.instance)?;
        slot.output = Some(output);
        slot.restore_output = None;
        Ok(output)
    }
}
