//! The single-writer core: data, actions, plugin instances and layout,
//! mutated only on the thread that owns the [`Core`].
//!
//! Worker threads never touch this state. They hold a [`CommandSender`] and
//! submit closures that the owner runs in [`Core::process_pending`] (or while
//! blocked in [`Core::run_until`]).

use std::collections::VecDeque;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::actions::{ActionChange, ActionManager, ActionNode, PermissionFlags, PresetStore, ValueUpdate};
use crate::data::DataManager;
use crate::error::{CoreError, Result};
use crate::events::EventBus;
use crate::ids::{ActionId, DatasetId, InstanceId};
use crate::layout::LayoutNode;
use crate::registry::{
    Control, InstanceInfo, InstanceState, Plugin, PluginContext, PluginDescriptor, PluginFactory,
    PluginKind, PluginManager, Slot,
};

pub type Command = Box<dyn FnOnce(&mut Core) + Send>;

/// Handle for submitting work to the core from any thread.
#[derive(Clone)]
pub struct CommandSender(Sender<Command>);

impl CommandSender {
    /// Returns `false` once the core has been dropped.
    pub fn send(&self, command: impl FnOnce(&mut Core) + Send + 'static) -> bool {
        self.0.send(Box::new(command)).is_ok()
    }
}

/// Session-level notifications that are not dataset events.
#[derive(Clone, Debug, PartialEq)]
pub enum Notice {
    Progress {
        instance: InstanceId,
        iteration: usize,
        total: usize,
    },
    State {
        instance: InstanceId,
        state: InstanceState,
    },
    Action(ActionChange),
    InstanceCreated(InstanceId),
    InstanceDestroyed(InstanceId),
    Layout,
    Warning(String),
}

type Listener = Box<dyn FnMut(&Notice) + Send>;

/// Optional overrides used when re-creating an instance from a saved
/// workspace.
#[derive(Clone, Debug, Default)]
pub struct InstanceSetup {
    pub id: Option<InstanceId>,
    pub settings: Option<ActionNode>,
    pub output: Option<DatasetId>,
}

pub struct Core {
    bus: Arc<EventBus>,
    data: DataManager,
    actions: ActionManager,
    plugins: PluginManager,
    layout: Option<LayoutNode>,
    locked: bool,
    title: String,
    presets: PresetStore,
    tx: Sender<Command>,
    rx: Receiver<Command>,
    listeners: Vec<(u64, Listener)>,
    next_listener: u64,
    pending: VecDeque<ActionChange>,
    routing: bool,
}

impl Default for Core {
    fn default() -> Self {
        Self::new()
    }
}

impl Core {
    /// An empty session without any registered plugins.
    pub fn new() -> Self {
        let bus = Arc::new(EventBus::new());
        let (tx, rx) = mpsc::channel();
        Self {
            data: DataManager::new(bus.clone()),
            bus,
            actions: ActionManager::new(),
            plugins: PluginManager::default(),
            layout: None,
            locked: false,
            title: String::new(),
            presets: PresetStore::default_location(),
            tx,
            rx,
            listeners: Vec::new(),
            next_listener: 0,
            pending: VecDeque::new(),
            routing: false,
        }
    }

    /// An empty session with the bundled analytics, loaders, writers and
    /// views registered.
    pub fn with_builtin_plugins() -> Self {
        let mut core = Self::new();
        crate::plugins::register_builtins(&mut core).expect("builtin plugin ids are unique");
        core
    }

    pub fn bus(&self) -> &Arc<EventBus> {
        &self.bus
    }

    pub fn data(&self) -> &DataManager {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut DataManager {
        &mut self.data
    }

    pub fn actions(&self) -> &ActionManager {
        &self.actions
    }

    pub(crate) fn actions_mut(&mut self) -> &mut ActionManager {
        &mut self.actions
    }

    pub fn plugins(&self) -> &PluginManager {
        &self.plugins
    }

    pub(crate) fn plugins_mut(&mut self) -> &mut PluginManager {
        &mut self.plugins
    }

    pub fn presets(&self) -> &PresetStore {
        &self.presets
    }

    pub fn set_preset_store(&mut self, store: PresetStore) {
        self.presets = store;
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn set_title(&mut self, title: &str) {
        self.title = title.to_string();
    }

    // ---- command queue ----------------------------------------------------

    pub fn command_sender(&self) -> CommandSender {
        CommandSender(self.tx.clone())
    }

    /// Runs every command queued so far; returns how many ran.
    pub fn process_pending(&mut self) -> usize {
        let mut n = 0;
        while let Ok(cmd) = self.rx.try_recv() {
            cmd(self);
            n += 1;
        }
        n
    }

    /// Processes commands until `done` holds or `timeout` elapses. Returns
    /// whether `done` was reached.
    pub fn run_until(&mut self, timeout: Duration, mut done: impl FnMut(&Core) -> bool) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            self.process_pending();
            if done(self) {
                return true;
            }
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            match self.rx.recv_timeout(deadline - now) {
                Ok(cmd) => cmd(self),
                Err(RecvTimeoutError::Timeout) => return done(self),
                Err(RecvTimeoutError::Disconnected) => unreachable!("core holds a sender"),
            }
        }
    }

    /// Blocks (processing commands) until the instance is neither running
    /// nor paused.
    pub fn wait_for(&mut self, instance: InstanceId, timeout: Duration) -> Result<InstanceState> {
        self.plugins.instance(instance)?;
        let finished = self.run_until(timeout, |core| {
            core.plugins
                .instance(instance)
                .map_or(true, |i| !i.state.is_busy())
        });
        if !finished {
            return Err(CoreError::Timeout(format!(
                "instance {instance} still running after {timeout:?}"
            )));
        }
        Ok(self
            .plugins
            .instance(instance)
            .map(|i| i.state)
            .unwrap_or(InstanceState::Finished))
    }

    // ---- notices ----------------------------------------------------------

    pub fn add_listener(&mut self, listener: impl FnMut(&Notice) + Send + 'static) -> u64 {
        self.next_listener += 1;
        self.listeners.push((self.next_listener, Box::new(listener)));
        self.next_listener
    }

    pub fn remove_listener(&mut self, id: u64) {
        self.listeners.retain(|(i, _)| *i != id);
    }

    pub(crate) fn notify(&mut self, notice: Notice) {
        for (_, l) in &mut self.listeners {
            l(&notice);
        }
    }

    pub fn report_progress(&mut self, instance: InstanceId, iteration: usize, total: usize) {
        self.notify(Notice::Progress {
            instance,
            iteration,
            total,
        });
    }

    pub fn set_instance_state(&mut self, instance: InstanceId, state: InstanceState) {
        let Ok(info) = self.plugins.instance_mut(instance) else {
            return;
        };
        if info.state != state {
            info.state = state;
            self.notify(Notice::State { instance, state });
        }
    }

    /// Marks the start of a new background run and returns its number.
    pub fn begin_run(&mut self, instance: InstanceId) -> Result<u64> {
        let info = self.plugins.instance_mut(instance)?;
        info.run += 1;
        info.error = None;
        Ok(info.run)
    }

    /// Whether `run` is still the instance's latest run.
    pub fn is_current_run(&self, instance: InstanceId, run: u64) -> bool {
        self.plugins.instance(instance).is_ok_and(|i| i.run == run)
    }

    pub fn fail_instance(&mut self, instance: InstanceId, message: String) {
        if let Ok(info) = self.plugins.instance_mut(instance) {
            info.error = Some(message.clone());
        }
        self.set_instance_state(instance, InstanceState::Failed);
        self.notify(Notice::Warning(format!("instance {instance}: {message}")));
    }

    // ---- actions ----------------------------------------------------------

    pub fn set_action_value(&mut self, id: ActionId, update: ValueUpdate) -> Result<()> {
        let changes = self.actions.set_value(id, update)?;
        self.route(changes);
        Ok(())
    }

    pub fn replace_action_value(&mut self, id: ActionId, value: crate::actions::ActionValue) -> Result<()> {
        let changes = self.actions.replace_value(id, value)?;
        self.route(changes);
        Ok(())
    }

    pub fn set_action_flags(&mut self, id: ActionId, flags: PermissionFlags) -> Result<()> {
        let changes = self.actions.set_flags(id, flags)?;
        self.route(changes);
        Ok(())
    }

    pub fn publish_action(&mut self, id: ActionId, public_name: &str) -> Result<()> {
        let changes = self.actions.publish(id, public_name)?;
        self.route(changes);
        Ok(())
    }

    pub fn connect_action(&mut self, id: ActionId, public_name: &str) -> Result<()> {
        let changes = self.actions.connect(id, public_name)?;
        self.route(changes);
        Ok(())
    }

    pub fn disconnect_action(&mut self, id: ActionId) -> Result<()> {
        let changes = self.actions.disconnect(id)?;
        self.route(changes);
        Ok(())
    }

    /// Overwrites the values of the tree under `root` from a preset
    /// document.
    pub fn apply_preset_document(&mut self, root: ActionId, doc: &serde_json::Value) -> Result<()> {
        let changes = self.actions.apply_document(root, doc)?;
        self.route(changes);
        Ok(())
    }

    /// Delivers action changes to listeners and to the owning plugin
    /// instances. Changes raised while delivering are queued behind the
    /// current batch.
    fn route(&mut self, changes: Vec<ActionChange>) {
        self.pending.extend(changes);
        if self.routing {
            return;
        }
        self.routing = true;
        while let Some(change) = self.pending.pop_front() {
            self.notify(Notice::Action(change.clone()));
            let owner = change
                .action()
                .and_then(|a| self.actions.get(a).ok())
                .and_then(|a| a.owner);
            let Some(owner) = owner else { continue };
            // settings of an unbound instance are read when it initializes
            if !self.plugins.instance(owner).is_ok_and(|i| i.initialized) {
                continue;
            }
            let delivered = self.call_plugin(owner, |p, ctx| p.on_action(ctx, &change));
            if let Ok(Err(e)) = delivered {
                self.fail_instance(owner, e.to_string());
            }
        }
        self.routing = false;
    }

    // ---- plugins ----------------------------------------------------------

    pub fn register_plugin(
        &mut self,
        descriptor: PluginDescriptor,
        factory: impl Fn() -> Box<dyn Plugin> + Send + Sync + 'static,
    ) -> Result<()> {
        let factory: PluginFactory = Arc::new(factory);
        self.plugins.register(descriptor, factory)
    }

    /// Descriptors that accept `dataset`, sorted by display name.
    pub fn list_compatible(
        &self,
        dataset: DatasetId,
        kind: Option<PluginKind>,
    ) -> Result<Vec<Arc<PluginDescriptor>>> {
        let payload_kind = self.data.kind(dataset)?;
        Ok(self
            .plugins
            .descriptors()
            .into_iter()
            .filter(|d| kind.is_none_or(|k| d.kind == k))
            .filter(|d| d.accepts(payload_kind))
            .collect())
    }

    fn check_inputs(&self, descriptor: &PluginDescriptor, inputs: &[DatasetId]) -> Result<()> {
        for &input in inputs {
            let kind = self.data.kind(input)?;
            if !descriptor.accepts(kind) {
                return Err(CoreError::Incompatible(format!(
                    "`{}` does not accept {} data",
                    descriptor.plugin_id,
                    kind.as_str()
                )));
            }
        }
        Ok(())
    }

    pub fn instantiate(&mut self, plugin_id: &str, inputs: &[DatasetId]) -> Result<InstanceId> {
        let (id, _) = self.instantiate_with(plugin_id, inputs, InstanceSetup::default())?;
        Ok(id)
    }

    /// Creates an instance. Instances without inputs stay unbound (and
    /// uninitialized) until [`Core::bind`], except loaders, which never take
    /// inputs. Returns the id plus warnings about links that could not be
    /// restored from `setup.settings`.
    pub fn instantiate_with(
        &mut self,
        plugin_id: &str,
        inputs: &[DatasetId],
        setup: InstanceSetup,
    ) -> Result<(InstanceId, Vec<String>)> {
        let descriptor = self.plugins.descriptor(plugin_id)?;
        self.check_inputs(&descriptor, inputs)?;
        let plugin = (self.plugins.factory(plugin_id)?)();
        let id = match setup.id {
            Some(id) if self.plugins.instance(id).is_ok() => {
                return Err(CoreError::InvalidId(format!("duplicate instance id {id}")))
            }
            Some(id) => id,
            None => loop {
                let id = InstanceId::random();
                if self.plugins.instance(id).is_err() {
                    break id;
                }
            },
        };
        let (settings, warnings) = match setup.settings {
            Some(node) => {
                let restored = self.actions.restore_node(node, Some(id))?;
                (restored.root, restored.warnings)
            }
            None => (self.actions.create_owned(plugin.settings(), Some(id))?, Vec::new()),
        };
        let info = InstanceInfo {
            id,
            descriptor: descriptor.clone(),
            inputs: inputs.to_vec(),
            output: None,
            settings,
            state: InstanceState::Created,
            initialized: false,
            error: None,
            run: 0,
            restore_output: setup.output,
        };
        self.plugins.instances.insert(
            id,
            Slot {
                info,
                plugin: Some(plugin),
            },
        );
        self.notify(Notice::InstanceCreated(id));
        if !inputs.is_empty() || descriptor.kind == PluginKind::Loader {
            if let Err(e) = self.initialize(id) {
                self.destroy_unchecked(id);
                return Err(e);
            }
        }
        Ok((id, warnings))
    }

    fn initialize(&mut self, id: InstanceId) -> Result<()> {
        self.call_plugin(id, |p, ctx| p.init(ctx))??;
        let info = self.plugins.instance_mut(id)?;
        info.initialized = true;
        // producers that do not derive (loaders) keep their saved output
        if let Some(saved) = info.restore_output.take() {
            if info.output.is_none() && self.data.contains(saved) {
                self.plugins.instance_mut(id)?.output = Some(saved);
            }
        }
        Ok(())
    }

    /// Binds inputs to an unbound instance, or rebinds a view.
    pub fn bind(&mut self, instance: InstanceId, inputs: &[DatasetId]) -> Result<()> {
        let info = self.plugins.instance(instance)?.clone();
        self.check_inputs(&info.descriptor, inputs)?;
        if inputs.is_empty() {
            return Err(CoreError::Incompatible("nothing to bind".into()));
        }
        if info.initialized {
            if info.descriptor.kind != PluginKind::View {
                return Err(CoreError::Unsupported(format!(
                    "rebinding a {:?} instance",
                    info.descriptor.kind
                )));
            }
            self.bus.unsubscribe_owner(instance);
        }
        self.plugins.instance_mut(instance)?.inputs = inputs.to_vec();
        self.initialize(instance)
    }

    pub fn control(&mut self, instance: InstanceId, control: Control) -> Result<()> {
        self.call_plugin(instance, |p, ctx| p.control(ctx, control))?
    }

    /// Tears an instance down: stops its work, drops its subscriptions and
    /// removes its settings (disconnecting links, leaving pool entries).
    /// Unknown ids are ignored.
    pub fn destroy(&mut self, instance: InstanceId) -> Result<()> {
        if self.plugins.instance(instance).is_err() {
            return Ok(());
        }
        if self.locked && self.layout.as_ref().is_some_and(|l| l.contains(instance)) {
            return Err(CoreError::Locked);
        }
        self.destroy_unchecked(instance);
        Ok(())
    }

    fn destroy_unchecked(&mut self, instance: InstanceId) {
        let _ = self.call_plugin(instance, |p, ctx| p.teardown(ctx));
        self.bus.unsubscribe_owner(instance);
        for root in self.actions.roots_owned_by(instance) {
            if let Ok(removed) = self.actions.remove_tree(root) {
                for a in removed {
                    self.data.detach_action(a);
                }
            }
        }
        if let Some(layout) = self.layout.take() {
            let had = layout.contains(instance);
            self.layout = layout.without(instance);
            if had {
                self.notify(Notice::Layout);
            }
        }
        self.plugins.instances.shift_remove(&instance);
        self.notify(Notice::InstanceDestroyed(instance));
    }

    /// Runs `f` with the instance's plugin taken out of its slot so that it
    /// can receive `&mut Core`. Fails for unknown instances and re-entrant
    /// calls into the same plugin.
    pub(crate) fn call_plugin<R>(
        &mut self,
        instance: InstanceId,
        f: impl FnOnce(&mut dyn Plugin, &mut PluginContext<'_>) -> R,
    ) -> Result<R> {
        let slot = self
            .plugins
            .instances
            .get_mut(&instance)
            .ok_or_else(|| CoreError::not_found("plugin instance", instance))?;
        let mut plugin = slot.plugin.take().ok_or_else(|| {
            CoreError::Unsupported(format!("re-entrant call into instance {instance}"))
        })?;
        let mut ctx = PluginContext {
            core: self,
            instance,
        };
        let r = f(plugin.as_mut(), &mut ctx);
        if let Some(slot) = self.plugins.instances.get_mut(&instance) {
            slot.plugin = Some(plugin);
        }
        Ok(r)
    }

    // ---- datasets ---------------------------------------------------------

    /// Removes a dataset subtree and destroys instances that were bound to
    /// or produced any of the removed datasets.
    pub fn remove_dataset(&mut self, id: DatasetId) -> Result<Vec<DatasetId>> {
        let removed = self.data.remove_dataset(id)?;
        let doomed: Vec<InstanceId> = self
            .plugins
            .instances()
            .filter(|i| {
                i.inputs.iter().any(|d| removed.contains(d))
                    || i.output.is_some_and(|o| removed.contains(&o))
            })
            .map(|i| i.id)
            .collect();
        for i in doomed {
            self.destroy_unchecked(i);
        }
        Ok(removed)
    }

    // ---- layout -----------------------------------------------------------

    pub fn layout(&self) -> Option<&LayoutNode> {
        self.layout.as_ref()
    }

    pub fn is_locked(&self) -> bool {
        self.locked
    }

    pub fn set_locked(&mut self, locked: bool) {
        self.locked = locked;
    }

    /// Replaces the layout. Refused while the workspace is locked.
    pub fn set_layout(&mut self, layout: Option<LayoutNode>) -> Result<()> {
        if self.locked {
            return Err(CoreError::Locked);
        }
        self.install_layout(layout)
    }

    pub(crate) fn install_layout(&mut self, layout: Option<LayoutNode>) -> Result<()> {
        if let Some(l) = &layout {
            l.validate()?;
            for id in l.instance_ids() {
                self.plugins.instance(id)?;
            }
        }
        self.layout = layout;
        self.notify(Notice::Layout);
        Ok(())
    }

    /// Destroys every instance, dataset and pool entry.
    pub fn reset(&mut self) {
        let instances: Vec<_> = self.plugins.instances().map(|i| i.id).collect();
        for i in instances {
            self.destroy_unchecked(i);
        }
        let roots: Vec<_> = self.data.roots().map(|r| r.id).collect();
        for r in roots {
            let _ = self.data.remove_dataset(r);
        }
        self.actions.clear_pool();
        self.layout = None;
        self.locked = false;
        self.title.clear();
    }
}
