//! Background runs for plugins: one worker thread per run, cooperative
//! pause/cancel at iteration boundaries, results posted as core commands.

use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use crate::core::{CommandSender, Core};
use crate::error::Result;
use crate::ids::InstanceId;
use crate::registry::{InstanceState, PluginContext};

#[derive(Default)]
struct Flags {
    paused: bool,
    cancelled: bool,
}

/// Flags shared between a plugin and its worker.
#[derive(Default)]
pub struct RunControl {
    flags: Mutex<Flags>,
    wake: Condvar,
}

impl RunControl {
    fn lock(&self) -> std::sync::MutexGuard<'_, Flags> {
        self.flags.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn pause(&self) {
        self.lock().paused = true;
    }

    pub fn resume(&self) {
        self.lock().paused = false;
        self.wake.notify_all();
    }

    pub fn cancel(&self) {
        self.lock().cancelled = true;
        self.wake.notify_all();
    }

    pub fn is_cancelled(&self) -> bool {
        self.lock().cancelled
    }

    /// Blocks while paused. Returns `false` once the run is cancelled.
    pub fn checkpoint(&self) -> bool {
        let mut f = self.lock();
        while f.paused && !f.cancelled {
            f = self.wake.wait(f).unwrap_or_else(|e| e.into_inner());
        }
        !f.cancelled
    }
}

/// What a worker thread gets: its control flags and a way to post commands
/// that are dropped if a newer run has started in the meantime.
#[derive(Clone)]
pub struct RunHandle {
    pub instance: InstanceId,
    pub run: u64,
    pub control: Arc<RunControl>,
    tx: CommandSender,
}

impl RunHandle {
    pub fn checkpoint(&self) -> bool {
        self.control.checkpoint()
    }

    pub fn post(&self, command: impl FnOnce(&mut Core) + Send + 'static) -> bool {
        let (instance, run) = (self.instance, self.run);
        self.tx.send(move |core: &mut Core| {
            if core.is_current_run(instance, run) {
                command(core);
            }
        })
    }

    /// Reports the end of the run: `Finished` on success (or cancellation),
    /// `Failed` with the message otherwise.
    pub fn finish(&self, result: Result<()>) {
        let instance = self.instance;
        self.post(move |core| match result {
            Ok(()) => core.set_instance_state(instance, InstanceState::Finished),
            Err(e) => core.fail_instance(instance, e.to_string()),
        });
    }
}

/// The plugin-side half: at most one live run.
#[derive(Default)]
pub struct Worker {
    control: Option<Arc<RunControl>>,
    handle: Option<JoinHandle<()>>,
}

impl Worker {
    /// Cancels any previous run, then starts `job` on a new thread and puts
    /// the instance into `Running`.
    pub fn start(&mut self, ctx: &mut PluginContext<'_>, job: impl FnOnce(RunHandle) + Send + 'static) -> Result<()> {
        self.stop();
        let run = ctx.core.begin_run(ctx.instance)?;
        let control = Arc::new(RunControl::default());
        let handle = RunHandle {
            instance: ctx.instance,
            run,
            control: control.clone(),
            tx: ctx.core.command_sender(),
        };
        ctx.set_state(InstanceState::Running);
        self.control = Some(control);
        self.handle = Some(
            std::thread::Builder::new()
                .name(format!("worker-{}", ctx.instance))
                .spawn(move || job(handle))?,
        );
        Ok(())
    }

    /// Cancels and joins the current run, if any.
    pub fn stop(&mut self) {
        if let Some(c) = self.control.take() {
            c.cancel();
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }

    pub fn control(&self) -> Option<&Arc<RunControl>> {
        self.control.as_ref()
    }

    pub fn is_alive(&self) -> bool {
        self.handle.as_ref().is_some_and(|h| !h.is_finished())
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Shared pause/resume/cancel handling for plugins built on [`Worker`].
/// `Start` is left to the caller.
pub(crate) fn steer(worker: &mut Worker, ctx: &mut PluginContext<'_>, control: crate::registry::Control) -> Result<()> {
    use crate::registry::Control;
    let state = ctx.info().state;
    match control {
        Control::Pause if state == InstanceState::Running => {
            if let Some(c) = worker.control() {
                c.pause();
            }
            ctx.set_state(InstanceState::Paused);
        }
        Control::Resume if state == InstanceState::Paused => {
            if let Some(c) = worker.control() {
                c.resume();
            }
            ctx.set_state(InstanceState::Running);
        }
        Control::Cancel if state.is_busy() => {
            worker.stop();
            // queued results of the cancelled run become stale
            ctx.core.begin_run(ctx.instance)?;
            ctx.set_state(InstanceState::Finished);
        }
        Control::Pause | Control::Resume | Control::Cancel => {}
        Control::Start => unreachable!("callers handle Start"),
    }
    Ok(())
}
