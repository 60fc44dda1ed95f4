//! The bundled plugins: analytics, loaders, writers and headless views.

pub mod io;
pub mod meanshift;
pub mod normalize;
pub mod pca;
pub mod tsne;
pub mod views;
pub mod worker;

use crate::actions::{ActionChange, ActionValue};
use crate::core::Core;
use crate::error::{CoreError, Result};
use crate::ids::{ActionId, DatasetId};
use crate::payload::RawPayload;
use crate::registry::PluginContext;

pub use worker::{RunControl, RunHandle, Worker};

pub const PCA: &str = "org.vault.pca";
pub const TSNE: &str = "org.vault.tsne";
pub const MEAN_SHIFT: &str = "org.vault.meanshift";
pub const NORMALIZE: &str = "org.vault.normalize";
pub const SCATTERPLOT: &str = "org.vault.scatterplot";
pub const IMAGE_VIEW: &str = "org.vault.imageview";
pub const CSV_LOADER: &str = "org.vault.csv-loader";
pub const BIN_LOADER: &str = "org.vault.bin-loader";
pub const IMAGE_LOADER: &str = "org.vault.image-loader";
pub const CSV_WRITER: &str = "org.vault.csv-writer";
pub const BIN_WRITER: &str = "org.vault.bin-writer";

pub fn register_builtins(core: &mut Core) -> Result<()> {
    pca::register(core)?;
    tsne::register(core)?;
    meanshift::register(core)?;
    normalize::register(core)?;
    views::register(core)?;
    io::register(core)
}

fn value(ctx: &PluginContext<'_>, name: &str) -> Result<ActionValue> {
    let id = ctx.setting(name)?;
    Ok(ctx.core.actions().value(id)?.clone())
}

fn wrong_kind(name: &str, want: &str) -> CoreError {
    CoreError::KindMismatch {
        expected: want.to_string(),
        found: format!("setting `{name}`"),
    }
}

pub(crate) fn decimal(ctx: &PluginContext<'_>, name: &str) -> Result<f64> {
    value(ctx, name)?.as_decimal().ok_or_else(|| wrong_kind(name, "Decimal"))
}

pub(crate) fn integral(ctx: &PluginContext<'_>, name: &str) -> Result<i64> {
    value(ctx, name)?.as_integral().ok_or_else(|| wrong_kind(name, "Integral"))
}

pub(crate) fn toggle(ctx: &PluginContext<'_>, name: &str) -> Result<bool> {
    value(ctx, name)?.as_toggle().ok_or_else(|| wrong_kind(name, "Toggle"))
}

pub(crate) fn string(ctx: &PluginContext<'_>, name: &str) -> Result<String> {
    value(ctx, name)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| wrong_kind(name, "String"))
}

pub(crate) fn choice(ctx: &PluginContext<'_>, name: &str) -> Result<String> {
    value(ctx, name)?
        .as_choice()
        .map(str::to_string)
        .ok_or_else(|| wrong_kind(name, "Option"))
}

/// Whether `change` concerns the setting `name`.
pub(crate) fn concerns(ctx: &PluginContext<'_>, change: &ActionChange, name: &str) -> bool {
    let target: Option<ActionId> = ctx.setting(name).ok();
    target.is_some() && change.action() == target
}

pub(crate) fn fired(ctx: &PluginContext<'_>, change: &ActionChange, name: &str) -> bool {
    matches!(change, ActionChange::Fired { .. }) && concerns(ctx, change, name)
}

pub(crate) fn value_changed(ctx: &PluginContext<'_>, change: &ActionChange, name: &str) -> bool {
    matches!(change, ActionChange::Value { .. }) && concerns(ctx, change, name)
}

/// Starts a single-shot computation on `worker` whose result replaces the
/// payload of the instance's output.
pub(crate) fn run_once(
    worker: &mut Worker,
    ctx: &mut PluginContext<'_>,
    compute: impl FnOnce() -> Result<RawPayload> + Send + 'static,
) -> Result<()> {
    let output: DatasetId = ctx
        .output()
        .ok_or_else(|| CoreError::Incompatible("instance has no output".into()))?;
    worker.start(ctx, move |h| {
        if !h.checkpoint() {
            return;
        }
        let result = compute();
        if h.control.is_cancelled() {
            return;
        }
        match result {
            Ok(payload) => {
                let instance = h.instance;
                h.post(move |core| {
                    match core.data_mut().set_payload(output, payload) {
                        Ok(()) => {
                            core.report_progress(instance, 1, 1);
                            core.set_instance_state(instance, crate::registry::InstanceState::Finished);
                        }
                        Err(e) => core.fail_instance(instance, e.to_string()),
                    }
                });
            }
            Err(e) => h.finish(Err(e)),
        }
    })
}
