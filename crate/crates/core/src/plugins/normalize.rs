//! Per-dimension normalization into a derived point set.

use std::any::Any;

use super::worker::{steer, Worker};
use super::{choice, fired, run_once, value_changed, NORMALIZE};
use crate::actions::{ActionChange, ActionSpec, ActionValue};
use crate::analytics::normalize::{normalize, NormalizeMode};
use crate::core::Core;
use crate::error::Result;
use crate::payload::{PayloadKind, RawPayload};
use crate::registry::{Control, Plugin, PluginContext, PluginDescriptor, PluginKind};

pub fn register(core: &mut Core) -> Result<()> {
    core.register_plugin(
        PluginDescriptor::new(NORMALIZE, PluginKind::Transformation, "Normalize", &[PayloadKind::Points]),
        || Box::<NormalizePlugin>::default(),
    )
}

#[derive(Default)]
pub struct NormalizePlugin {
    worker: Worker,
}

impl NormalizePlugin {
    fn start(&mut self, ctx: &mut PluginContext<'_>) -> Result<()> {
        let mode: NormalizeMode = choice(ctx, "Mode")?.parse()?;
        let mut view = ctx.core.data().get_data_view(ctx.input()?, None, None)?;
        run_once(&mut self.worker, ctx, move || {
            view.values = normalize(&view.values, view.rows, view.cols, mode);
            Ok(RawPayload::Points(view.into_payload()?))
        })
    }
}

impl Plugin for NormalizePlugin {
    fn settings(&self) -> ActionSpec {
        let modes: Vec<&str> = NormalizeMode::ALL.iter().map(|m| m.as_str()).collect();
        ActionSpec::group(
            "Normalize",
            vec![
                ActionSpec::new("Mode", ActionValue::option(&modes, 0)),
                ActionSpec::new("Start", ActionValue::Trigger),
            ],
        )
    }

    fn init(&mut self, ctx: &mut PluginContext<'_>) -> Result<()> {
        let restoring = ctx.is_restoring();
        let view = ctx.core.data().get_data_view(ctx.input()?, None, None)?;
        ctx.derive_output("Normalized", RawPayload::Points(view.into_payload()?))?;
        if restoring {
            Ok(())
        } else {
            self.start(ctx)
        }
    }

    fn on_action(&mut self, ctx: &mut PluginContext<'_>, change: &ActionChange) -> Result<()> {
        if fired(ctx, change, "Start") || value_changed(ctx, change, "Mode") {
            self.start(ctx)
        } else {
            Ok(())
        }
    }

    fn control(&mut self, ctx: &mut PluginContext<'_>, control: Control) -> Result<()> {
        match control {
            Control::Start => self.start(ctx),
            other => steer(&mut self.worker, ctx, other),
        }
    }

    fn teardown(&mut self, _ctx: &mut PluginContext<'_>) {
        self.worker.stop();
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
