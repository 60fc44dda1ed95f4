//! PCA projection of the input onto its leading principal components.

use std::any::Any;

use nalgebra::DMatrix;

use super::worker::{steer, Worker};
use super::{fired, integral, run_once, value_changed, PCA};
use crate::actions::{ActionChange, ActionSpec, ActionValue};
use crate::analytics::pca::pca_fit;
use crate::core::Core;
use crate::error::Result;
use crate::payload::{PayloadKind, PointPayload, RawPayload};
use crate::registry::{Control, Plugin, PluginContext, PluginDescriptor, PluginKind};

pub fn register(core: &mut Core) -> Result<()> {
    core.register_plugin(
        PluginDescriptor::new(PCA, PluginKind::Analytics, "PCA", &[PayloadKind::Points]),
        || Box::<PcaPlugin>::default(),
    )
}

#[derive(Default)]
pub struct PcaPlugin {
    worker: Worker,
}

fn names(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("PC{i}")).collect()
}

impl PcaPlugin {
    fn components(ctx: &PluginContext<'_>) -> Result<usize> {
        Ok(integral(ctx, "Components")?.max(1) as usize)
    }

    fn start(&mut self, ctx: &mut PluginContext<'_>) -> Result<()> {
        let k = Self::components(ctx)?;
        let view = ctx.core.data().get_data_view(ctx.input()?, None, None)?;
        run_once(&mut self.worker, ctx, move || {
            let data = DMatrix::from_row_slice(view.rows, view.cols, &view.to_f64());
            let fit = pca_fit(&data, k)?;
            let values = (0..view.rows)
                .flat_map(|r| (0..k).map(move |c| (r, c)))
                .map(|(r, c)| fit.projected[(r, c)] as f32)
                .collect();
            Ok(RawPayload::Points(PointPayload::new(values, view.rows, k, names(k))?))
        })
    }
}

impl Plugin for PcaPlugin {
    fn settings(&self) -> ActionSpec {
        ActionSpec::group(
            "PCA",
            vec![
                ActionSpec::new("Components", ActionValue::integral(2, 1, 1000)),
                ActionSpec::new("Start", ActionValue::Trigger),
            ],
        )
    }

    fn init(&mut self, ctx: &mut PluginContext<'_>) -> Result<()> {
        let restoring = ctx.is_restoring();
        let n = ctx.core.data().item_count(ctx.input()?)?;
        let k = Self::components(ctx)?;
        let zeros = PointPayload::new(vec![0.0; n * k], n, k, names(k))?;
        ctx.derive_output("PCA", RawPayload::Points(zeros))?;
        if restoring {
            Ok(())
        } else {
            self.start(ctx)
        }
    }

    fn on_action(&mut self, ctx: &mut PluginContext<'_>, change: &ActionChange) -> Result<()> {
        if fired(ctx, change, "Start") || value_changed(ctx, change, "Components") {
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
