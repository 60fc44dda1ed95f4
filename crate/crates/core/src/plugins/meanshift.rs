//! Mean-shift clustering of the first two dimensions of the input.

use std::any::Any;

use super::worker::{steer, Worker};
use super::{decimal, fired, integral, run_once, value_changed, MEAN_SHIFT};
use crate::actions::{ActionChange, ActionSpec, ActionValue};
use crate::analytics::kde::{bounding_box, DEFAULT_RESOLUTION, MIN_RESOLUTION};
use crate::analytics::meanshift::mean_shift;
use crate::core::Core;
use crate::error::{CoreError, Result};
use crate::payload::{ClusterPayload, PayloadKind, RawPayload};
use crate::registry::{Control, Plugin, PluginContext, PluginDescriptor, PluginKind};

pub fn register(core: &mut Core) -> Result<()> {
    core.register_plugin(
        PluginDescriptor::new(MEAN_SHIFT, PluginKind::Analytics, "Mean-shift clustering", &[PayloadKind::Points]),
        || Box::<MeanShiftPlugin>::default(),
    )
}

/// The `Sigma` setting shared by density-based plugins: a fraction of the
/// longest extent of the data.
pub fn sigma_spec() -> ActionSpec {
    ActionSpec::new(
        "Sigma",
        ActionValue::Decimal {
            value: 0.05,
            min: 0.001,
            max: 1.0,
            step: 0.001,
            decimals: 3,
            suffix: String::new(),
        },
    )
}

/// Turns a relative bandwidth into data units for row-major 2-D `points`.
/// Without extent the fraction is taken as absolute.
pub fn absolute_sigma(points: &[f64], fraction: f64) -> f64 {
    let b = bounding_box(points);
    let extent = (b[1] - b[0]).max(b[3] - b[2]);
    if extent.is_finite() && extent > 0.0 {
        fraction * extent
    } else {
        fraction
    }
}

#[derive(Default)]
pub struct MeanShiftPlugin {
    worker: Worker,
}

impl MeanShiftPlugin {
    fn start(&mut self, ctx: &mut PluginContext<'_>) -> Result<()> {
        let fraction = decimal(ctx, "Sigma")?;
        let resolution = integral(ctx, "Resolution")?.max(MIN_RESOLUTION as i64) as usize;
        let input = ctx.input()?;
        let dims = ctx.core.data().dim_count(input)?.unwrap_or(0);
        if dims < 2 {
            return Err(CoreError::Incompatible(format!(
                "mean-shift needs two dimensions, input has {dims}"
            )));
        }
        let view = ctx.core.data().get_data_view(input, Some(&[0, 1]), None)?;
        run_once(&mut self.worker, ctx, move || {
            let points = view.to_f64();
            let sigma = absolute_sigma(&points, fraction);
            Ok(RawPayload::Clusters(mean_shift(&points, sigma, resolution)?.clusters))
        })
    }
}

impl Plugin for MeanShiftPlugin {
    fn settings(&self) -> ActionSpec {
        ActionSpec::group(
            "Mean-shift",
            vec![
                sigma_spec(),
                ActionSpec::new(
                    "Resolution",
                    ActionValue::integral(DEFAULT_RESOLUTION as i64, MIN_RESOLUTION as i64, 2048),
                ),
                ActionSpec::new("Start", ActionValue::Trigger),
            ],
        )
    }

    fn init(&mut self, ctx: &mut PluginContext<'_>) -> Result<()> {
        let restoring = ctx.is_restoring();
        ctx.derive_output("Clusters", RawPayload::Clusters(ClusterPayload::default()))?;
        if restoring {
            Ok(())
        } else {
            self.start(ctx)
        }
    }

    fn on_action(&mut self, ctx: &mut PluginContext<'_>, change: &ActionChange) -> Result<()> {
        if fired(ctx, change, "Start")
            || value_changed(ctx, change, "Sigma")
            || value_changed(ctx, change, "Resolution")
        {
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
