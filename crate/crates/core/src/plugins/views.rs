//! Headless view plugins. They hold the render settings a frontend reads and
//! track the events their bound datasets receive; the drawing itself happens
//! in the client.

use std::any::Any;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::meanshift::sigma_spec;
use super::{IMAGE_VIEW, SCATTERPLOT};
use crate::actions::{ActionSpec, ActionValue};
use crate::colormap::ColorMapName;
use crate::core::Core;
use crate::error::Result;
use crate::events::{EventFilter, EventKind};
use crate::payload::PayloadKind;
use crate::registry::{Plugin, PluginContext, PluginDescriptor, PluginKind};

pub fn register(core: &mut Core) -> Result<()> {
    core.register_plugin(
        PluginDescriptor::new(SCATTERPLOT, PluginKind::View, "Scatterplot", &[PayloadKind::Points]),
        || Box::new(ViewPlugin::new(Flavor::Scatterplot)),
    )?;
    core.register_plugin(
        PluginDescriptor::new(IMAGE_VIEW, PluginKind::View, "Image viewer", &[PayloadKind::Image]),
        || Box::new(ViewPlugin::new(Flavor::Image)),
    )
}

/// Event counts seen by a view since it was (re)bound.
#[derive(Debug, Default)]
pub struct ViewStats {
    pub data_changed: AtomicU64,
    pub selection_changed: AtomicU64,
}

impl ViewStats {
    pub fn data_changed(&self) -> u64 {
        self.data_changed.load(Ordering::SeqCst)
    }

    pub fn selection_changed(&self) -> u64 {
        self.selection_changed.load(Ordering::SeqCst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Flavor {
    Scatterplot,
    Image,
}

pub struct ViewPlugin {
    flavor: Flavor,
    stats: Arc<ViewStats>,
}

impl ViewPlugin {
    fn new(flavor: Flavor) -> Self {
        Self {
            flavor,
            stats: Arc::default(),
        }
    }

    pub fn stats(&self) -> Arc<ViewStats> {
        self.stats.clone()
    }
}

fn colormap() -> ActionSpec {
    ActionSpec::new("Color map", ActionValue::ColorMap1D(ColorMapName::Viridis))
}

impl Plugin for ViewPlugin {
    fn settings(&self) -> ActionSpec {
        match self.flavor {
            Flavor::Scatterplot => ActionSpec::group(
                "Scatterplot",
                vec![
                    ActionSpec::new("Render mode", ActionValue::option(&["scatter", "density", "landscape"], 0)),
                    ActionSpec::new("Point size", ActionValue::decimal(6.0, 1.0, 50.0)),
                    ActionSpec::new("Opacity", ActionValue::decimal(1.0, 0.0, 1.0)),
                    ActionSpec::new(
                        "Dimensions",
                        ActionValue::DimensionPicker {
                            dataset: None,
                            selected: vec![0, 1],
                        },
                    ),
                    colormap(),
                    sigma_spec(),
                    ActionSpec::new("Selection color", ActionValue::Color([255, 127, 14, 255])),
                ],
            ),
            Flavor::Image => ActionSpec::group(
                "Image viewer",
                vec![
                    ActionSpec::new("Dimension", ActionValue::integral(0, 0, i64::from(u32::MAX))),
                    ActionSpec::new("Opacity", ActionValue::decimal(1.0, 0.0, 1.0)),
                    colormap(),
                    ActionSpec::new("Selection color", ActionValue::Color([255, 127, 14, 255])),
                ],
            ),
        }
    }

    fn init(&mut self, ctx: &mut PluginContext<'_>) -> Result<()> {
        self.stats = Arc::default();
        for dataset in ctx.inputs() {
            let stats = self.stats.clone();
            ctx.core.bus().subscribe_owned(
                ctx.instance,
                EventFilter::dataset(dataset),
                move |event| match event.kind {
                    EventKind::DatasetDataChanged => {
                        stats.data_changed.fetch_add(1, Ordering::SeqCst);
                    }
                    EventKind::DatasetSelectionChanged => {
                        stats.selection_changed.fetch_add(1, Ordering::SeqCst);
                    }
                    _ => {}
                },
            );
        }
        if self.flavor == Flavor::Scatterplot {
            let input = ctx.input()?;
            let picker = ctx.setting("Dimensions")?;
            if let ActionValue::DimensionPicker { selected, .. } = ctx.core.actions().value(picker)?.clone() {
                let dims = ctx.core.data().dim_count(input)?.unwrap_or(0);
                let selected = if selected.iter().all(|&d| d < dims) {
                    selected
                } else {
                    (0..dims.min(2)).collect()
                };
                ctx.core.replace_action_value(
                    picker,
                    ActionValue::DimensionPicker {
                        dataset: Some(input),
                        selected,
                    },
                )?;
            }
        }
        Ok(())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
