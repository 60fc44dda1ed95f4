//! Progressive t-SNE. The embedding is written into the output dataset every
//! `Update every` iterations while the optimization runs on a worker.

use std::any::Any;
use std::sync::{Arc, Mutex};

use super::worker::{steer, RunHandle, Worker};
use super::{choice, decimal, fired, integral, value_changed, TSNE};
use crate::actions::{ActionChange, ActionSpec, ActionValue};
use crate::analytics::tsne::{Metric, Tsne, TsneParams};
use crate::core::Core;
use crate::error::{CoreError, Result};
use crate::ids::DatasetId;
use crate::payload::{PayloadKind, PointPayload, RawPayload};
use crate::registry::{Control, Plugin, PluginContext, PluginDescriptor, PluginKind};

pub fn register(core: &mut Core) -> Result<()> {
    core.register_plugin(
        PluginDescriptor::new(TSNE, PluginKind::Analytics, "t-SNE", &[PayloadKind::Points]),
        || Box::<TsnePlugin>::default(),
    )
}

/// Learning rate and exaggeration factor can change while a run is in
/// progress; everything else is read when the run starts.
#[derive(Clone, Copy, Debug)]
struct Hot {
    learning_rate: f64,
    exaggeration_factor: f64,
}

#[derive(Default)]
pub struct TsnePlugin {
    worker: Worker,
    /// The optimizer state after the last completed run, for `Continue`.
    parked: Arc<Mutex<Option<Tsne>>>,
    hot: Arc<Mutex<Option<Hot>>>,
}

impl TsnePlugin {
    /// KL divergence samples of the last completed run.
    pub fn kl_history(&self) -> Vec<(usize, f64)> {
        self.parked
            .lock()
            .map(|p| p.as_ref().map(|t| t.kl_history().to_vec()).unwrap_or_default())
            .unwrap_or_default()
    }

    fn params(ctx: &PluginContext<'_>) -> Result<TsneParams> {
        let count = |name: &str| -> Result<usize> {
            usize::try_from(integral(ctx, name)?)
                .map_err(|_| CoreError::InvalidParameter(format!("{name} must not be negative")))
        };
        Ok(TsneParams {
            perplexity: decimal(ctx, "Perplexity")?,
            iterations: count("Iterations")?,
            exaggeration_iters: count("Exaggeration iters")?,
            exaggeration_factor: decimal(ctx, "Exaggeration factor")?,
            learning_rate: decimal(ctx, "Learning rate")?,
            update_every: count("Update every")?,
            metric: choice(ctx, "Metric")?.parse()?,
            seed: integral(ctx, "Seed")? as u64,
        })
    }

    fn output(ctx: &PluginContext<'_>) -> Result<DatasetId> {
        ctx.output()
            .ok_or_else(|| CoreError::Incompatible("t-SNE instance has no output".into()))
    }

    fn start(&mut self, ctx: &mut PluginContext<'_>) -> Result<()> {
        let params = Self::params(ctx)?;
        let input = ctx.input()?;
        let view = ctx.core.data().get_data_view(input, None, None)?;
        params.validate(view.rows)?;
        let output = Self::output(ctx)?;
        let (n, d) = (view.rows, view.cols);
        let data = view.to_f64();
        *self.hot.lock().unwrap() = Some(Hot {
            learning_rate: params.learning_rate,
            exaggeration_factor: params.exaggeration_factor,
        });
        let (parked, hot) = (self.parked.clone(), self.hot.clone());
        parked.lock().unwrap().take();
        self.worker.start(ctx, move |h| {
            let result = Tsne::new(&data, n, d, params.clone()).and_then(|mut tsne| {
                let r = drive(&h, &mut tsne, params.iterations, params.update_every, output, &hot);
                *parked.lock().unwrap() = Some(tsne);
                r
            });
            finish(&h, result);
        })
    }

    fn resume_more(&mut self, ctx: &mut PluginContext<'_>) -> Result<()> {
        if ctx.info().state.is_busy() {
            return Ok(());
        }
        let Some(mut tsne) = self.parked.lock().unwrap().take() else {
            return self.start(ctx);
        };
        let iterations = integral(ctx, "Iterations")?.max(1) as usize;
        let update_every = integral(ctx, "Update every")?.max(1) as usize;
        let output = Self::output(ctx)?;
        let (parked, hot) = (self.parked.clone(), self.hot.clone());
        self.worker.start(ctx, move |h| {
            let r = drive(&h, &mut tsne, iterations, update_every, output, &hot);
            *parked.lock().unwrap() = Some(tsne);
            finish(&h, r);
        })
    }
}

/// A cancelled run ends silently; whoever cancelled it owns the state.
fn finish(h: &RunHandle, result: Result<bool>) {
    match result {
        Ok(false) => {}
        Ok(true) => h.finish(Ok(())),
        Err(e) => h.finish(Err(e)),
    }
}

/// Runs `iterations` more steps, publishing snapshots. Returns `false` if
/// cancelled.
fn drive(
    h: &RunHandle,
    tsne: &mut Tsne,
    iterations: usize,
    update_every: usize,
    output: DatasetId,
    hot: &Mutex<Option<Hot>>,
) -> Result<bool> {
    let end = tsne.iteration() + iterations;
    while tsne.iteration() < end {
        if !h.checkpoint() {
            return Ok(false);
        }
        if let Some(p) = *hot.lock().unwrap() {
            tsne.set_learning_rate(p.learning_rate)?;
            tsne.set_exaggeration_factor(p.exaggeration_factor)?;
        }
        tsne.step()?;
        let it = tsne.iteration();
        if it % update_every == 0 || it == end {
            publish(h, tsne, output, it, end);
        }
    }
    Ok(true)
}

fn publish(h: &RunHandle, tsne: &Tsne, output: DatasetId, iteration: usize, total: usize) {
    let values: Vec<f32> = tsne.embedding().iter().map(|&v| v as f32).collect();
    let n = tsne.len();
    let instance = h.instance;
    h.post(move |core| {
        let payload = PointPayload::new(values, n, 2, vec!["x".into(), "y".into()])
            .expect("embedding shape");
        if let Err(e) = core.data_mut().set_payload(output, RawPayload::Points(payload)) {
            core.fail_instance(instance, e.to_string());
            return;
        }
        core.report_progress(instance, iteration, total);
    });
}

impl Plugin for TsnePlugin {
    fn settings(&self) -> ActionSpec {
        let d = TsneParams::default();
        let metrics: Vec<&str> = Metric::ALL.iter().map(|m| m.as_str()).collect();
        ActionSpec::group(
            "t-SNE",
            vec![
                ActionSpec::new("Perplexity", ActionValue::decimal(d.perplexity, 1.0, 500.0)),
                ActionSpec::new("Iterations", ActionValue::integral(d.iterations as i64, 1, 100_000)),
                ActionSpec::new(
                    "Exaggeration iters",
                    ActionValue::integral(d.exaggeration_iters as i64, 0, 100_000),
                ),
                ActionSpec::new(
                    "Exaggeration factor",
                    ActionValue::decimal(d.exaggeration_factor, 1.0, 100.0),
                ),
                ActionSpec::new("Learning rate", ActionValue::decimal(d.learning_rate, 1.0, 10_000.0)),
                ActionSpec::new("Update every", ActionValue::integral(d.update_every as i64, 1, 100_000)),
                ActionSpec::new("Metric", ActionValue::option(&metrics, 0)),
                ActionSpec::new("Seed", ActionValue::integral(0, 0, i64::MAX)),
                ActionSpec::new("Start", ActionValue::Trigger),
                ActionSpec::new("Continue", ActionValue::Trigger),
                ActionSpec::new("Pause", ActionValue::Trigger),
                ActionSpec::new("Resume", ActionValue::Trigger),
                ActionSpec::new("Stop", ActionValue::Trigger),
            ],
        )
    }

    fn init(&mut self, ctx: &mut PluginContext<'_>) -> Result<()> {
        let n = ctx.core.data().item_count(ctx.input()?)?;
        let zeros = PointPayload::new(vec![0.0; 2 * n], n, 2, vec!["x".into(), "y".into()])?;
        ctx.derive_output("t-SNE embedding", RawPayload::Points(zeros))?;
        Ok(())
    }

    fn on_action(&mut self, ctx: &mut PluginContext<'_>, change: &ActionChange) -> Result<()> {
        if fired(ctx, change, "Start") {
            self.control(ctx, Control::Start)
        } else if fired(ctx, change, "Continue") {
            self.resume_more(ctx)
        } else if fired(ctx, change, "Pause") {
            self.control(ctx, Control::Pause)
        } else if fired(ctx, change, "Resume") {
            self.control(ctx, Control::Resume)
        } else if fired(ctx, change, "Stop") {
            self.control(ctx, Control::Cancel)
        } else if value_changed(ctx, change, "Learning rate") || value_changed(ctx, change, "Exaggeration factor") {
            let mut hot = self.hot.lock().unwrap();
            if let Some(h) = hot.as_mut() {
                h.learning_rate = decimal(ctx, "Learning rate")?;
                h.exaggeration_factor = decimal(ctx, "Exaggeration factor")?;
            }
            Ok(())
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
