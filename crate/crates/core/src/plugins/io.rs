//! Loader and writer plugins. Both act when their trigger fires: the file
//! work runs on a worker and, for loaders, the new datasets are inserted by a
//! single core command once everything has been read.

use std::any::Any;
use std::path::{Path, PathBuf};

use super::worker::{steer, Worker};
use super::{fired, integral, string, toggle, BIN_LOADER, BIN_WRITER, CSV_LOADER, CSV_WRITER, IMAGE_LOADER};
use crate::actions::{ActionChange, ActionSpec, ActionValue};
use crate::core::Core;
use crate::error::{CoreError, Result};
use crate::io::csv::{load_csv, save_csv, CsvOptions};
use crate::io::image_stack::{list_stack_files, load_image_stack, ImageStackOptions};
use crate::io::mvbin;
use crate::payload::{PayloadKind, PointPayload, RawPayload};
use crate::registry::{Control, InstanceState, Plugin, PluginContext, PluginDescriptor, PluginKind};

pub fn register(core: &mut Core) -> Result<()> {
    let loaders = [
        (CSV_LOADER, "CSV loader", Format::Csv),
        (BIN_LOADER, "Binary loader", Format::Bin),
        (IMAGE_LOADER, "Image loader", Format::Image),
    ];
    for (id, name, format) in loaders {
        core.register_plugin(PluginDescriptor::new(id, PluginKind::Loader, name, &[]), move || {
            Box::new(LoaderPlugin {
                format,
                worker: Worker::default(),
            })
        })?;
    }
    let writers = [(CSV_WRITER, "CSV writer", Format::Csv), (BIN_WRITER, "Binary writer", Format::Bin)];
    for (id, name, format) in writers {
        core.register_plugin(
            PluginDescriptor::new(id, PluginKind::Writer, name, &[PayloadKind::Points]),
            move || {
                Box::new(WriterPlugin {
                    format,
                    worker: Worker::default(),
                })
            },
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Csv,
    Bin,
    Image,
}

fn csv_specs() -> Vec<ActionSpec> {
    vec![
        ActionSpec::new("Delimiter", ActionValue::String(",".into())),
        ActionSpec::new("Header", ActionValue::Toggle(true)),
    ]
}

fn csv_options(ctx: &PluginContext<'_>) -> Result<CsvOptions> {
    let delimiter = string(ctx, "Delimiter")?;
    let byte = match delimiter.as_str() {
        "\\t" | "tab" => b'\t',
        d if d.len() == 1 => d.as_bytes()[0],
        d => return Err(CoreError::InvalidParameter(format!("delimiter `{d}` is not a single character"))),
    };
    let opts = CsvOptions {
        delimiter: byte,
        has_header: toggle(ctx, "Header")?,
    };
    opts.validate()?;
    Ok(opts)
}

fn path_setting(ctx: &PluginContext<'_>, name: &str) -> Result<PathBuf> {
    let p = string(ctx, name)?;
    if p.is_empty() {
        return Err(CoreError::InvalidParameter(format!("`{name}` is not set")));
    }
    Ok(PathBuf::from(p))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into())
}

pub struct LoaderPlugin {
    format: Format,
    worker: Worker,
}

/// What a loader produces: a point set and, for image stacks, the image
/// child annotating it.
struct Loaded {
    points: PointPayload,
    image: Option<crate::payload::ImagePayload>,
}

impl LoaderPlugin {
    fn load(&mut self, ctx: &mut PluginContext<'_>) -> Result<()> {
        let path = path_setting(ctx, if self.format == Format::Image { "Folder" } else { "File" })?;
        let name = match string(ctx, "Name")? {
            n if n.is_empty() => stem(&path),
            n => n,
        };
        let read: Box<dyn FnOnce() -> Result<Loaded> + Send> = match self.format {
            Format::Csv => {
                let opts = csv_options(ctx)?;
                Box::new(move || Ok(Loaded { points: load_csv(&path, opts)?, image: None }))
            }
            Format::Bin => Box::new(move || Ok(Loaded { points: mvbin::read_file(&path)?, image: None })),
            Format::Image => {
                let subsample = integral(ctx, "Subsample")?;
                let subsample = usize::try_from(subsample)
                    .ok()
                    .filter(|&f| f > 0)
                    .ok_or_else(|| CoreError::InvalidParameter(format!("subsample factor {subsample}")))?;
                Box::new(move || {
                    let files = if path.is_dir() { list_stack_files(&path)? } else { vec![path] };
                    let stack = load_image_stack(&ImageStackOptions {
                        subsample,
                        ..ImageStackOptions::new(files)
                    })?;
                    Ok(Loaded { points: stack.points, image: Some(stack.image) })
                })
            }
        };
        self.worker.start(ctx, move |h| {
            let result = read();
            if h.control.is_cancelled() {
                return;
            }
            let loaded = match result {
                Ok(l) => l,
                Err(e) => return h.finish(Err(e)),
            };
            let instance = h.instance;
            h.post(move |core| {
                let inserted = (|| {
                    let points = core.data_mut().add_dataset(RawPayload::Points(loaded.points), &name, None)?;
                    if let Some(image) = loaded.image {
                        let label = format!("{name} image");
                        core.data_mut().add_dataset(RawPayload::Image(image), &label, Some(points))?;
                    }
                    Ok::<_, CoreError>(points)
                })();
                match inserted {
                    Ok(points) => {
                        if let Ok(info) = core.plugins_mut().instance_mut(instance) {
                            info.output = Some(points);
                        }
                        core.report_progress(instance, 1, 1);
                        core.set_instance_state(instance, InstanceState::Finished);
                    }
                    Err(e) => core.fail_instance(instance, e.to_string()),
                }
            });
        })
    }
}

impl Plugin for LoaderPlugin {
    fn settings(&self) -> ActionSpec {
        let mut children = match self.format {
            Format::Image => vec![
                ActionSpec::new("Folder", ActionValue::String(String::new())),
                ActionSpec::new("Subsample", ActionValue::integral(1, 1, 64)),
            ],
            _ => vec![ActionSpec::new("File", ActionValue::String(String::new()))],
        };
        children.push(ActionSpec::new("Name", ActionValue::String(String::new())));
        if self.format == Format::Csv {
            children.extend(csv_specs());
        }
        children.push(ActionSpec::new("Load", ActionValue::Trigger));
        ActionSpec::group("Loader", children)
    }

    fn init(&mut self, _ctx: &mut PluginContext<'_>) -> Result<()> {
        Ok(())
    }

    fn on_action(&mut self, ctx: &mut PluginContext<'_>, change: &ActionChange) -> Result<()> {
        if fired(ctx, change, "Load") {
            self.load(ctx)
        } else {
            Ok(())
        }
    }

    fn control(&mut self, ctx: &mut PluginContext<'_>, control: Control) -> Result<()> {
        match control {
            Control::Start => self.load(ctx),
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

pub struct WriterPlugin {
    format: Format,
    worker: Worker,
}

impl WriterPlugin {
    fn write(&mut self, ctx: &mut PluginContext<'_>) -> Result<()> {
        let path = path_setting(ctx, "File")?;
        let payload = ctx.core.data().get_data_view(ctx.input()?, None, None)?.into_payload()?;
        let write: Box<dyn FnOnce() -> Result<()> + Send> = match self.format {
            Format::Csv => {
                let opts = csv_options(ctx)?;
                Box::new(move || save_csv(&path, &payload, opts))
            }
            _ => Box::new(move || mvbin::write_file(&path, &payload)),
        };
        self.worker.start(ctx, move |h| {
            let result = write();
            if !h.control.is_cancelled() {
                h.finish(result);
            }
        })
    }
}

impl Plugin for WriterPlugin {
    fn settings(&self) -> ActionSpec {
        let mut children = vec![ActionSpec::new("File", ActionValue::String(String::new()))];
        if self.format == Format::Csv {
            children.extend(csv_specs());
        }
        children.push(ActionSpec::new("Write", ActionValue::Trigger));
        ActionSpec::group("Writer", children)
    }

    fn init(&mut self, _ctx: &mut PluginContext<'_>) -> Result<()> {
        Ok(())
    }

    fn on_action(&mut self, ctx: &mut PluginContext<'_>, change: &ActionChange) -> Result<()> {
        if fired(ctx, change, "Write") {
            self.write(ctx)
        } else {
            Ok(())
        }
    }

    fn control(&mut self, ctx: &mut PluginContext<'_>, control: Control) -> Result<()> {
        match control {
            Control::Start => self.write(ctx),
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
