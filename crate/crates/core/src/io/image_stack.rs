//! Stacks of grayscale images, one image per dimension.
//!
//! Pixels become items in row-major order with the origin at the top left.
//! With a subsample factor `f`, each item is the mean of an `f × f` block
//! and the extents are divided by `f`, rounding down.

use std::path::{Path, PathBuf};

use image::DynamicImage;

use crate::error::{CoreError, Result};
use crate::payload::{ImagePayload, PointPayload};

pub const EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "tif", "tiff"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageStackOptions {
    pub files: Vec<PathBuf>,
    pub subsample: usize,
    /// One label per file; file stems are used otherwise.
    pub dim_names: Option<Vec<String>>,
}

impl ImageStackOptions {
    pub fn new(files: Vec<PathBuf>) -> Self {
        Self {
            files,
            subsample: 1,
            dim_names: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageStack {
    pub points: PointPayload,
    pub image: ImagePayload,
}

/// Image files directly inside `dir`, in lexicographic file-name order.
pub fn list_stack_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if files.is_empty() {
        return Err(CoreError::Format(format!("no images in {}", dir.display())));
    }
    Ok(files)
}

/// Block-mean pooling of a `width × height` frame.
pub fn pool(frame: &[f32], width: usize, height: usize, factor: usize) -> (Vec<f32>, usize, usize) {
    if factor <= 1 {
        return (frame.to_vec(), width, height);
    }
    let (w, h) = (width / factor, height / factor);
    let scale = 1.0 / (factor * factor) as f64;
    let mut out = Vec::with_capacity(w * h);
    for by in 0..h {
        for bx in 0..w {
            let mut acc = 0.0f64;
            for y in by * factor..(by + 1) * factor {
                for x in bx * factor..(bx + 1) * factor {
                    acc += frame[y * width + x] as f64;
                }
            }
            out.push((acc * scale) as f32);
        }
    }
    (out, w, h)
}

fn read_gray(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CoreError::Io(io),
        other => CoreError::Format(format!("{}: {other}", path.display())),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(f32::from).collect(),
        other => {
            return Err(CoreError::Unsupported(format!(
                "{}: pixel format {:?} is not 8/16-bit grayscale",
                path.display(),
                other.color()
            )))
        }
    };
    Ok((values, w, h))
}

/// Decodes every file and interleaves the frames into items × dims.
pub fn load_image_stack(opts: &ImageStackOptions) -> Result<ImageStack> {
    if opts.files.is_empty() {
        return Err(CoreError::InvalidParameter("an image stack needs at least one file".into()));
    }
    if opts.subsample == 0 {
        return Err(CoreError::InvalidParameter("subsample factor must be positive".into()));
    }
    if let Some(names) = &opts.dim_names {
        if names.len() != opts.files.len() {
            return Err(CoreError::Shape(format!(
                "{} labels for {} files",
                names.len(),
                opts.files.len()
            )));
        }
    }
    let frames = opts
        .files
        .iter()
        .map(|p| read_gray(p))
        .collect::<Result<Vec<_>>>()?;
    assemble(
        &frames,
        opts.subsample,
        opts.dim_names.clone().unwrap_or_else(|| {
            opts.files
                .iter()
                .map(|p| p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()))
                .collect()
        }),
    )
}

/// Builds the payloads from decoded `(values, width, height)` frames.
pub fn assemble(frames: &[(Vec<f32>, usize, usize)], subsample: usize, names: Vec<String>) -> Result<ImageStack> {
    let (_, w0, h0) = frames
        .first()
        .ok_or_else(|| CoreError::InvalidParameter("empty image stack".into()))?;
    if let Some((i, (_, w, h))) = frames.iter().enumerate().find(|(_, f)| (f.1, f.2) != (*w0, *h0)) {
        return Err(CoreError::Shape(format!(
            "image {i} is {w}x{h}, expected {w0}x{h0}"
        )));
    }
    let pooled: Vec<Vec<f32>> = frames
        .iter()
        .map(|(v, w, h)| pool(v, *w, *h, subsample).0)
        .collect();
    let (w, h) = (w0 / subsample.max(1), h0 / subsample.max(1));
    if w == 0 || h == 0 {
        return Err(CoreError::InvalidParameter(format!(
            "subsample factor {subsample} leaves no pixels of a {w0}x{h0} image"
        )));
    }
    let d = frames.len();
    let mut values = vec![0.0f32; w * h * d];
    for (dim, frame) in pooled.iter().enumerate() {
        for (item, &v) in frame.iter().enumerate() {
            values[item * d + dim] = v;
        }
    }
    Ok(ImageStack {
        points: PointPayload::new(values, w * h, d, names)?,
        image: ImagePayload {
            width: w,
            height: h,
        },
    })
}
