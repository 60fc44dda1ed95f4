//! Kernel density estimation on a regular grid.
//!
//! Every point splats a Gaussian truncated at 3σ onto the cell centers
//! around it, renormalized so that the point contributes exactly unit mass.
//! Points whose kernel covers no cell center put all their mass into the
//! cell that contains them.

use crate::error::{CoreError, Result};

pub const DEFAULT_RESOLUTION: usize = 256;
pub const MIN_RESOLUTION: usize = 8;
/// Kernel truncation radius and bounds padding, in units of σ.
pub const TRUNCATION: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct KdeGrid {
    pub width: usize,
    pub height: usize,
    /// `[xmin, xmax, ymin, ymax]`.
    pub bounds: [f64; 4],
    /// Row-major, `height` rows of `width` cells; row 0 is at `ymin`.
    pub density: Vec<f64>,
    pub sigma: f64,
}

impl KdeGrid {
    pub fn cell_width(&self) -> f64 {
        (self.bounds[1] - self.bounds[0]) / self.width as f64
    }

    pub fn cell_height(&self) -> f64 {
        (self.bounds[3] - self.bounds[2]) / self.height as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_width() * self.cell_height()
    }

    /// Integral of the density over the grid, i.e. the number of points.
    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell_area()
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.bounds[0] + (ix as f64 + 0.5) * self.cell_width(),
            self.bounds[2] + (iy as f64 + 0.5) * self.cell_height(),
        )
    }

    /// Cell containing `(x, y)`, clamped to the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let fx = ((x - self.bounds[0]) / self.cell_width()).floor();
        let fy = ((y - self.bounds[2]) / self.cell_height()).floor();
        (
            (fx.max(0.0) as usize).min(self.width - 1),
            (fy.max(0.0) as usize).min(self.height - 1),
        )
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.density[iy * self.width + ix]
    }

    /// Index of the densest cell.
    pub fn argmax(&self) -> (usize, usize) {
        let i = self
            .density
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > self.density[best] { i } else { best });
        (i % self.width, i / self.width)
    }

    /// Bilinear interpolation of `field` (a grid-shaped array) between cell
    /// centers; positions beyond the outermost centers are clamped.
    pub fn interpolate(&self, field: &[f64], x: f64, y: f64) -> f64 {
        let gx = ((x - self.bounds[0]) / self.cell_width() - 0.5).clamp(0.0, (self.width - 1) as f64);
        let gy = ((y - self.bounds[2]) / self.cell_height() - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (gx - x0 as f64, gy - y0 as f64);
        let v = |ix: usize, iy: usize| field[iy * self.width + ix];
        let top = v(x0, y0) * (1.0 - tx) + v(x1, y0) * tx;
        let bottom = v(x0, y1) * (1.0 - tx) + v(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Central-difference gradient of the density, one-sided at the edges.
    pub fn gradient_fields(&self) -> (Vec<f64>, Vec<f64>) {
        let (w, h) = (self.width, self.height);
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        for iy in 0..h {
            for ix in 0..w {
                let (l, r) = (ix.saturating_sub(1), (ix + 1).min(w - 1));
                if r > l {
                    gx[iy * w + ix] = (self.at(r, iy) - self.at(l, iy)) / ((r - l) as f64 * self.cell_width());
                }
                let (b, t) = (iy.saturating_sub(1), (iy + 1).min(h - 1));
                if t > b {
                    gy[iy * w + ix] = (self.at(ix, t) - self.at(ix, b)) / ((t - b) as f64 * self.cell_height());
                }
            }
        }
        (gx, gy)
    }
}

/// Bounding box `[xmin, xmax, ymin, ymax]` of row-major 2-D points.
pub fn bounding_box(points: &[f64]) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for p in points.chunks_exact(2) {
        b[0] = b[0].min(p[0]);
        b[1] = b[1].max(p[0]);
        b[2] = b[2].min(p[1]);
        b[3] = b[3].max(p[1]);
    }
    b
}

/// Estimates the density of row-major 2-D `points` with bandwidth `sigma`
/// on a grid with `resolution` square cells along its longer side.
///
/// Data without extent (all points identical) yields a single cell holding
/// all the mass.
pub fn kde_grid(points: &[f64], sigma: f64, resolution: usize) -> Result<KdeGrid> {
    if points.is_empty() || points.len() % 2 != 0 {
        return Err(CoreError::Shape("KDE needs at least one 2-D point".into()));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(CoreError::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if resolution < MIN_RESOLUTION {
        return Err(CoreError::InvalidParameter(format!(
            "resolution {resolution} below {MIN_RESOLUTION}"
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::InvalidParameter("KDE input contains non-finite values".into()));
    }
    let n = points.len() / 2;
    let bb = bounding_box(points);
    let pad = TRUNCATION * sigma;
    let mut bounds = [bb[0] - pad, bb[1] + pad, bb[2] - pad, bb[3] + pad];

    if bb[1] - bb[0] == 0.0 && bb[3] - bb[2] == 0.0 {
        let area = (bounds[1] - bounds[0]) * (bounds[3] - bounds[2]);
        return Ok(KdeGrid {
            width: 1,
            height: 1,
            bounds,
            density: vec![n as f64 / area],
            sigma,
        });
    }

    // square cells; the shorter side is widened symmetrically to a whole
    // number of cells
    let (ex, ey) = (bounds[1] - bounds[0], bounds[3] - bounds[2]);
    let cell = ex.max(ey) / resolution as f64;
    let cells = |e: f64| (((e / cell) - 1e-9).ceil() as usize).clamp(1, resolution);
    let (width, height) = (cells(ex), cells(ey));
    let grow_x = (width as f64 * cell - ex) / 2.0;
    let grow_y = (height as f64 * cell - ey) / 2.0;
    bounds = [bounds[0] - grow_x, bounds[1] + grow_x, bounds[2] - grow_y, bounds[3] + grow_y];

    let mut grid = KdeGrid {
        width,
        height,
        bounds,
        density: vec![0.0; width * height],
        sigma,
    };
    let area = grid.cell_area();
    let radius2 = (TRUNCATION * sigma).powi(2);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut weights: Vec<(usize, f64)> = Vec::new();
    for p in points.chunks_exact(2) {
        let (x, y) = (p[0], p[1]);
        // candidate window, one cell wider than needed; the radius test
        // below decides
        let lo_x = (((x - pad - bounds[0]) / cell).floor() - 1.0).max(0.0) as usize;
        let hi_x = (((x + pad - bounds[0]) / cell).ceil() + 1.0).min((width - 1) as f64);
        let lo_y = (((y - pad - bounds[2]) / cell).floor() - 1.0).max(0.0) as usize;
        let hi_y = (((y + pad - bounds[2]) / cell).ceil() + 1.0).min((height - 1) as f64);
        weights.clear();
        let mut total = 0.0;
        if hi_x >= 0.0 && hi_y >= 0.0 {
            for iy in lo_y..=hi_y as usize {
                for ix in lo_x..=hi_x as usize {
                    let (cx, cy) = grid.cell_center(ix, iy);
                    let r2 = (cx - x).powi(2) + (cy - y).powi(2);
                    if r2 <= radius2 {
                        let w = (-r2 * inv).exp();
                        total += w;
                        weights.push((iy * width + ix, w));
                    }
                }
            }
        }
        if total > 0.0 {
            for &(i, w) in &weights {
                grid.density[i] += w / total / area;
            }
        } else {
            let (ix, iy) = grid.cell_of(x, y);
            grid.density[iy * width + ix] += 1.0 / area;
        }
    }
    Ok(grid)
}
