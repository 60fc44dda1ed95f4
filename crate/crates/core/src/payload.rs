use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Dense, row-major point data: `num_items` rows of `num_dims` 32-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct PointPayload {
    values: Vec<f32>,
    num_items: usize,
    num_dims: usize,
    dim_names: Vec<String>,
}

impl PointPayload {
    pub fn new(
        values: Vec<f32>,
        num_items: usize,
        num_dims: usize,
        dim_names: Vec<String>,
    ) -> Result<Self> {
        if num_dims == 0 {
            return Err(CoreError::Shape("point data needs at least one dimension".into()));
        }
        if values.len() != num_items * num_dims {
            return Err(CoreError::Shape(format!(
                "{} values cannot fill {num_items} x {num_dims}",
                values.len()
            )));
        }
        if dim_names.len() != num_dims {
            return Err(CoreError::Shape(format!(
                "{} dimension names for {num_dims} dimensions",
                dim_names.len()
            )));
        }
        Ok(Self {
            values,
            num_items,
            num_dims,
            dim_names,
        })
    }

    /// Builds a payload with generated names `dim0..dimD-1`.
    pub fn with_default_names(values: Vec<f32>, num_items: usize, num_dims: usize) -> Result<Self> {
        Self::new(values, num_items, num_dims, default_dim_names(num_dims))
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_dims(&self) -> usize {
        self.num_dims
    }

    pub fn dim_names(&self) -> &[String] {
        &self.dim_names
    }

    pub fn row(&self, item: usize) -> &[f32] {
        &self.values[item * self.num_dims..(item + 1) * self.num_dims]
    }

    pub fn into_parts(self) -> (Vec<f32>, usize, usize, Vec<String>) {
        (self.values, self.num_items, self.num_dims, self.dim_names)
    }
}

pub fn default_dim_names(num_dims: usize) -> Vec<String> {
    (0..num_dims).map(|d| format!("dim{d}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub name: String,
    pub color: [u8; 4],
    /// Strictly increasing item indices into the parent's item space.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterPayload {
    pub clusters: Vec<Cluster>,
}

impl ClusterPayload {
    pub fn new(clusters: Vec<Cluster>) -> Self {
        Self { clusters }
    }

    /// Checks member ordering, range and disjointness against an item space
    /// of `item_count` items.
    pub fn validate(&self, item_count: usize) -> Result<()> {
        let mut seen = vec![false; item_count];
        for cluster in &self.clusters {
            if cluster.members.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CoreError::Shape(format!(
                    "members of cluster `{}` are not strictly increasing",
                    cluster.name
                )));
            }
            for &m in &cluster.members {
                if m >= item_count {
                    return Err(CoreError::OutOfRange {
                        index: m,
                        len: item_count,
                    });
                }
                if std::mem::replace(&mut seen[m], true) {
                    return Err(CoreError::Shape(format!(
                        "item {m} belongs to more than one cluster"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Image extents annotating a parent point set; pixel `(x, y)` is item
/// `y * width + x` (row-major, top-left origin).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub width: usize,
    pub height: usize,
}

impl ImagePayload {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RawPayload {
    Points(PointPayload),
    Clusters(ClusterPayload),
    Image(ImagePayload),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Points,
    Clusters,
    Image,
}

impl PayloadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PayloadKind::Points => "points",
            PayloadKind::Clusters => "clusters",
            PayloadKind::Image => "image",
        }
    }
}

impl std::str::FromStr for PayloadKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "points" => Ok(PayloadKind::Points),
            "clusters" => Ok(PayloadKind::Clusters),
            "image" => Ok(PayloadKind::Image),
            other => Err(CoreError::Malformed(format!("unknown payload kind `{other}`"))),
        }
    }
}

impl RawPayload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            RawPayload::Points(_) => PayloadKind::Points,
            RawPayload::Clusters(_) => PayloadKind::Clusters,
            RawPayload::Image(_) => PayloadKind::Image,
        }
    }

    pub fn as_points(&self) -> Option<&PointPayload> {
        match self {
            RawPayload::Points(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_clusters(&self) -> Option<&ClusterPayload> {
        match self {
            RawPayload::Clusters(c) => Some(c),
            _ => None,
        }
    }
}

/// A materialized rectangle of point data.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
    pub dim_names: Vec<String>,
}

impl Matrix {
    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn into_payload(self) -> Result<PointPayload> {
        PointPayload::new(self.values, self.rows, self.cols, self.dim_names)
    }
}
