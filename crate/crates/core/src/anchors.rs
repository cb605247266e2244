//! Default boxes tiled over each prediction grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Aspect ratios generated at every grid location, in generation order.
pub const DEFAULT_RATIOS: [f64; 3] = [0.5, 1.0, 2.0];

/// Box side per scale group as a fraction of the reference input size.
pub const DEFAULT_SCALES: [f64; 3] = [0.04, 0.08, 0.16];

/// Ordered default boxes of all scale groups.
///
/// Order is group-major, then row-major over grid cells, then ratio order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub anchors: Vec<BBox>,
    /// Scale group (0 = small, 1 = median, 2 = large) of each anchor.
    pub group_of: Vec<u8>,
    /// `(rows, cols)` of each group's grid.
    pub grid_dims: Vec<(usize, usize)>,
    pub ratios: Vec<f64>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Number of anchors per grid location.
    pub fn per_location(&self) -> usize {
        self.ratios.len()
    }

    /// Index of the first anchor of each group, plus the total at the end.
    pub fn group_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.grid_dims.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &(m, n) in &self.grid_dims {
            acc += m * n * self.ratios.len();
            offsets.push(acc);
        }
        offsets
    }
}

/// Tiles default boxes over the given grids.
///
/// For group `g`, cell `(i, j)` and ratio `r` the box is centered at
/// `((j + 0.5) / n, (i + 0.5) / m)` with `w = s_g * sqrt(r)` and
/// `h = s_g / sqrt(r)`. Boxes are not clipped.
pub fn generate_anchors(
    grid_dims: &[(usize, usize)],
    scales: &[f64],
    ratios: &[f64],
) -> Result<AnchorSet> {
    generate_anchors_anisotropic(grid_dims, scales, scales, ratios)
}

/// Like [`generate_anchors`] with separate horizontal and vertical scales,
/// used when the inference image differs from the reference input size.
pub fn generate_anchors_anisotropic(
    grid_dims: &[(usize, usize)],
    scales_x: &[f64],
    scales_y: &[f64],
    ratios: &[f64],
) -> Result<AnchorSet> {
    if ratios.is_empty() {
        return Err(Error::InvalidConfig(
            "anchor ratios must not be empty".into(),
        ));
    }
    if ratios.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidConfig(format!(
            "anchor ratios must be positive, got {ratios:?}"
        )));
    }
    if grid_dims.is_empty()
        || scales_x.len() != grid_dims.len()
        || scales_y.len() != grid_dims.len()
    {
        return Err(Error::InvalidConfig(format!(
            "{} anchor scales for {} grids",
            scales_x.len(),
            grid_dims.len()
        )));
    }
    for w in scales_x.windows(2).chain(scales_y.windows(2)) {
        if w[1] <= w[0] {
            return Err(Error::InvalidConfig(format!(
                "anchor scales must increase strictly, got {scales_x:?}"
            )));
        }
    }
    if scales_x.iter().chain(scales_y).any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidConfig(
            "anchor scales must be positive".into(),
        ));
    }
    if let Some(&(m, n)) = grid_dims.iter().find(|&&(m, n)| m == 0 || n == 0) {
        return Err(Error::InvalidConfig(format!("empty anchor grid {m}x{n}")));
    }

    let total: usize = grid_dims.iter().map(|&(m, n)| m * n * ratios.len()).sum();
    let mut anchors = Vec::with_capacity(total);
    let mut group_of = Vec::with_capacity(total);
    for (g, &(m, n)) in grid_dims.iter().enumerate() {
        for i in 0..m {
            let cy = (i as f64 + 0.5) / m as f64;
            for j in 0..n {
                let cx = (j as f64 + 0.5) / n as f64;
                for &r in ratios {
                    let sr = r.sqrt();
                    anchors.push(BBox::new(cx, cy, scales_x[g] * sr, scales_y[g] / sr));
                    group_of.push(g as u8);
                }
            }
        }
    }
    Ok(AnchorSet {
        anchors,
        group_of,
        grid_dims: grid_dims.to_vec(),
        ratios: ratios.to_vec(),
    })
}

/// Anchor configuration as it appears in the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            scales: DEFAULT_SCALES.to_vec(),
            ratios: DEFAULT_RATIOS.to_vec(),
        }
    }
}
