//! Fixed-size raster tiling with edge-anchored remainders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub tile_size: usize,
    pub stride: usize,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self::square(64)
    }
}

impl TileSpec {
    pub fn new(tile_size: usize, stride: usize) -> Result<Self> {
        let spec = Self { tile_size, stride };
        spec.validate()?;
        Ok(spec)
    }

    /// Non-overlapping tiles.
    pub fn square(tile_size: usize) -> Self {
        Self {
            tile_size,
            stride: tile_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.stride > self.tile_size {
            return Err(Error::config(format!(
                "tile stride must satisfy 1 <= stride <= tile_size, got stride {} for tile {}",
                self.stride, self.tile_size
            )));
        }
        Ok(())
    }

    /// Tile offsets along one axis of length `dim`.
    pub fn offsets(&self, dim: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if dim < self.tile_size {
            return Err(Error::structural(format!(
                "image extent {dim} is smaller than tile size {}",
                self.tile_size
            )));
        }
        let last = dim - self.tile_size;
        let mut offsets: Vec<usize> = (0..=last).step_by(self.stride).collect();
        if last % self.stride != 0 {
            offsets.push(last);
        }
        Ok(offsets)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub x: usize,
    pub y: usize,
}

/// Tiles in row-major order with their top-left origins.
pub fn tile(img: &RasterImage, spec: TileSpec) -> Result<Vec<(RasterImage, Origin)>> {
    let xs = spec.offsets(img.width())?;
    let ys = spec.offsets(img.height())?;
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let t = img.crop(x, y, spec.tile_size, spec.tile_size)?;
            out.push((t, Origin { x, y }));
        }
    }
    Ok(out)
}
