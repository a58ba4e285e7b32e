//! Parent/child voxel grid geometry shared by every descriptor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned box of `dims` parent voxels, each split into `child_res`³
/// child voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub extents: [f64; 3],
    pub dims: [usize; 3],
    pub child_res: usize,
}

impl Default for GridSpec {
    /// 28×28×8 parents with M = 4 over a 2.8 m × 2.8 m × 1.6 m volume.
    fn default() -> Self {
        Self {
            origin: [0.0; 3],
            extents: [2.8, 2.8, 1.6],
            dims: [28, 28, 8],
            child_res: 4,
        }
    }
}

impl GridSpec {
    pub fn new(origin: [f64; 3], extents: [f64; 3], dims: [usize; 3], child_res: usize) -> Result<Self> {
        let grid = Self {
            origin,
            extents,
            dims,
            child_res,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid whose parent voxels are unit cubes starting at the origin.
    pub fn unit(dims: [usize; 3], child_res: usize) -> Result<Self> {
        Self::new(
            [0.0; 3],
            [dims[0] as f64, dims[1] as f64, dims[2] as f64],
            dims,
            child_res,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Grid(format!("parent dims must be >= 1, got {:?}", self.dims)));
        }
        if self.child_res == 0 {
            return Err(Error::Grid("child resolution M must be >= 1".into()));
        }
        if self.extents.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(Error::Grid(format!(
                "extents must be finite and positive, got {:?}",
                self.extents
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Grid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn parent_size(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.extents[a] / self.dims[a] as f64)
    }

    pub fn child_size(&self) -> [f64; 3] {
        let p = self.parent_size();
        std::array::from_fn(|a| p[a] / self.child_res as f64)
    }

    pub fn num_parents(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn children_per_parent(&self) -> usize {
        self.child_res.pow(3)
    }

    /// Child-voxel counts along each axis of the whole grid.
    pub fn child_dims(&self) -> [usize; 3] {
        self.dims.map(|d| d * self.child_res)
    }

    /// Cell index along one axis for a resolution of `n` cells, using half-open
    /// intervals with the upper boundary clamped into the last cell.
    fn axis_cell(&self, axis: usize, coord: f64, n: usize) -> Option<usize> {
        let lo = self.origin[axis];
        let hi = lo + self.extents[axis];
        if !coord.is_finite() || coord < lo || coord > hi {
            return None;
        }
        let t = (coord - lo) / self.extents[axis] * n as f64;
        Some((t.floor() as usize).min(n - 1))
    }

    /// Parent voxel containing a point, or `None` outside the extents.
    pub fn parent_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let x = self.axis_cell(0, p[0], self.dims[0])?;
        let y = self.axis_cell(1, p[1], self.dims[1])?;
        let z = self.axis_cell(2, p[2], self.dims[2])?;
        Some([x, y, z])
    }

    /// Global child voxel containing a point, or `None` outside the extents.
    pub fn child_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let cd = self.child_dims();
        let x = self.axis_cell(0, p[0], cd[0])?;
        let y = self.axis_cell(1, p[1], cd[1])?;
        let z = self.axis_cell(2, p[2], cd[2])?;
        Some([x, y, z])
    }

    /// Row-major parent index, z fastest.
    pub fn parent_index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    /// Position of a child within its parent, flattened x fastest, then y, then z.
    pub fn child_slot(&self, local: [usize; 3]) -> usize {
        let m = self.child_res;
        local[0] + m * (local[1] + m * local[2])
    }

    /// Center of a parent voxel in world coordinates.
    pub fn parent_center(&self, c: [usize; 3]) -> [f64; 3] {
        let s = self.parent_size();
        std::array::from_fn(|a| self.origin[a] + (c[a] as f64 + 0.5) * s[a])
    }

    pub fn translated(&self, offset: [f64; 3]) -> Self {
        Self {
            origin: std::array::from_fn(|a| self.origin[a] + offset[a]),
            ..*self
        }
    }
}
