//! Regular cubical grids restricted to a centered ball.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, GmcError, Result};

/// Default cap on the number of retained cells (a dense covariance of this
/// size needs about 1.2 GB).
pub const DEFAULT_CELL_CAP: usize = 12_000;

/// Cells of a regular grid of spacing `h` on [−r, r]^d whose centers lie in
/// the open ball B(0, r).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub radius: f64,
    pub cells_per_axis: usize,
    pub spacing: f64,
    /// Cell centers, flattened row-major (`dim` coordinates per cell).
    pub centers: Vec<f64>,
    /// Integer lattice coordinates of each cell, flattened like `centers`.
    pub lattice: Vec<i64>,
    /// Cube volume clipped to the ball by 4^d sub-sampling, plus the clipped
    /// volume of adjacent cubes whose centers fall outside the ball.
    pub volumes: Vec<f64>,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    pub fn lattice_index(&self, i: usize) -> &[i64] {
        &self.lattice[i * self.dim..(i + 1) * self.dim]
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }
}

/// Builds the grid with spacing `h = 2·radius/cells_per_axis`.
pub fn build_grid(dim: usize, radius: f64, cells_per_axis: usize) -> Result<Grid> {
    build_grid_with_cap(dim, radius, cells_per_axis, DEFAULT_CELL_CAP)
}

/// [`build_grid`] with an explicit memory guard.
pub fn build_grid_with_cap(dim: usize, radius: f64, cells_per_axis: usize, cap: usize) -> Result<Grid> {
    if dim < 1 {
        return Err(invalid("dimension must be at least 1"));
    }
    if !(radius > 0.0 && radius <= 1.0) {
        return Err(invalid(format!("radius {radius} outside (0, 1]")));
    }
    if cells_per_axis < 2 {
        return Err(invalid("cells_per_axis must be at least 2"));
    }
    let total = (cells_per_axis as f64).powi(dim as i32);
    // Ball fraction of the bounding cube bounds the retained count.
    let est = total * crate::potential::unit_ball_volume(dim) / 2f64.powi(dim as i32);
    if est > cap as f64 * 1.05 {
        return Err(GmcError::MemoryGuard { cells: est as usize, cap });
    }
    let h = 2.0 * radius / cells_per_axis as f64;
    let r2 = radius * radius;
    let sub = 4usize;
    let nsub = sub.pow(dim as u32);
    let mut centers = Vec::new();
    let mut lattice = Vec::new();
    let mut volumes = Vec::new();
    // Clipped volume and center of cubes whose centers fall outside the ball.
    let mut orphans: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut idx = vec![0usize; dim];
    let mut c = vec![0.0; dim];
    'outer: loop {
        for k in 0..dim {
            c[k] = -radius + (idx[k] as f64 + 0.5) * h;
        }
        let mut inside = 0usize;
        for s in 0..nsub {
            let mut rem = s;
            let mut q2 = 0.0;
            for ck in &c {
                let j = rem % sub;
                rem /= sub;
                let y = ck - 0.5 * h + (j as f64 + 0.5) * h / sub as f64;
                q2 += y * y;
            }
            if q2 < r2 {
                inside += 1;
            }
        }
        let vol = h.powi(dim as i32) * inside as f64 / nsub as f64;
        if c.iter().map(|x| x * x).sum::<f64>() < r2 {
            centers.extend_from_slice(&c);
            lattice.extend(idx.iter().map(|&i| i as i64));
            volumes.push(vol);
        } else if inside > 0 {
            orphans.push((c.clone(), vol));
        }
        // Odometer increment over the lattice.
        let mut k = 0;
        loop {
            if k == dim {
                break 'outer;
            }
            idx[k] += 1;
            if idx[k] < cells_per_axis {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
    if volumes.len() > cap {
        return Err(GmcError::MemoryGuard { cells: volumes.len(), cap });
    }
    // Hand each orphan's clipped volume to the nearest retained cell.
    for (oc, ov) in orphans {
        let mut best = (f64::INFINITY, 0usize);
        for (i, ci) in centers.chunks(dim).enumerate() {
            let d2: f64 = ci.iter().zip(&oc).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        if best.0.is_finite() {
            volumes[best.1] += ov;
        }
    }
    Ok(Grid { dim, radius, cells_per_axis, spacing: h, centers, lattice, volumes })
}
