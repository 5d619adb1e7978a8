//! Software depth camera: per-pixel ray casting through a posed voxel grid.
//!
//! Each pixel ray is mapped into the object frame with `Rᵀ` and walked
//! through the unrotated grid with a 3D digital differential analyzer
//! (Amanatides and Woo). The first occupied cell's entry parameter is the
//! z-depth because every ray direction has unit z component.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::camera::{CameraIntrinsics, DepthImage, MASKED};
use super::rotation::{rotvec_to_matrix, RotVec, RotationMatrix};
use crate::error::Result;
use crate::shapespace::VoxelGrid;

pub fn render_depth(grid: &VoxelGrid, pose: &RotVec, cam: &CameraIntrinsics) -> Result<DepthImage> {
    let rot = rotvec_to_matrix(pose)?;
    render_depth_matrix(grid, &rot, cam)
}

pub fn render_depth_matrix(
    grid: &VoxelGrid,
    rot: &RotationMatrix,
    cam: &CameraIntrinsics,
) -> Result<DepthImage> {
    cam.validate()?;
    let (w, h) = (cam.width, cam.height);
    if grid.occupied_count() == 0 {
        return Ok(DepthImage::masked(w, h));
    }
    let rt = rot.0.transpose();
    let dims = grid.dims();
    let scale = Vector3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64);
    // Camera origin in object coordinates, then in grid-cell coordinates.
    let origin_obj = rt * Vector3::new(0.0, 0.0, -cam.object_distance);
    let origin = (origin_obj + Vector3::repeat(0.5)).component_mul(&scale);

    let mut depth = vec![MASKED; w * h];
    depth.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        let v = (row as f64 - cam.cy) / cam.fy;
        for (col, px) in out.iter_mut().enumerate() {
            let u = (col as f64 - cam.cx) / cam.fx;
            let dir = (rt * Vector3::new(u, v, 1.0)).component_mul(&scale);
            if let Some(s) = first_hit(grid, &origin, &dir) {
                *px = s as f32;
            }
        }
    });
    DepthImage::new(w, h, depth)
}

/// Ray parameter at which the ray `origin + s·dir` (grid-cell coordinates)
/// enters its first occupied cell.
fn first_hit(grid: &VoxelGrid, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    let dims = grid.dims();
    let mut s_enter = 0.0f64;
    let mut s_exit = f64::INFINITY;
    for a in 0..3 {
        let n = dims[a] as f64;
        if dir[a] == 0.0 {
            if origin[a] < 0.0 || origin[a] > n {
                return None;
            }
        } else {
            let t0 = (0.0 - origin[a]) / dir[a];
            let t1 = (n - origin[a]) / dir[a];
            s_enter = s_enter.max(t0.min(t1));
            s_exit = s_exit.min(t0.max(t1));
        }
    }
    if s_enter >= s_exit {
        return None;
    }

    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let p = origin[a] + s_enter * dir[a];
        cell[a] = (p.floor() as i64).clamp(0, dims[a] as i64 - 1);
        if dir[a] > 0.0 {
            step[a] = 1;
            t_max[a] = ((cell[a] + 1) as f64 - origin[a]) / dir[a];
            t_delta[a] = 1.0 / dir[a];
        } else if dir[a] < 0.0 {
            step[a] = -1;
            t_max[a] = (cell[a] as f64 - origin[a]) / dir[a];
            t_delta[a] = -1.0 / dir[a];
        }
    }

    let mut s = s_enter;
    loop {
        if grid.get(cell[0] as usize, cell[1] as usize, cell[2] as usize) {
            return Some(s);
        }
        // Smallest t_max, lowest axis on ties.
        let mut a = 0;
        if t_max[1] < t_max[a] {
            a = 1;
        }
        if t_max[2] < t_max[a] {
            a = 2;
        }
        if !t_max[a].is_finite() || t_max[a] > s_exit {
            return None;
        }
        s = t_max[a];
        cell[a] += step[a];
        if cell[a] < 0 || cell[a] >= dims[a] as i64 {
            return None;
        }
        t_max[a] += t_delta[a];
    }
}
