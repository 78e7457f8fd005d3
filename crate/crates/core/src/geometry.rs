//! Vectors, lines, detector planes, the target description and the voxel grid.
//!
//! Coordinates are millimetres with the zenith along +z. Path lengths leave
//! this module in centimetres through [`mm_to_cm`], the only place the unit
//! conversion happens.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{Material, MaterialTable};

/// Millimetres to centimetres.
#[inline]
pub fn mm_to_cm(mm: f64) -> f64 {
    mm / 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn component(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A line with a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line3 {
    pub point: Vec3,
    pub direction: Vec3,
}

impl Line3 {
    /// Normalizes `direction`; fails on a zero or non-finite direction.
    pub fn new(point: Vec3, direction: Vec3) -> Result<Self> {
        if !point.is_finite() {
            return Err(Error::Degenerate("non-finite line point".into()));
        }
        let direction = direction
            .normalized()
            .ok_or_else(|| Error::Degenerate("zero or non-finite line direction".into()))?;
        Ok(Line3 { point, direction })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.point + self.direction * t
    }

    /// Point where the line crosses the plane `z = const`, if it is not horizontal.
    pub fn at_z(&self, z: f64) -> Option<Vec3> {
        if self.direction.z == 0.0 {
            return None;
        }
        Some(self.at((z - self.point.z) / self.direction.z))
    }
}

/// One position-sensitive tracking plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorPlane {
    pub z: f64,
    pub half_extent_x: f64,
    pub half_extent_y: f64,
    /// Position-smearing standard deviation, mm.
    pub sigma: f64,
}

impl DetectorPlane {
    pub const DEFAULT_HALF_EXTENT: f64 = 75.0;

    pub fn new(z: f64, sigma: f64) -> Self {
        DetectorPlane {
            z,
            half_extent_x: Self::DEFAULT_HALF_EXTENT,
            half_extent_y: Self::DEFAULT_HALF_EXTENT,
            sigma,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.half_extent_x && y.abs() <= self.half_extent_y
    }
}

/// Axis-aligned box of one material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetBox {
    pub center: Vec3,
    pub half_size: Vec3,
    /// Index into [`TargetGeometry::materials`].
    pub material: usize,
}

impl TargetBox {
    fn lo(&self) -> Vec3 {
        self.center - self.half_size
    }

    fn hi(&self) -> Vec3 {
        self.center + self.half_size
    }

    /// Parameter interval `[t0, t1]` of the line inside the box.
    fn clip(&self, line: &Line3) -> Option<(f64, f64)> {
        let (lo, hi) = (self.lo(), self.hi());
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for axis in 0..3 {
            let p = line.point.component(axis);
            let d = line.direction.component(axis);
            let (l, h) = (lo.component(axis), hi.component(axis));
            if d == 0.0 {
                if p < l || p > h {
                    return None;
                }
            } else {
                let (a, b) = ((l - p) / d, (h - p) / d);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        (t1 > t0).then_some((t0, t1))
    }
}

/// Stack of boxes; later boxes override earlier ones where they overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGeometry {
    pub materials: Vec<Material>,
    pub boxes: Vec<TargetBox>,
}

/// Straight-line passage through one material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub material: usize,
    pub entry: Vec3,
    pub exit: Vec3,
    pub length_cm: f64,
}

impl Segment {
    pub fn midpoint(&self) -> Vec3 {
        (self.entry + self.exit) * 0.5
    }
}

impl TargetGeometry {
    pub fn empty() -> Self {
        TargetGeometry {
            materials: Vec::new(),
            boxes: Vec::new(),
        }
    }

    pub fn new(materials: Vec<Material>, boxes: Vec<TargetBox>) -> Result<Self> {
        for b in &boxes {
            if !(b.half_size.x > 0.0 && b.half_size.y > 0.0 && b.half_size.z > 0.0) {
                return Err(Error::Config("target box half-sizes must be > 0".into()));
            }
            if b.material >= materials.len() {
                return Err(Error::Config(format!(
                    "target box refers to material #{} but only {} are defined",
                    b.material,
                    materials.len()
                )));
            }
        }
        Ok(TargetGeometry { materials, boxes })
    }

    /// The C-shaped tungsten block: an 8 x 8 x 4 mm solid centred at the
    /// origin with a 6 x 4 x 4 mm air void flush with its +x face.
    pub fn c_block(table: &MaterialTable) -> Result<Self> {
        let tungsten = table.require("tungsten")?.clone();
        let air = table.require("air")?.clone();
        Self::new(
            vec![tungsten, air],
            vec![
                TargetBox {
                    center: Vec3::ZERO,
                    half_size: Vec3::new(4.0, 4.0, 2.0),
                    material: 0,
                },
                TargetBox {
                    center: Vec3::new(1.0, 0.0, 0.0),
                    half_size: Vec3::new(3.0, 2.0, 2.0),
                    material: 1,
                },
            ],
        )
    }

    /// A wide horizontal slab of `material`, `thickness_mm` thick, centred at z = 0.
    pub fn slab(material: Material, thickness_mm: f64, half_width_mm: f64) -> Result<Self> {
        Self::new(
            vec![material],
            vec![TargetBox {
                center: Vec3::ZERO,
                half_size: Vec3::new(half_width_mm, half_width_mm, thickness_mm / 2.0),
                material: 0,
            }],
        )
    }

    pub fn material_index(&self, name: &str) -> Option<usize> {
        self.materials.iter().position(|m| m.name == name)
    }

    /// Material passages along `line`, ordered by decreasing z.
    pub fn intersect_segments(&self, line: &Line3) -> Vec<Segment> {
        let clips: Vec<Option<(f64, f64)>> = self.boxes.iter().map(|b| b.clip(line)).collect();
        let mut cuts: Vec<f64> = clips.iter().flatten().flat_map(|&(a, b)| [a, b]).collect();
        if cuts.is_empty() {
            return Vec::new();
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let mut pieces: Vec<(usize, f64, f64)> = Vec::new();
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b - a <= 1e-12 {
                continue;
            }
            let mid = 0.5 * (a + b);
            let owner = clips
                .iter()
                .enumerate()
                .rev()
                .find(|(_, c)| matches!(c, Some((t0, t1)) if *t0 <= mid && mid <= *t1))
                .map(|(i, _)| self.boxes[i].material);
            if let Some(material) = owner {
                match pieces.last_mut() {
                    Some(last) if last.0 == material && (last.2 - a).abs() <= 1e-12 => last.2 = b,
                    _ => pieces.push((material, a, b)),
                }
            }
        }

        let mut segments: Vec<Segment> = pieces
            .into_iter()
            .map(|(material, a, b)| Segment {
                material,
                entry: line.at(a),
                exit: line.at(b),
                length_cm: mm_to_cm(b - a),
            })
            .collect();
        if line.direction.z > 0.0 {
            segments.reverse();
            for s in &mut segments {
                std::mem::swap(&mut s.entry, &mut s.exit);
            }
        }
        segments
    }

    /// Total length (cm) of `material` along `line`.
    pub fn material_length_cm(&self, line: &Line3, material: usize) -> f64 {
        self.intersect_segments(line)
            .iter()
            .filter(|s| s.material == material)
            .map(|s| s.length_cm)
            .sum()
    }

    /// Top-view mask of the pixels whose centre column crosses `material`.
    /// Row 0 is the top (largest y) row, matching [`crate::image::ScatterImage`].
    pub fn footprint_mask(
        &self,
        material: usize,
        width: usize,
        height: usize,
        pixel_mm: f64,
    ) -> Vec<bool> {
        let x0 = -(width as f64) * pixel_mm / 2.0;
        let y_top = height as f64 * pixel_mm / 2.0;
        let mut mask = vec![false; width * height];
        for row in 0..height {
            for col in 0..width {
                let x = x0 + (col as f64 + 0.5) * pixel_mm;
                let y = y_top - (row as f64 + 0.5) * pixel_mm;
                let line = Line3 {
                    point: Vec3::new(x, y, 0.0),
                    direction: Vec3::new(0.0, 0.0, -1.0),
                };
                mask[row * width + col] = self.material_length_cm(&line, material) > 0.0;
            }
        }
        mask
    }
}

/// Regular 3D grid of PoCA accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub origin: Vec3,
    pub shape: [usize; 3],
    /// Voxel size (mm) along x, y, z.
    pub pitch: Vec3,
    /// Summed squared scattering angles, rad^2.
    pub theta_sum: Vec<f64>,
    /// Summed path lengths, cm.
    pub path_sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl VoxelGrid {
    pub fn new(origin: Vec3, shape: [usize; 3], pitch: Vec3) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Config("voxel grid dimensions must be > 0".into()));
        }
        if !(pitch.x > 0.0 && pitch.y > 0.0 && pitch.z > 0.0) || !origin.is_finite() {
            return Err(Error::Config(
                "voxel pitch must be > 0 and origin finite".into(),
            ));
        }
        let n = shape[0] * shape[1] * shape[2];
        Ok(VoxelGrid {
            origin,
            shape,
            pitch,
            theta_sum: vec![0.0; n],
            path_sum: vec![0.0; n],
            count: vec![0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count.is_empty()
    }

    pub fn flat(&self, [ix, iy, iz]: [usize; 3]) -> usize {
        (iz * self.shape[1] + iy) * self.shape[0] + ix
    }

    pub fn unflat(&self, idx: usize) -> [usize; 3] {
        let nx = self.shape[0];
        let ny = self.shape[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Voxel containing `p` under half-open bounds `[lo, hi)`.
    pub fn voxel_index(&self, p: Vec3) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for (axis, slot) in out.iter_mut().enumerate() {
            let f = ((p.component(axis) - self.origin.component(axis))
                / self.pitch.component(axis))
            .floor();
            if !(f >= 0.0 && f < self.shape[axis] as f64) {
                return None;
            }
            *slot = f as usize;
        }
        Some(out)
    }

    pub fn voxel_center(&self, [ix, iy, iz]: [usize; 3]) -> Vec3 {
        Vec3::new(
            self.origin.x + (ix as f64 + 0.5) * self.pitch.x,
            self.origin.y + (iy as f64 + 0.5) * self.pitch.y,
            self.origin.z + (iz as f64 + 0.5) * self.pitch.z,
        )
    }

    pub fn voxel_bounds(&self, [ix, iy, iz]: [usize; 3]) -> (Vec3, Vec3) {
        let lo = Vec3::new(
            self.origin.x + ix as f64 * self.pitch.x,
            self.origin.y + iy as f64 * self.pitch.y,
            self.origin.z + iz as f64 * self.pitch.z,
        );
        (lo, lo + self.pitch)
    }

    /// Adds one event's squared angle (rad^2) and path length (cm) to a voxel.
    pub fn deposit(&mut self, voxel: [usize; 3], theta_sq: f64, path_cm: f64) {
        let i = self.flat(voxel);
        self.theta_sum[i] += theta_sq;
        self.path_sum[i] += path_cm;
        self.count[i] += 1;
    }

    /// Scattering density of a voxel, rad^2/cm; zero for an empty voxel.
    pub fn lambda(&self, voxel: [usize; 3]) -> f64 {
        let i = self.flat(voxel);
        if self.path_sum[i] > 0.0 {
            self.theta_sum[i] / self.path_sum[i]
        } else {
            0.0
        }
    }

    pub fn total_events(&self) -> u64 {
        self.count.iter().map(|&c| u64::from(c)).sum()
    }

    /// Element-wise sum of an independently filled grid with the same layout.
    pub fn merge(&mut self, other: &VoxelGrid) -> Result<()> {
        if self.shape != other.shape || self.origin != other.origin || self.pitch != other.pitch {
            return Err(Error::Dimension(
                "voxel grids have different layouts".into(),
            ));
        }
        for (a, b) in self.theta_sum.iter_mut().zip(&other.theta_sum) {
            *a += b;
        }
        for (a, b) in self.path_sum.iter_mut().zip(&other.path_sum) {
            *a += b;
        }
        for (a, b) in self.count.iter_mut().zip(&other.count) {
            *a += b;
        }
        Ok(())
    }
}
