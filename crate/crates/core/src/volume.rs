//! Voxel geometry in MNI millimetres and boolean voxel masks.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Coordinates are matched on a 1e-6 mm lattice when looking for mirrors.
const MIRROR_QUANTUM_MM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hemisphere {
    Left,
    Right,
}

impl Hemisphere {
    /// MNI convention: negative x is left. The midline (x = 0) belongs to
    /// neither hemisphere.
    pub fn of_x(x: f64) -> Option<Hemisphere> {
        if x < 0.0 {
            Some(Hemisphere::Left)
        } else if x > 0.0 {
            Some(Hemisphere::Right)
        } else {
            None
        }
    }

    pub fn opposite(self) -> Hemisphere {
        match self {
            Hemisphere::Left => Hemisphere::Right,
            Hemisphere::Right => Hemisphere::Left,
        }
    }

    pub fn parse(s: &str) -> Option<Hemisphere> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l" | "left" | "lh" => Some(Hemisphere::Left),
            "r" | "right" | "rh" => Some(Hemisphere::Right),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Hemisphere::Left => "left",
            Hemisphere::Right => "right",
        }
    }
}

/// Voxel-id to MNI-millimetre table. Voxel `i` is column `i` of every BOLD
/// and score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGeometry {
    coords: Vec<[f64; 3]>,
}

impl VoxelGeometry {
    pub fn new(coords: Vec<[f64; 3]>) -> Self {
        VoxelGeometry { coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coord(&self, voxel: usize) -> [f64; 3] {
        self.coords[voxel]
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn hemisphere(&self, voxel: usize) -> Option<Hemisphere> {
        Hemisphere::of_x(self.coords[voxel][0])
    }

    /// Smallest positive spacing between distinct coordinate values along
    /// each axis, `None` for an axis holding a single value.
    pub fn grid_spacing(&self) -> [Option<f64>; 3] {
        let mut out = [None; 3];
        for (axis, slot) in out.iter_mut().enumerate() {
            let mut vals: Vec<f64> = self.coords.iter().map(|c| c[axis]).collect();
            vals.sort_by(|a, b| a.total_cmp(b));
            vals.dedup_by(|a, b| (*a - *b).abs() <= MIRROR_QUANTUM_MM);
            *slot = vals
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))));
        }
        out
    }

    fn key(c: [f64; 3]) -> (i64, i64, i64) {
        let q = |v: f64| (v / MIRROR_QUANTUM_MM).round() as i64;
        (q(c[0]), q(c[1]), q(c[2]))
    }

    /// For each voxel, the voxel at `(-x, y, z)` if the grid contains one.
    pub fn mirror_index(&self) -> Vec<Option<usize>> {
        let lookup: HashMap<(i64, i64, i64), usize> = self
            .coords
            .iter()
            .enumerate()
            .map(|(i, c)| (Self::key(*c), i))
            .collect();
        self.coords
            .iter()
            .map(|c| {
                let (x, y, z) = Self::key(*c);
                lookup.get(&(-x, y, z)).copied()
            })
            .collect()
    }

    /// Same geometry with every x coordinate negated.
    pub fn mirrored(&self) -> VoxelGeometry {
        VoxelGeometry {
            coords: self.coords.iter().map(|c| [-c[0], c[1], c[2]]).collect(),
        }
    }
}

/// Boolean subset of voxels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    bits: Vec<bool>,
    label: String,
}

impl Mask {
    pub fn new(bits: Vec<bool>, label: impl Into<String>) -> Self {
        Mask {
            bits,
            label: label.into(),
        }
    }

    pub fn full(n: usize, label: impl Into<String>) -> Self {
        Mask::new(vec![true; n], label)
    }

    pub fn empty(n: usize, label: impl Into<String>) -> Self {
        Mask::new(vec![false; n], label)
    }

    /// Mask of length `n` holding exactly `ids`. Ids out of range are
    /// returned as the error value.
    pub fn from_ids(
        n: usize,
        ids: impl IntoIterator<Item = usize>,
        label: impl Into<String>,
    ) -> Result<Self, usize> {
        let mut bits = vec![false; n];
        for id in ids {
            *bits.get_mut(id).ok_or(id)? = true;
        }
        Ok(Mask::new(bits, label))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn get(&self, voxel: usize) -> bool {
        self.bits[voxel]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
    }

    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!(self.len(), other.len(), "mask length mismatch");
        Mask::new(
            self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
            format!("{}&{}", self.label, other.label),
        )
    }

    pub fn or(&self, other: &Mask) -> Mask {
        assert_eq!(self.len(), other.len(), "mask length mismatch");
        Mask::new(
            self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
            format!("{}|{}", self.label, other.label),
        )
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.len() == other.len() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Voxels of this mask lying in one hemisphere.
    pub fn restrict_to(&self, geometry: &VoxelGeometry, hemi: Hemisphere) -> Mask {
        Mask::new(
            self.bits
                .iter()
                .enumerate()
                .map(|(i, b)| *b && geometry.hemisphere(i) == Some(hemi))
                .collect(),
            format!("{}:{}", self.label, hemi.as_str()),
        )
    }
}
