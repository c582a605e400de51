//! Region-of-interest masks derived from per-point category labels.
//!
//! Points whose category is in the background set get `m = 0`; every other
//! point is foreground and gets `m = 1`, i.e. a coding and metric weight
//! `W = 1 + m = 2`. Masks move between point sets by nearest-neighbour lookup.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::pointcloud::Point3;
use crate::residual::ResidualSet;
use crate::spatial::{SpatialError, SpatialIndex};

/// Category names treated as background when a config lists names only.
pub const DEFAULT_BACKGROUND_NAMES: [&str; 4] = ["wall", "floor", "door", "furniture"];

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("mask index {index} out of range for {n} points")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("point {0} is listed as both foreground and background")]
    Overlap(usize),
    #[error("point {0} is in neither region")]
    Uncovered(usize),
    #[error("mask has {mask} entries but {expected} were expected")]
    LengthMismatch { mask: usize, expected: usize },
    #[error("mask value {value} at index {index} is negative or not finite")]
    BadValue { index: usize, value: f64 },
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error("label config: {0}")]
    Config(String),
}

/// Foreground / background split of a labeled cloud.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RegionPartition {
    pub fg_indices: Vec<usize>,
    pub bg_indices: Vec<usize>,
}

impl RegionPartition {
    pub fn len(&self) -> usize {
        self.fg_indices.len() + self.bg_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-point ROI weights `m >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMap {
    values: Vec<f64>,
}

impl MaskMap {
    pub fn new(values: Vec<f64>) -> Result<Self, MaskError> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(MaskError::BadValue { index, value });
        }
        Ok(Self { values })
    }

    /// All-zero mask (no ROI).
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    /// Constant mask.
    pub fn constant(n: usize, m: f64) -> Result<Self, MaskError> {
        Self::new(vec![m; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Coding / metric weight `W(i) = 1 + m(i)`.
    pub fn weight(&self, i: usize) -> f64 {
        1.0 + self.values[i]
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(|m| 1.0 + m)
    }

    /// Mask reordered so entry `k` is this mask's entry `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self, MaskError> {
        let n = self.values.len();
        order
            .iter()
            .map(|&i| {
                self.values
                    .get(i)
                    .copied()
                    .ok_or(MaskError::IndexOutOfRange { index: i, n })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(|values| Self { values })
    }

    /// Writes `index,m` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,m\n");
        for (i, m) in self.values.iter().enumerate() {
            let _ = writeln!(s, "{i},{m}");
        }
        s
    }
}

/// A point is background iff its label is in `background`.
pub fn select_regions(labels: &[u32], background: &BTreeSet<u32>) -> RegionPartition {
    let (bg, fg): (Vec<usize>, Vec<usize>) =
        (0..labels.len()).partition(|&i| background.contains(&labels[i]));
    RegionPartition {
        fg_indices: fg,
        bg_indices: bg,
    }
}

/// Foreground weight used by [`build_mask`].
pub const FG_MASK_VALUE: f64 = 1.0;

/// `m = 1` on foreground (doubling its weight), `m = 0` on background.
pub fn build_mask(partition: &RegionPartition, n: usize) -> Result<MaskMap, MaskError> {
    build_mask_with(partition, n, FG_MASK_VALUE)
}

/// As [`build_mask`] with a custom foreground value.
pub fn build_mask_with(partition: &RegionPartition, n: usize, fg_value: f64) -> Result<MaskMap, MaskError> {
    if !(fg_value.is_finite() && fg_value >= 0.0) {
        return Err(MaskError::BadValue {
            index: 0,
            value: fg_value,
        });
    }
    let mut seen = vec![false; n];
    let mut values = vec![0.0; n];
    for (set, value) in [(&partition.fg_indices, fg_value), (&partition.bg_indices, 0.0)] {
        for &i in set {
            if i >= n {
                return Err(MaskError::IndexOutOfRange { index: i, n });
            }
            if seen[i] {
                return Err(MaskError::Overlap(i));
            }
            seen[i] = true;
            values[i] = value;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(MaskError::Uncovered(i));
    }
    Ok(MaskMap { values })
}

/// Each target point takes the mask value of its nearest source point.
pub fn transfer_mask(
    source: &[Point3],
    source_mask: &MaskMap,
    target: &[Point3],
) -> Result<MaskMap, MaskError> {
    if source_mask.len() != source.len() {
        return Err(MaskError::LengthMismatch {
            mask: source_mask.len(),
            expected: source.len(),
        });
    }
    let index = SpatialIndex::build(source)?;
    transfer_mask_with(&index, source_mask, target)
}

/// [`transfer_mask`] against a prebuilt index over the source points.
pub fn transfer_mask_with(
    index: &SpatialIndex,
    source_mask: &MaskMap,
    target: &[Point3],
) -> Result<MaskMap, MaskError> {
    if source_mask.len() != index.len() {
        return Err(MaskError::LengthMismatch {
            mask: source_mask.len(),
            expected: index.len(),
        });
    }
    let values = target
        .par_iter()
        .map(|q| source_mask.values[index.nearest(q).index])
        .collect();
    Ok(MaskMap { values })
}

fn check_aligned(residuals: &ResidualSet, mask: &MaskMap) -> Result<(), MaskError> {
    if mask.len() != residuals.len() {
        return Err(MaskError::LengthMismatch {
            mask: mask.len(),
            expected: residuals.len(),
        });
    }
    Ok(())
}

/// Multiplies each residual by `1 + m(i)`.
pub fn scale_residuals(residuals: &ResidualSet, mask: &MaskMap) -> Result<ResidualSet, MaskError> {
    check_aligned(residuals, mask)?;
    Ok(residuals.map_vectors(|i, r| r.map(|c| c * mask.weight(i))))
}

/// Divides each residual by `1 + m(i)`.
pub fn unscale_residuals(residuals: &ResidualSet, mask: &MaskMap) -> Result<ResidualSet, MaskError> {
    check_aligned(residuals, mask)?;
    Ok(residuals.map_vectors(|i, r| r.map(|c| c / mask.weight(i))))
}

/// Label naming and background selection, as stored in the JSON config:
/// `{"background_labels": [ints], "label_names": {"id": "name"}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LabelConfig {
    /// Explicit background ids. When absent, ids whose name is one of
    /// [`DEFAULT_BACKGROUND_NAMES`] are background.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_labels: Option<Vec<u32>>,
    #[serde(default)]
    pub label_names: BTreeMap<u32, String>,
}

impl LabelConfig {
    pub fn from_json(text: &str) -> Result<Self, MaskError> {
        serde_json::from_str(text).map_err(|e| MaskError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Config matching the label ids of [`crate::synthetic`].
    pub fn synthetic() -> Self {
        Self {
            background_labels: None,
            label_names: crate::synthetic::LABEL_NAMES
                .iter()
                .enumerate()
                .map(|(i, n)| (i as u32, n.to_string()))
                .collect(),
        }
    }

    pub fn background_set(&self) -> BTreeSet<u32> {
        match &self.background_labels {
            Some(ids) => ids.iter().copied().collect(),
            None => self
                .label_names
                .iter()
                .filter(|(_, name)| {
                    DEFAULT_BACKGROUND_NAMES
                        .iter()
                        .any(|d| d.eq_ignore_ascii_case(name))
                })
                .map(|(&id, _)| id)
                .collect(),
        }
    }

    /// First 8 bytes of the SHA-256 of the canonical JSON, little-endian.
    pub fn hash(&self) -> u64 {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}
