//! Point clouds, voxel grids and the quantize / dequantize pair that defines
//! the base-layer geometry.

use std::collections::HashMap;

use thiserror::Error;

use crate::morton;

/// A point in dataset units.
pub type Point3 = [f64; 3];

/// An integer voxel index.
pub type Voxel = [i32; 3];

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("label count {labels} does not match point count {points}")]
    LabelMismatch { points: usize, labels: usize },
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("quantization step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("voxel {0:?} appears more than once")]
    DuplicateVoxel(Voxel),
    #[error("voxel count {voxels} does not match count entries {counts}")]
    CountMismatch { voxels: usize, counts: usize },
    #[error("voxel {0:?} has a zero point count")]
    ZeroCount(Voxel),
    #[error("point {index} quantizes outside the representable voxel range")]
    VoxelOverflow { index: usize },
}

/// Raw 3D points with optional per-point category labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    positions: Vec<Point3>,
    labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Point3>) -> Result<Self, CloudError> {
        Self::with_labels(positions, None)
    }

    pub fn with_labels(
        positions: Vec<Point3>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self, CloudError> {
        if let Some(l) = &labels {
            if l.len() != positions.len() {
                return Err(CloudError::LabelMismatch {
                    points: positions.len(),
                    labels: l.len(),
                });
            }
        }
        if let Some(index) = positions
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(CloudError::NonFinite { index });
        }
        Ok(Self { positions, labels })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Drops the labels, keeping positions.
    pub fn without_labels(&self) -> Self {
        Self {
            positions: self.positions.clone(),
            labels: None,
        }
    }

    /// Component-wise `(min, max)` corners, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        bounds_of(&self.positions)
    }

    /// Subset of the cloud at the given indices, labels included.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }
}

pub(crate) fn bounds_of(points: &[Point3]) -> Option<(Point3, Point3)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(mut lo, mut hi), p| {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
        (lo, hi)
    }))
}

/// Quantized, deduplicated voxel set. Voxels are kept in Morton order, which
/// is the canonical order used by the octree coder and the reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    voxels: Vec<Voxel>,
    counts: Vec<u32>,
    step: f64,
    origin: Point3,
}

impl VoxelGrid {
    /// Builds a grid from unordered voxels; they are sorted into Morton order.
    pub fn new(
        voxels: Vec<Voxel>,
        counts: Vec<u32>,
        step: f64,
        origin: Point3,
    ) -> Result<Self, CloudError> {
        check_step(step)?;
        if voxels.len() != counts.len() {
            return Err(CloudError::CountMismatch {
                voxels: voxels.len(),
                counts: counts.len(),
            });
        }
        let mut pairs: Vec<(Voxel, u32)> = voxels.into_iter().zip(counts).collect();
        pairs.sort_unstable_by_key(|(v, _)| morton::signed_key(*v));
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(CloudError::DuplicateVoxel(w[0].0));
            }
        }
        if let Some((v, _)) = pairs.iter().find(|(_, c)| *c == 0) {
            return Err(CloudError::ZeroCount(*v));
        }
        let (voxels, counts) = pairs.into_iter().unzip();
        Ok(Self {
            voxels,
            counts,
            step,
            origin,
        })
    }

    /// Grid with no voxels.
    pub fn empty(step: f64, origin: Point3) -> Result<Self, CloudError> {
        check_step(step)?;
        Ok(Self {
            voxels: Vec::new(),
            counts: Vec::new(),
            step,
            origin,
        })
    }

    /// Trusted constructor for voxels already in Morton order and unique.
    pub(crate) fn from_sorted(voxels: Vec<Voxel>, counts: Vec<u32>, step: f64, origin: Point3) -> Self {
        debug_assert!(voxels
            .windows(2)
            .all(|w| morton::signed_key(w[0]) < morton::signed_key(w[1])));
        Self {
            voxels,
            counts,
            step,
            origin,
        }
    }

    pub fn voxels(&self) -> &[Voxel] {
        &self.voxels
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Total number of source points represented by the grid.
    pub fn point_count(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Dequantized position of a voxel: `origin + v * step`.
    pub fn center(&self, v: Voxel) -> Point3 {
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = self.origin[a] + f64::from(v[a]) * self.step;
        }
        p
    }
}

fn check_step(step: f64) -> Result<(), CloudError> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(CloudError::BadStep(step))
    }
}

/// Result of quantizing a cloud: the grid plus, for every original point, the
/// slot of its voxel in `grid.voxels()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub grid: VoxelGrid,
    pub assignment: Vec<usize>,
}

/// Quantizes with the origin at zero.
pub fn quantize(cloud: &PointCloud, step: f64) -> Result<Quantized, CloudError> {
    quantize_at(cloud, step, [0.0; 3])
}

/// Quantizes with the origin at the cloud's component-wise minimum, so every
/// voxel index is non-negative. This is what the encoder uses.
pub fn quantize_from_min(cloud: &PointCloud, step: f64) -> Result<Quantized, CloudError> {
    let origin = cloud.bounds().map(|(lo, _)| lo).unwrap_or([0.0; 3]);
    quantize_at(cloud, step, origin)
}

/// `v = round((p - origin) / step)` per axis, half away from zero.
pub fn quantize_at(cloud: &PointCloud, step: f64, origin: Point3) -> Result<Quantized, CloudError> {
    check_step(step)?;
    let mut slot_of: HashMap<Voxel, usize> = HashMap::new();
    let mut voxels: Vec<Voxel> = Vec::new();
    let mut counts: Vec<u32> = Vec::new();
    let mut first_pass = Vec::with_capacity(cloud.len());
    for (index, p) in cloud.positions().iter().enumerate() {
        let mut v = [0i32; 3];
        for a in 0..3 {
            let q = ((p[a] - origin[a]) / step).round();
            if !(q >= f64::from(i32::MIN) && q <= f64::from(i32::MAX)) {
                return Err(CloudError::VoxelOverflow { index });
            }
            v[a] = q as i32;
        }
        let slot = *slot_of.entry(v).or_insert_with(|| {
            voxels.push(v);
            counts.push(0);
            voxels.len() - 1
        });
        counts[slot] += 1;
        first_pass.push(slot);
    }

    // Re-slot into Morton order.
    let mut order: Vec<usize> = (0..voxels.len()).collect();
    order.sort_unstable_by_key(|&i| morton::signed_key(voxels[i]));
    let mut new_slot = vec![0usize; voxels.len()];
    for (rank, &old) in order.iter().enumerate() {
        new_slot[old] = rank;
    }
    let sorted_voxels = order.iter().map(|&i| voxels[i]).collect();
    let sorted_counts = order.iter().map(|&i| counts[i]).collect();
    let assignment = first_pass.into_iter().map(|s| new_slot[s]).collect();
    Ok(Quantized {
        grid: VoxelGrid::from_sorted(sorted_voxels, sorted_counts, step, origin),
        assignment,
    })
}

/// One point per voxel at its center, in Morton order.
pub fn dequantize(grid: &VoxelGrid) -> PointCloud {
    PointCloud {
        positions: grid.voxels().iter().map(|&v| grid.center(v)).collect(),
        labels: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[Point3]) -> PointCloud {
        PointCloud::new(points.to_vec()).unwrap()
    }

    #[test]
    fn rounds_each_axis() {
        let q = quantize(&cloud(&[[0.2, 0.4, 0.6], [0.9, 1.4, 2.0]]), 1.0).unwrap();
        let mut vs = q.grid.voxels().to_vec();
        vs.sort();
        assert_eq!(vs, vec![[0, 0, 1], [1, 1, 2]]);
        assert_eq!(q.grid.counts(), &[1, 1]);
    }

    #[test]
    fn merges_points_in_same_voxel() {
        let q = quantize(&cloud(&[[0.1, 0.0, 0.0], [-0.1, 0.0, 0.0]]), 1.0).unwrap();
        assert_eq!(q.grid.voxels(), &[[0, 0, 0]]);
        assert_eq!(q.grid.counts(), &[2]);
        assert_eq!(q.assignment, vec![0, 0]);
    }

    #[test]
    fn fractional_step() {
        let q = quantize(&cloud(&[[0.26, 0.0, 0.0]]), 0.5).unwrap();
        assert_eq!(q.grid.voxels(), &[[1, 0, 0]]);
    }

    #[test]
    fn half_rounds_away_from_zero() {
        let q = quantize(&cloud(&[[0.5, -0.5, 1.5]]), 1.0).unwrap();
        assert_eq!(q.grid.voxels(), &[[1, -1, 2]]);
    }

    #[test]
    fn dequantize_voxel_center() {
        let g = VoxelGrid::new(vec![[1, 0, 0]], vec![1], 0.5, [0.0; 3]).unwrap();
        assert_eq!(dequantize(&g).positions(), &[[0.5, 0.0, 0.0]]);
        let empty = VoxelGrid::empty(0.5, [0.0; 3]).unwrap();
        assert!(dequantize(&empty).is_empty());
    }

    #[test]
    fn min_origin_makes_indices_non_negative() {
        let c = cloud(&[[-3.0, 2.0, 7.0], [1.0, -4.0, 7.5]]);
        let q = quantize_from_min(&c, 0.3).unwrap();
        assert_eq!(q.grid.origin(), [-3.0, -4.0, 7.0]);
        assert!(q.grid.voxels().iter().all(|v| v.iter().all(|&c| c >= 0)));
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            quantize(&cloud(&[[0.0; 3]]), 0.0).unwrap_err(),
            CloudError::BadStep(0.0)
        );
        assert!(matches!(
            PointCloud::new(vec![[f64::NAN, 0.0, 0.0]]),
            Err(CloudError::NonFinite { index: 0 })
        ));
        assert!(matches!(
            PointCloud::with_labels(vec![[0.0; 3]], Some(vec![1, 2])),
            Err(CloudError::LabelMismatch { .. })
        ));
        assert!(matches!(
            VoxelGrid::new(vec![[0, 0, 0], [0, 0, 0]], vec![1, 1], 1.0, [0.0; 3]),
            Err(CloudError::DuplicateVoxel(_))
        ));
        assert!(matches!(
            VoxelGrid::new(vec![[0, 0, 0]], vec![0], 1.0, [0.0; 3]),
            Err(CloudError::ZeroCount(_))
        ));
    }

    #[test]
    fn grid_is_morton_ordered() {
        let g = VoxelGrid::new(
            vec![[1, 1, 1], [0, 0, 1], [1, 0, 0], [0, 0, 0]],
            vec![1, 2, 3, 4],
            1.0,
            [0.0; 3],
        )
        .unwrap();
        assert_eq!(g.voxels(), &[[0, 0, 0], [0, 0, 1], [1, 0, 0], [1, 1, 1]]);
        assert_eq!(g.counts(), &[4, 2, 3, 1]);
        assert_eq!(g.point_count(), 10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_cloud() -> impl Strategy<Value = Vec<Point3>> {
            prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 1..200)
        }

        proptest! {
            #[test]
            fn every_point_within_half_step(points in arb_cloud(), step in 0.01f64..5.0) {
                let c = PointCloud::new(points).unwrap();
                let q = quantize_from_min(&c, step).unwrap();
                prop_assert_eq!(q.grid.point_count(), c.len() as u64);
                for (p, &slot) in c.positions().iter().zip(&q.assignment) {
                    let center = q.grid.center(q.grid.voxels()[slot]);
                    for a in 0..3 {
                        prop_assert!((p[a] - center[a]).abs() <= step / 2.0 * (1.0 + 1e-12));
                    }
                }
            }

            #[test]
            fn requantizing_dequantized_cloud_is_idempotent(points in arb_cloud(), step in 0.01f64..5.0) {
                let c = PointCloud::new(points).unwrap();
                let q = quantize_from_min(&c, step).unwrap();
                let again = quantize_from_min(&dequantize(&q.grid), step).unwrap();
                prop_assert_eq!(again.grid.voxels(), q.grid.voxels());
            }
        }
    }
}
