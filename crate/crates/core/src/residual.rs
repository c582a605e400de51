//! Enhancement layer: per-point residuals against the dequantized base,
//! quantized with an ROI-dependent step and range coded.
//!
//! A point with mask value `m` is coded as `s = round(r * (1 + m) / res_step)`
//! per axis and rebuilt as `s * res_step / (1 + m)`, so its effective step is
//! `res_step / (1 + m)`. The decoder only sees a one-bit ROI flag per point;
//! the foreground weight travels in the container header.
//!
//! Enhancement bitstream layout, little-endian:
//!
//! | field       | type      |
//! |-------------|-----------|
//! | magic       | `b"RPCE"` |
//! | version     | u8 = 1    |
//! | res_step    | f64       |
//! | point_count | u32       |
//! | payload_len | u32       |
//! | payload     | bytes     |
//!
//! The payload is a single range-coded segment: all ROI flags, then the
//! zig-zag mapped symbols, three per point.

use thiserror::Error;

use crate::entropy::{AdaptiveModel, GammaModel, RangeDecoder, RangeEncoder};
use crate::octree::{entropy_at, CodecError, Reader};
use crate::pointcloud::{Point3, PointCloud, VoxelGrid};
use crate::roi::MaskMap;

pub const ENH_MAGIC: &[u8; 4] = b"RPCE";
pub const ENH_VERSION: u8 = 1;
pub const ENH_HEADER_LEN: usize = 4 + 1 + 8 + 4 + 4;

/// Zig-zag values at or above this are escaped.
const ESCAPE: usize = 511;
const ALPHABET: usize = 512;
/// Largest symbol magnitude the coder accepts.
const MAX_SYMBOL: i64 = 1 << 30;

#[derive(Debug, Error, PartialEq)]
pub enum ResidualError {
    #[error("point {point} was assigned to voxel slot {slot}, but the grid has {voxels} voxels")]
    BadAssignment { point: usize, slot: usize, voxels: usize },
    #[error("assignment has {assignment} entries for {points} points")]
    AssignmentLength { points: usize, assignment: usize },
    #[error("voxel slot {slot} holds {actual} assigned points but the grid counts {expected}")]
    CountMismatch { slot: usize, expected: u32, actual: usize },
    #[error("{residuals} residuals but the grid represents {points} points")]
    PointCountMismatch { residuals: usize, points: u64 },
    #[error("residual step must be positive and finite, got {0}")]
    BadResStep(f64),
    #[error("mask has {mask} entries for {residuals} residuals")]
    MaskLength { mask: usize, residuals: usize },
    #[error("mask mixes foreground values {0} and {1}; the enhancement layer codes one foreground weight")]
    MixedForeground(f64, f64),
    #[error("foreground weight must be positive and finite, got {0}")]
    BadFgWeight(f64),
    #[error("residual {0} needs a symbol beyond the coder range; increase the residual step")]
    SymbolOverflow(usize),
    #[error("residual parents are not grouped by voxel in grid order")]
    BadGrouping,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Residual vectors grouped by parent voxel (grid order), and within a voxel
/// by original point order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResidualSet {
    vectors: Vec<Point3>,
    parents: Vec<usize>,
}

impl ResidualSet {
    /// `parents[k]` is the grid slot of the voxel owning `vectors[k]`.
    pub fn new(vectors: Vec<Point3>, parents: Vec<usize>) -> Self {
        assert_eq!(vectors.len(), parents.len(), "one parent per residual");
        Self { vectors, parents }
    }

    pub fn vectors(&self) -> &[Point3] {
        &self.vectors
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub(crate) fn map_vectors(&self, f: impl Fn(usize, &Point3) -> Point3) -> Self {
        Self {
            vectors: self.vectors.iter().enumerate().map(|(i, r)| f(i, r)).collect(),
            parents: self.parents.clone(),
        }
    }

    /// Parent slots implied by a grid: slot `i` repeated `counts[i]` times.
    fn parents_of(grid: &VoxelGrid) -> Vec<usize> {
        grid.counts()
            .iter()
            .enumerate()
            .flat_map(|(slot, &c)| std::iter::repeat(slot).take(c as usize))
            .collect()
    }
}

/// Residuals in canonical order, plus for each the index of the original
/// point it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputedResiduals {
    pub residuals: ResidualSet,
    pub source: Vec<usize>,
}

/// `r_i = p_i - center(assignment[i])`, regrouped into canonical order.
pub fn compute_residuals(
    original: &PointCloud,
    grid: &VoxelGrid,
    assignment: &[usize],
) -> Result<ComputedResiduals, ResidualError> {
    if assignment.len() != original.len() {
        return Err(ResidualError::AssignmentLength {
            points: original.len(),
            assignment: assignment.len(),
        });
    }
    let mut per_slot: Vec<Vec<usize>> = vec![Vec::new(); grid.len()];
    for (point, &slot) in assignment.iter().enumerate() {
        per_slot
            .get_mut(slot)
            .ok_or(ResidualError::BadAssignment {
                point,
                slot,
                voxels: grid.len(),
            })?
            .push(point);
    }
    let mut vectors = Vec::with_capacity(original.len());
    let mut parents = Vec::with_capacity(original.len());
    let mut source = Vec::with_capacity(original.len());
    for (slot, members) in per_slot.iter().enumerate() {
        let expected = grid.counts()[slot];
        if members.len() != expected as usize {
            return Err(ResidualError::CountMismatch {
                slot,
                expected,
                actual: members.len(),
            });
        }
        let c = grid.center(grid.voxels()[slot]);
        for &i in members {
            let p = original.positions()[i];
            vectors.push([p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
            parents.push(slot);
            source.push(i);
        }
    }
    Ok(ComputedResiduals {
        residuals: ResidualSet { vectors, parents },
        source,
    })
}

/// The single positive mask value, or `None` if the mask is all zero.
pub fn foreground_weight(mask: &MaskMap) -> Result<Option<f64>, ResidualError> {
    let mut fg: Option<f64> = None;
    for &m in mask.values() {
        if m > 0.0 {
            match fg {
                None => fg = Some(m),
                Some(w) if w != m => return Err(ResidualError::MixedForeground(w, m)),
                _ => {}
            }
        }
    }
    Ok(fg)
}

#[inline]
fn dequantize_symbol(s: i64, res_step: f64, scale: f64) -> f64 {
    s as f64 * res_step / scale
}

/// Nearest symbol for one component, nudged if floating-point rounding would
/// otherwise break `|r - r_hat| <= res_step / (2 * scale)` as the decoder
/// computes it.
fn quantize_component(r: f64, res_step: f64, scale: f64) -> i64 {
    let s = (r * scale / res_step).round() as i64;
    let bound = res_step / (2.0 * scale);
    let err = |s: i64| (r - dequantize_symbol(s, res_step, scale)).abs();
    if err(s) <= bound {
        return s;
    }
    [s - 1, s + 1]
        .into_iter()
        .filter(|&c| err(c) <= bound)
        .min_by(|&a, &b| err(a).total_cmp(&err(b)))
        .unwrap_or(s)
}

fn zigzag(s: i64) -> u64 {
    if s < 0 {
        (-2 * s - 1) as u64
    } else {
        (2 * s) as u64
    }
}

fn unzigzag(z: u64) -> i64 {
    if z & 1 == 1 {
        -((z >> 1) as i64) - 1
    } else {
        (z >> 1) as i64
    }
}

/// Per-flag, per-axis symbol models plus a shared escape model.
struct SymbolModels {
    flag: AdaptiveModel,
    symbols: [[AdaptiveModel; 3]; 2],
    escape: GammaModel,
}

impl SymbolModels {
    fn new() -> Self {
        let axis = || std::array::from_fn(|_| AdaptiveModel::new(ALPHABET));
        Self {
            flag: AdaptiveModel::new(2),
            symbols: [axis(), axis()],
            escape: GammaModel::default(),
        }
    }
}

/// Codes residuals (aligned with `mask`) at residual step `res_step`.
pub fn encode_enhancement(
    residuals: &ResidualSet,
    mask: &MaskMap,
    res_step: f64,
) -> Result<Vec<u8>, ResidualError> {
    if !(res_step > 0.0 && res_step.is_finite()) {
        return Err(ResidualError::BadResStep(res_step));
    }
    if mask.len() != residuals.len() {
        return Err(ResidualError::MaskLength {
            mask: mask.len(),
            residuals: residuals.len(),
        });
    }
    foreground_weight(mask)?;
    let point_count = u32::try_from(residuals.len())
        .map_err(|_| CodecError::Invalid("more than u32::MAX residuals".into()))?;

    let mut enc = RangeEncoder::new();
    let mut models = SymbolModels::new();
    for &m in mask.values() {
        enc.encode(&mut models.flag, usize::from(m > 0.0))
            .map_err(CodecError::from)?;
    }
    for (i, r) in residuals.vectors().iter().enumerate() {
        let m = mask.values()[i];
        let flag = usize::from(m > 0.0);
        let scale = 1.0 + m;
        for (axis, &c) in r.iter().enumerate() {
            let s = quantize_component(c, res_step, scale);
            if s.abs() > MAX_SYMBOL {
                return Err(ResidualError::SymbolOverflow(i));
            }
            let z = zigzag(s);
            let model = &mut models.symbols[flag][axis];
            if z < ESCAPE as u64 {
                enc.encode(model, z as usize).map_err(CodecError::from)?;
            } else {
                enc.encode(model, ESCAPE).map_err(CodecError::from)?;
                models
                    .escape
                    .encode(&mut enc, z - ESCAPE as u64 + 1)
                    .map_err(CodecError::from)?;
            }
        }
    }
    let payload = enc.finish();
    let payload_len = u32::try_from(payload.len())
        .map_err(|_| CodecError::Invalid("payload exceeds 4 GiB".into()))?;

    let mut out = Vec::with_capacity(ENH_HEADER_LEN + payload.len());
    out.extend_from_slice(ENH_MAGIC);
    out.push(ENH_VERSION);
    out.extend_from_slice(&res_step.to_le_bytes());
    out.extend_from_slice(&point_count.to_le_bytes());
    out.extend_from_slice(&payload_len.to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decoded enhancement layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedEnhancement {
    /// Reconstructed residuals in canonical order.
    pub residuals: ResidualSet,
    /// Per-point ROI flag (`m > 0` at the encoder).
    pub roi: Vec<bool>,
    pub res_step: f64,
}

/// Decodes an enhancement stream against the decoded base grid. `fg_weight`
/// is the foreground mask value the encoder used.
pub fn decode_enhancement(
    bytes: &[u8],
    grid: &VoxelGrid,
    fg_weight: f64,
) -> Result<DecodedEnhancement, ResidualError> {
    let (dec, used) = decode_enhancement_prefix(bytes, 0, grid, fg_weight)?;
    if used != bytes.len() {
        return Err(CodecError::Corrupt {
            offset: used,
            reason: format!("{} trailing bytes after enhancement payload", bytes.len() - used),
        }
        .into());
    }
    Ok(dec)
}

pub(crate) fn decode_enhancement_prefix(
    bytes: &[u8],
    base: usize,
    grid: &VoxelGrid,
    fg_weight: f64,
) -> Result<(DecodedEnhancement, usize), ResidualError> {
    if !(fg_weight > 0.0 && fg_weight.is_finite()) {
        return Err(ResidualError::BadFgWeight(fg_weight));
    }
    let mut r = Reader::new(bytes, base);
    r.magic(ENH_MAGIC)?;
    r.version(ENH_VERSION)?;
    let step_at = r.offset();
    let res_step = r.f64()?;
    if !(res_step > 0.0 && res_step.is_finite()) {
        return Err(CodecError::Corrupt {
            offset: step_at,
            reason: format!("invalid residual step {res_step}"),
        }
        .into());
    }
    let point_count = r.u32()? as usize;
    if point_count as u64 != grid.point_count() {
        return Err(ResidualError::PointCountMismatch {
            residuals: point_count,
            points: grid.point_count(),
        });
    }
    let payload_len = r.u32()? as usize;
    let payload_at = r.offset();
    let payload = r.take(payload_len)?;

    let at = entropy_at(payload_at);
    let mut dec = RangeDecoder::new(payload).map_err(&at)?;
    let mut models = SymbolModels::new();
    let roi = (0..point_count)
        .map(|_| dec.decode(&mut models.flag).map(|f| f == 1))
        .collect::<Result<Vec<_>, _>>()
        .map_err(&at)?;
    let mut vectors = Vec::with_capacity(point_count);
    for (i, &flag) in roi.iter().enumerate() {
        let scale = if flag { 1.0 + fg_weight } else { 1.0 };
        let mut v = [0.0; 3];
        for (axis, c) in v.iter_mut().enumerate() {
            let model = &mut models.symbols[usize::from(flag)][axis];
            let mut z = dec.decode(model).map_err(&at)? as u64;
            if z == ESCAPE as u64 {
                z = models.escape.decode(&mut dec).map_err(&at)? + ESCAPE as u64 - 1;
            }
            let s = unzigzag(z);
            if s.abs() > MAX_SYMBOL {
                return Err(CodecError::Corrupt {
                    offset: payload_at + dec.position(),
                    reason: format!("symbol out of range for residual {i}"),
                }
                .into());
            }
            *c = dequantize_symbol(s, res_step, scale);
        }
        vectors.push(v);
    }
    let residuals = ResidualSet {
        vectors,
        parents: ResidualSet::parents_of(grid),
    };
    Ok((
        DecodedEnhancement {
            residuals,
            roi,
            res_step,
        },
        ENH_HEADER_LEN + payload_len,
    ))
}

/// `p_hat = center(parent) + r_hat`, in canonical order.
pub fn reconstruct(grid: &VoxelGrid, residuals: &ResidualSet) -> Result<PointCloud, ResidualError> {
    if residuals.len() as u64 != grid.point_count() {
        return Err(ResidualError::PointCountMismatch {
            residuals: residuals.len(),
            points: grid.point_count(),
        });
    }
    if residuals.parents() != ResidualSet::parents_of(grid) {
        return Err(ResidualError::BadGrouping);
    }
    let positions = residuals
        .vectors()
        .iter()
        .zip(residuals.parents())
        .map(|(r, &slot)| {
            let c = grid.center(grid.voxels()[slot]);
            [c[0] + r[0], c[1] + r[1], c[2] + r[2]]
        })
        .collect();
    Ok(PointCloud::new(positions).expect("finite centers plus finite residuals"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{quantize, quantize_from_min};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(p: Point3, step: f64) -> (VoxelGrid, ComputedResiduals) {
        let cloud = PointCloud::new(vec![p]).unwrap();
        let q = quantize(&cloud, step).unwrap();
        let r = compute_residuals(&cloud, &q.grid, &q.assignment).unwrap();
        (q.grid, r)
    }

    #[test]
    fn residual_arithmetic() {
        let (g, r) = single([0.6, 0.0, 0.0], 1.0);
        assert_eq!(g.voxels(), &[[1, 0, 0]]);
        assert_eq!(r.residuals.vectors()[0][0], 0.6 - 1.0);
        let (_, r) = single([2.0, 3.0, -1.0], 1.0);
        assert_eq!(r.residuals.vectors()[0], [0.0; 3]);
    }

    #[test]
    fn grouped_by_voxel_then_original_order() {
        let cloud = PointCloud::new(vec![[1.1, 0.0, 0.0], [0.1, 0.0, 0.0], [0.9, 0.0, 0.0], [-0.2, 0.0, 0.0]]).unwrap();
        let q = quantize(&cloud, 1.0).unwrap();
        let r = compute_residuals(&cloud, &q.grid, &q.assignment).unwrap();
        assert_eq!(r.source, vec![1, 3, 0, 2]);
        assert_eq!(r.residuals.parents(), &[0, 0, 1, 1]);
    }

    #[test]
    fn inconsistent_assignment_is_error() {
        let cloud = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let q = quantize(&cloud, 1.0).unwrap();
        assert!(matches!(
            compute_residuals(&cloud, &q.grid, &[0, 7]),
            Err(ResidualError::BadAssignment { slot: 7, .. })
        ));
        assert!(matches!(
            compute_residuals(&cloud, &q.grid, &[0, 0]),
            Err(ResidualError::CountMismatch { .. })
        ));
        assert!(matches!(
            compute_residuals(&cloud, &q.grid, &[0]),
            Err(ResidualError::AssignmentLength { .. })
        ));
    }

    fn code_one(r: f64, m: f64, res_step: f64) -> f64 {
        let cloud = PointCloud::new(vec![[r, 0.0, 0.0]]).unwrap();
        let q = quantize(&cloud, 1.0).unwrap();
        let c = compute_residuals(&cloud, &q.grid, &q.assignment).unwrap();
        let mask = MaskMap::new(vec![m]).unwrap();
        let bytes = encode_enhancement(&c.residuals, &mask, res_step).unwrap();
        let fg = if m > 0.0 { m } else { 1.0 };
        decode_enhancement(&bytes, &q.grid, fg).unwrap().residuals.vectors()[0][0]
    }

    #[test]
    fn roi_step_is_finer() {
        // 0.04 * 2 / 0.1 = 0.8 -> 1 -> 0.05
        assert_eq!(code_one(0.04, 1.0, 0.1), 0.1 / 2.0);
        assert_eq!(code_one(0.04, 0.0, 0.1), 0.0);
    }

    #[test]
    fn input_validation() {
        let set = ResidualSet::new(vec![[0.0; 3]], vec![0]);
        assert_eq!(
            encode_enhancement(&set, &MaskMap::zeros(1), 0.0).unwrap_err(),
            ResidualError::BadResStep(0.0)
        );
        assert!(matches!(
            encode_enhancement(&set, &MaskMap::zeros(2), 0.1),
            Err(ResidualError::MaskLength { .. })
        ));
        let set2 = ResidualSet::new(vec![[0.0; 3]; 2], vec![0, 0]);
        assert!(matches!(
            encode_enhancement(&set2, &MaskMap::new(vec![1.0, 2.0]).unwrap(), 0.1),
            Err(ResidualError::MixedForeground(..))
        ));
        assert!(matches!(
            encode_enhancement(&ResidualSet::new(vec![[1.0, 0.0, 0.0]], vec![0]), &MaskMap::zeros(1), 1e-12),
            Err(ResidualError::SymbolOverflow(0))
        ));
    }

    #[test]
    fn grid_mismatch_is_error() {
        let cloud = PointCloud::new(vec![[0.0; 3], [0.1, 0.0, 0.0]]).unwrap();
        let q = quantize(&cloud, 1.0).unwrap();
        let c = compute_residuals(&cloud, &q.grid, &q.assignment).unwrap();
        let bytes = encode_enhancement(&c.residuals, &MaskMap::zeros(2), 0.1).unwrap();
        let other = VoxelGrid::new(vec![[0, 0, 0]], vec![3], 1.0, [0.0; 3]).unwrap();
        assert!(matches!(
            decode_enhancement(&bytes, &other, 1.0),
            Err(ResidualError::PointCountMismatch { .. })
        ));
        assert!(matches!(
            reconstruct(&other, &c.residuals),
            Err(ResidualError::PointCountMismatch { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(matches!(
            decode_enhancement(&bad, &q.grid, 1.0),
            Err(ResidualError::Codec(CodecError::BadMagic { .. }))
        ));
        assert!(decode_enhancement(&bytes[..bytes.len() - 1], &q.grid, 1.0).is_err());
    }

    #[test]
    fn header_layout() {
        let set = ResidualSet::new(vec![[0.01, 0.0, 0.0]; 3], vec![0; 3]);
        let b = encode_enhancement(&set, &MaskMap::zeros(3), 0.125).unwrap();
        assert_eq!(&b[..4], b"RPCE");
        assert_eq!(b[4], 1);
        assert_eq!(f64::from_le_bytes(b[5..13].try_into().unwrap()), 0.125);
        assert_eq!(u32::from_le_bytes(b[13..17].try_into().unwrap()), 3);
        let len = u32::from_le_bytes(b[17..21].try_into().unwrap()) as usize;
        assert_eq!(b.len(), ENH_HEADER_LEN + len);
    }

    #[test]
    fn zero_residuals_reconstruct_base() {
        let g = VoxelGrid::new(vec![[0, 0, 0], [2, 1, 0]], vec![2, 1], 0.5, [1.0, 1.0, 1.0]).unwrap();
        let set = ResidualSet::new(vec![[0.0; 3]; 3], vec![0, 0, 1]);
        let rec = reconstruct(&g, &set).unwrap();
        assert_eq!(rec.positions(), &[[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [2.0, 1.5, 1.0]]);
    }

    #[test]
    fn huge_residual_step_falls_back_to_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Point3> = (0..500).map(|_| [rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)]).collect();
        let cloud = PointCloud::new(pts).unwrap();
        let step = 0.4;
        let q = quantize_from_min(&cloud, step).unwrap();
        let c = compute_residuals(&cloud, &q.grid, &q.assignment).unwrap();
        let mask = MaskMap::new((0..500).map(|i| (i % 2) as f64).collect()).unwrap();
        let perm = mask.permuted(&c.source).unwrap();
        let bytes = encode_enhancement(&c.residuals, &perm, step * 2.0 * 1.01).unwrap();
        let d = decode_enhancement(&bytes, &q.grid, 1.0).unwrap();
        assert!(d.residuals.vectors().iter().all(|v| *v == [0.0; 3]));
    }

    #[test]
    fn escape_codes_large_symbols() {
        let set = ResidualSet::new(vec![[0.4, -0.49, 0.3], [0.0, 0.0, 0.0001]], vec![0, 0]);
        let g = VoxelGrid::new(vec![[0, 0, 0]], vec![2], 1.0, [0.0; 3]).unwrap();
        let res_step = 1e-4;
        let mask = MaskMap::new(vec![1.0, 0.0]).unwrap();
        let bytes = encode_enhancement(&set, &mask, res_step).unwrap();
        let d = decode_enhancement(&bytes, &g, 1.0).unwrap();
        assert_eq!(d.roi, vec![true, false]);
        for (i, (a, b)) in set.vectors().iter().zip(d.residuals.vectors()).enumerate() {
            let bound = res_step / (2.0 * mask.weight(i));
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= bound);
            }
        }
    }

    #[test]
    fn lattice_input_is_lossless() {
        // Integer lattice, base step 4, residual step 1: every residual is an
        // integer and the symbols capture it exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Point3> = (0..2000)
            .map(|_| [rng.gen_range(0..40) as f64, rng.gen_range(0..40) as f64, rng.gen_range(0..40) as f64])
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let q = quantize_from_min(&cloud, 4.0).unwrap();
        let c = compute_residuals(&cloud, &q.grid, &q.assignment).unwrap();
        let bytes = encode_enhancement(&c.residuals, &MaskMap::zeros(cloud.len()), 1.0).unwrap();
        let base = crate::octree::decode_base(&crate::octree::encode_base(&q.grid).unwrap()).unwrap();
        let d = decode_enhancement(&bytes, &base, 1.0).unwrap();
        let rec = reconstruct(&base, &d.residuals).unwrap();
        let key = |p: &Point3| p.map(|c| c as i64);
        let mut a: Vec<_> = cloud.positions().iter().map(key).collect();
        let mut b: Vec<_> = rec.positions().iter().map(key).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert!(rec.positions().iter().all(|p| p.iter().all(|c| c.fract() == 0.0)));
    }

    #[test]
    fn roi_points_get_lower_error() {
        let cloud = crate::synthetic::room_scene(&crate::synthetic::SceneParams::default());
        let q = quantize_from_min(&cloud, 0.3).unwrap();
        let c = compute_residuals(&cloud, &q.grid, &q.assignment).unwrap();
        let bg = crate::roi::LabelConfig::synthetic().background_set();
        let part = crate::roi::select_regions(cloud.labels().unwrap(), &bg);
        let mask = crate::roi::build_mask(&part, cloud.len()).unwrap().permuted(&c.source).unwrap();
        let res_step = 0.1;
        let bytes = encode_enhancement(&c.residuals, &mask, res_step).unwrap();
        let d = decode_enhancement(&bytes, &q.grid, 1.0).unwrap();
        let (mut fg, mut bgv) = (Vec::new(), Vec::new());
        for (i, (a, b)) in c.residuals.vectors().iter().zip(d.residuals.vectors()).enumerate() {
            let e: f64 = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum();
            if mask.values()[i] > 0.0 { fg.push(e) } else { bgv.push(e) }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&fg) < mean(&bgv), "{} vs {}", mean(&fg), mean(&bgv));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn per_point_bound_holds(
                pts in prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), 1..400),
                flags in prop::collection::vec(any::<bool>(), 400),
                step in 0.05f64..2.0,
                ratio in 0.01f64..1.5,
            ) {
                let cloud = PointCloud::new(pts).unwrap();
                let n = cloud.len();
                let q = quantize_from_min(&cloud, step).unwrap();
                let c = compute_residuals(&cloud, &q.grid, &q.assignment).unwrap();
                let mask = MaskMap::new(flags[..n].iter().map(|&f| if f { 1.0 } else { 0.0 }).collect()).unwrap();
                let aligned = mask.permuted(&c.source).unwrap();
                let res_step = step * ratio;
                let bytes = encode_enhancement(&c.residuals, &aligned, res_step).unwrap();
                let d = decode_enhancement(&bytes, &q.grid, 1.0).unwrap();
                let rec = reconstruct(&q.grid, &d.residuals).unwrap();
                for (k, p_hat) in rec.positions().iter().enumerate() {
                    let src = c.source[k];
                    prop_assert_eq!(d.roi[k], flags[src]);
                    let bound = res_step / (2.0 * mask.weight(src));
                    let p = cloud.positions()[src];
                    for a in 0..3 {
                        prop_assert!((p[a] - p_hat[a]).abs() <= bound * (1.0 + 1e-9) + 1e-12);
                    }
                }
            }
        }
    }
}
