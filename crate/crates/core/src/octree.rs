//! Lossless base layer: breadth-first octree occupancy codes plus leaf
//! multiplicities, entropy coded with order-0 adaptive models.
//!
//! Base bitstream layout, little-endian:
//!
//! | field         | type     |
//! |---------------|----------|
//! | magic         | `b"RPCB"`|
//! | version       | u8 = 1   |
//! | depth         | u8       |
//! | step          | f64      |
//! | origin        | 3 × f64  |
//! | voxel_count   | u32      |
//! | payload_len   | u32      |
//! | payload       | bytes    |
//!
//! The payload is one range-coded segment: every occupancy byte (256-symbol
//! model) followed by every leaf count (adaptive Elias-gamma).

use thiserror::Error;

use crate::entropy::{AdaptiveModel, EntropyError, GammaModel, RangeDecoder, RangeEncoder};
use crate::morton;
use crate::pointcloud::{CloudError, Voxel, VoxelGrid};

pub const BASE_MAGIC: &[u8; 4] = b"RPCB";
pub const BASE_VERSION: u8 = 1;
/// Bytes before the payload.
pub const BASE_HEADER_LEN: usize = 4 + 1 + 1 + 8 + 24 + 4 + 4;
/// Voxel coordinates must fit in this many bits per axis.
pub const MAX_DEPTH: u32 = 31;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("bad magic at byte {offset}: expected {expected:?}")]
    BadMagic { offset: usize, expected: String },
    #[error("unsupported version {version} at byte {offset}")]
    BadVersion { offset: usize, version: u8 },
    #[error("stream truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("corrupt stream at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("voxel {0:?} has a negative index; quantize against the cloud minimum")]
    NegativeVoxel(Voxel),
    #[error("octree of depth {0} exceeds the supported maximum")]
    TooDeep(u32),
    #[error("cannot build an octree over an empty grid")]
    EmptyGrid,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

/// Occupancy bytes in breadth-first order plus per-leaf multiplicities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyStream {
    pub depth: u32,
    pub codes: Vec<u8>,
    pub leaf_counts: Vec<u32>,
}

impl OccupancyStream {
    /// Checks the popcount chain: each level's node count equals the total
    /// popcount of the level above, and the last level matches the leaves.
    pub fn is_consistent(&self) -> bool {
        let mut nodes = 1usize;
        let mut pos = 0usize;
        for _ in 0..self.depth {
            let Some(level) = self.codes.get(pos..pos + nodes) else {
                return false;
            };
            if level.contains(&0) {
                return false;
            }
            pos += nodes;
            nodes = level.iter().map(|b| b.count_ones() as usize).sum();
        }
        pos == self.codes.len() && nodes == self.leaf_counts.len()
    }
}

/// Tree depth: bits needed for the largest coordinate, at least 1.
pub fn depth_for(voxels: &[Voxel]) -> u32 {
    let max = voxels
        .iter()
        .flat_map(|v| v.iter().copied())
        .max()
        .unwrap_or(0)
        .max(0) as u32;
    (32 - max.leading_zeros()).max(1)
}

pub fn build_octree(grid: &VoxelGrid) -> Result<OccupancyStream, CodecError> {
    if grid.is_empty() {
        return Err(CodecError::EmptyGrid);
    }
    if let Some(v) = grid.voxels().iter().find(|v| v.iter().any(|&c| c < 0)) {
        return Err(CodecError::NegativeVoxel(*v));
    }
    let depth = depth_for(grid.voxels());
    // Grid voxels are in Morton order, so every node at every level owns a
    // contiguous run of them.
    let voxels = grid.voxels();
    let mut ranges = vec![(0usize, voxels.len())];
    let mut codes = Vec::new();
    for level in 0..depth {
        let mut next = Vec::with_capacity(ranges.len() * 2);
        for &(start, end) in &ranges {
            let mut byte = 0u8;
            let mut run_start = start;
            for i in start..end {
                let child = morton::child_index(voxels[i], level, depth);
                byte |= 1 << child;
                let last = i + 1 == end || morton::child_index(voxels[i + 1], level, depth) != child;
                if last {
                    next.push((run_start, i + 1));
                    run_start = i + 1;
                }
            }
            codes.push(byte);
        }
        ranges = next;
    }
    debug_assert_eq!(ranges.len(), voxels.len());
    Ok(OccupancyStream {
        depth,
        codes,
        leaf_counts: grid.counts().to_vec(),
    })
}

/// Expands an occupancy stream back into Morton-ordered voxels.
pub fn decode_octree(stream: &OccupancyStream) -> Result<Vec<Voxel>, CodecError> {
    if !stream.is_consistent() {
        return Err(CodecError::Corrupt {
            offset: 0,
            reason: "occupancy popcount chain is inconsistent".into(),
        });
    }
    let mut nodes: Vec<[u32; 3]> = vec![[0; 3]];
    let mut pos = 0;
    for _ in 0..stream.depth {
        let mut next = Vec::new();
        for (node, &byte) in nodes.iter().zip(&stream.codes[pos..]) {
            for child in 0..8u32 {
                if byte & (1 << child) != 0 {
                    next.push([
                        node[0] << 1 | (child >> 2) & 1,
                        node[1] << 1 | (child >> 1) & 1,
                        node[2] << 1 | child & 1,
                    ]);
                }
            }
        }
        pos += nodes.len();
        nodes = next;
    }
    Ok(nodes.into_iter().map(|n| n.map(|c| c as i32)).collect())
}

fn put_header(out: &mut Vec<u8>, grid: &VoxelGrid, depth: u8, payload_len: u32) {
    out.extend_from_slice(BASE_MAGIC);
    out.push(BASE_VERSION);
    out.push(depth);
    out.extend_from_slice(&grid.step().to_le_bytes());
    for c in grid.origin() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&(grid.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload_len.to_le_bytes());
}

/// Encodes a grid into the base bitstream.
pub fn encode_base(grid: &VoxelGrid) -> Result<Vec<u8>, CodecError> {
    if grid.len() > u32::MAX as usize {
        return Err(CodecError::Invalid("too many voxels".into()));
    }
    let mut out = Vec::new();
    if grid.is_empty() {
        put_header(&mut out, grid, 0, 0);
        return Ok(out);
    }
    let stream = build_octree(grid)?;
    if stream.depth > MAX_DEPTH {
        return Err(CodecError::TooDeep(stream.depth));
    }
    let mut enc = RangeEncoder::new();
    let mut occupancy = AdaptiveModel::new(256);
    for &code in &stream.codes {
        enc.encode(&mut occupancy, usize::from(code))?;
    }
    let mut counts = GammaModel::default();
    for &c in &stream.leaf_counts {
        counts.encode(&mut enc, u64::from(c))?;
    }
    let payload = enc.finish();
    let payload_len = u32::try_from(payload.len())
        .map_err(|_| CodecError::Invalid("payload exceeds 4 GiB".into()))?;
    put_header(&mut out, grid, stream.depth as u8, payload_len);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Little-endian field reader that reports absolute byte offsets.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], base: usize) -> Self {
        Self { bytes, pos: 0, base }
    }

    pub(crate) fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or(CodecError::Truncated {
                offset: self.base + self.bytes.len(),
            })?;
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<(), CodecError> {
        let offset = self.offset();
        if self.take(4)? != expected {
            return Err(CodecError::BadMagic {
                offset,
                expected: String::from_utf8_lossy(expected).into_owned(),
            });
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, expected: u8) -> Result<(), CodecError> {
        let offset = self.offset();
        let version = self.u8()?;
        if version != expected {
            return Err(CodecError::BadVersion { offset, version });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

pub(crate) fn entropy_at(base: usize) -> impl Fn(EntropyError) -> CodecError {
    move |e| match e {
        EntropyError::Truncated(p) => CodecError::Truncated { offset: base + p },
        other => CodecError::Entropy(other),
    }
}

/// Decodes a base bitstream. Trailing bytes after the payload are rejected.
pub fn decode_base(bytes: &[u8]) -> Result<VoxelGrid, CodecError> {
    let (grid, used) = decode_base_prefix(bytes, 0)?;
    if used != bytes.len() {
        return Err(CodecError::Corrupt {
            offset: used,
            reason: format!("{} trailing bytes after base payload", bytes.len() - used),
        });
    }
    Ok(grid)
}

/// Decodes a base bitstream at the start of `bytes`, returning the grid and
/// the number of bytes it occupied. `base` offsets error positions.
pub(crate) fn decode_base_prefix(bytes: &[u8], base: usize) -> Result<(VoxelGrid, usize), CodecError> {
    let mut r = Reader::new(bytes, base);
    r.magic(BASE_MAGIC)?;
    r.version(BASE_VERSION)?;
    let depth_at = r.offset();
    let depth = u32::from(r.u8()?);
    let step_at = r.offset();
    let step = r.f64()?;
    let origin = [r.f64()?, r.f64()?, r.f64()?];
    if !(step > 0.0 && step.is_finite()) || !origin.iter().all(|c| c.is_finite()) {
        return Err(CodecError::Corrupt {
            offset: step_at,
            reason: "step or origin is not a valid number".into(),
        });
    }
    let count_at = r.offset();
    let voxel_count = r.u32()? as usize;
    let payload_len = r.u32()? as usize;
    let payload_at = r.offset();
    let payload = r.take(payload_len)?;
    let used = BASE_HEADER_LEN + payload_len;

    if voxel_count == 0 {
        if depth != 0 || payload_len != 0 {
            return Err(CodecError::Corrupt {
                offset: depth_at,
                reason: "empty grid must have zero depth and payload".into(),
            });
        }
        return Ok((VoxelGrid::empty(step, origin)?, used));
    }
    if depth == 0 || depth > MAX_DEPTH {
        return Err(CodecError::Corrupt {
            offset: depth_at,
            reason: format!("invalid depth {depth}"),
        });
    }

    let at = entropy_at(payload_at);
    let mut dec = RangeDecoder::new(payload).map_err(&at)?;
    let mut occupancy = AdaptiveModel::new(256);
    let mut codes = Vec::new();
    let mut nodes = 1usize;
    for level in 0..depth {
        let mut next = 0usize;
        for _ in 0..nodes {
            let code = dec.decode(&mut occupancy).map_err(&at)? as u8;
            if code == 0 {
                return Err(CodecError::Corrupt {
                    offset: payload_at + dec.position(),
                    reason: format!("empty occupancy byte at level {level}"),
                });
            }
            next += code.count_ones() as usize;
            codes.push(code);
        }
        if next > voxel_count {
            return Err(CodecError::Corrupt {
                offset: count_at,
                reason: format!("level {} has {next} nodes but voxel_count is {voxel_count}", level + 1),
            });
        }
        nodes = next;
    }
    if nodes != voxel_count {
        return Err(CodecError::Corrupt {
            offset: count_at,
            reason: format!("octree has {nodes} leaves but voxel_count is {voxel_count}"),
        });
    }
    let mut counts_model = GammaModel::default();
    let mut leaf_counts = Vec::with_capacity(voxel_count);
    for _ in 0..voxel_count {
        let c = counts_model.decode(&mut dec).map_err(&at)?;
        let c = u32::try_from(c).map_err(|_| CodecError::Corrupt {
            offset: payload_at + dec.position(),
            reason: "leaf count overflows u32".into(),
        })?;
        leaf_counts.push(c);
    }
    let stream = OccupancyStream {
        depth,
        codes,
        leaf_counts,
    };
    let voxels = decode_octree(&stream)?;
    Ok((
        VoxelGrid::from_sorted(voxels, stream.leaf_counts, step, origin),
        used,
    ))
}
