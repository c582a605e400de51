//! Two-layer pipeline: quantize, code the base grid losslessly, code the
//! ROI-weighted residuals, and the matching decoder.

use thiserror::Error;

use crate::octree::{self, CodecError};
use crate::pointcloud::{quantize_from_min, CloudError, PointCloud, VoxelGrid};
use crate::residual::{self, DecodedEnhancement, ResidualError};
use crate::roi::{MaskError, MaskMap};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("cannot encode an empty point cloud")]
    EmptyCloud,
    #[error("mask has {mask} entries for {points} points")]
    MaskLength { mask: usize, points: usize },
}

/// Encoder knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeParams {
    /// Base quantization step, dataset units.
    pub step: f64,
    /// Enhancement residual step, dataset units.
    pub res_step: f64,
}

/// Both layers of one encoded cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedLayers {
    pub base: Vec<u8>,
    pub enhancement: Vec<u8>,
    /// Foreground mask value, 1.0 when the mask has no foreground.
    pub fg_weight: f64,
    /// The encoder-side grid (identical to what the decoder recovers).
    pub grid: VoxelGrid,
    /// Original point index of each point in canonical order.
    pub source: Vec<usize>,
    /// Mask in canonical order.
    pub mask: MaskMap,
}

impl EncodedLayers {
    pub fn base_bits(&self) -> u64 {
        self.base.len() as u64 * 8
    }

    pub fn enhancement_bits(&self) -> u64 {
        self.enhancement.len() as u64 * 8
    }
}

/// Encodes `cloud` with a per-point mask over the original point order.
pub fn encode_layers(
    cloud: &PointCloud,
    mask: &MaskMap,
    params: EncodeParams,
) -> Result<EncodedLayers, PipelineError> {
    if cloud.is_empty() {
        return Err(PipelineError::EmptyCloud);
    }
    if mask.len() != cloud.len() {
        return Err(PipelineError::MaskLength {
            mask: mask.len(),
            points: cloud.len(),
        });
    }
    let q = quantize_from_min(cloud, params.step)?;
    let base = octree::encode_base(&q.grid)?;
    let computed = residual::compute_residuals(cloud, &q.grid, &q.assignment)?;
    let aligned = mask.permuted(&computed.source)?;
    let fg_weight = residual::foreground_weight(&aligned)?.unwrap_or(1.0);
    let enhancement = residual::encode_enhancement(&computed.residuals, &aligned, params.res_step)?;
    Ok(EncodedLayers {
        base,
        enhancement,
        fg_weight,
        grid: q.grid,
        source: computed.source,
        mask: aligned,
    })
}

/// Decoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedLayers {
    pub grid: VoxelGrid,
    pub enhancement: DecodedEnhancement,
    pub reconstruction: PointCloud,
}

pub fn decode_layers(base: &[u8], enhancement: &[u8], fg_weight: f64) -> Result<DecodedLayers, PipelineError> {
    let grid = octree::decode_base(base)?;
    let enhancement = residual::decode_enhancement(enhancement, &grid, fg_weight)?;
    let reconstruction = residual::reconstruct(&grid, &enhancement.residuals)?;
    Ok(DecodedLayers {
        grid,
        enhancement,
        reconstruction,
    })
}
