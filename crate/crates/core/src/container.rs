//! Single-file container bundling the base and enhancement segments.
//!
//! Layout, little-endian:
//!
//! | field            | type       |
//! |------------------|------------|
//! | magic            | `b"RPCG"`  |
//! | version          | u8 = 1     |
//! | step             | f64        |
//! | res_step         | f64        |
//! | origin           | 3 × f64    |
//! | point_count      | u32        |
//! | fg_weight        | f64        |
//! | label_hash       | u64        |
//! | base_len         | u32        |
//! | base segment     | base_len bytes (`RPCB` layout) |
//! | enh_len          | u32        |
//! | enh segment      | enh_len bytes (`RPCE` layout)  |
//! | crc32            | u32 over every preceding byte  |
//!
//! Reconstructed points come out in canonical (Morton, then within-voxel)
//! order, not in the original file order.

use crate::codec::{DecodedLayers, EncodedLayers, PipelineError};
use crate::octree::{decode_base_prefix, CodecError, Reader};
use crate::pointcloud::Point3;
use crate::residual::{decode_enhancement_prefix, reconstruct};

pub const CONTAINER_MAGIC: &[u8; 4] = b"RPCG";
pub const CONTAINER_VERSION: u8 = 1;
const FIXED_HEADER_LEN: usize = 4 + 1 + 8 + 8 + 24 + 4 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerHeader {
    pub step: f64,
    pub res_step: f64,
    pub origin: Point3,
    pub point_count: u32,
    pub fg_weight: f64,
    pub label_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: ContainerHeader,
    pub base: Vec<u8>,
    pub enhancement: Vec<u8>,
}

impl Container {
    pub fn from_layers(layers: &EncodedLayers, res_step: f64, label_hash: u64) -> Self {
        Self {
            header: ContainerHeader {
                step: layers.grid.step(),
                res_step,
                origin: layers.grid.origin(),
                point_count: layers.grid.point_count() as u32,
                fg_weight: layers.fg_weight,
                label_hash,
            },
            base: layers.base.clone(),
            enhancement: layers.enhancement.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(FIXED_HEADER_LEN + 12 + self.base.len() + self.enhancement.len());
        out.extend_from_slice(CONTAINER_MAGIC);
        out.push(CONTAINER_VERSION);
        out.extend_from_slice(&h.step.to_le_bytes());
        out.extend_from_slice(&h.res_step.to_le_bytes());
        for c in h.origin {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&h.point_count.to_le_bytes());
        out.extend_from_slice(&h.fg_weight.to_le_bytes());
        out.extend_from_slice(&h.label_hash.to_le_bytes());
        out.extend_from_slice(&(self.base.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.base);
        out.extend_from_slice(&(self.enhancement.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.enhancement);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses and CRC-checks a container without decoding the segments.
    pub fn parse(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < FIXED_HEADER_LEN + 12 {
            return Err(CodecError::Truncated { offset: bytes.len() });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let mut r = Reader::new(body, 0);
        r.magic(CONTAINER_MAGIC)?;
        r.version(CONTAINER_VERSION)?;
        if crc32fast::hash(body) != stored {
            return Err(CodecError::Corrupt {
                offset: body.len(),
                reason: "CRC32 mismatch".into(),
            });
        }
        let header = ContainerHeader {
            step: r.f64()?,
            res_step: r.f64()?,
            origin: [r.f64()?, r.f64()?, r.f64()?],
            point_count: r.u32()?,
            fg_weight: r.f64()?,
            label_hash: r.u64()?,
        };
        let base_len = r.u32()? as usize;
        let base = r.take(base_len)?.to_vec();
        let enh_len = r.u32()? as usize;
        let enhancement = r.take(enh_len)?.to_vec();
        if !r.rest().is_empty() {
            return Err(CodecError::Corrupt {
                offset: r.offset(),
                reason: "segment lengths do not cover the container".into(),
            });
        }
        Ok(Self {
            header,
            base,
            enhancement,
        })
    }

    /// Decodes both segments and checks them against the header.
    pub fn decode(&self) -> Result<DecodedLayers, PipelineError> {
        let h = &self.header;
        let base_at = FIXED_HEADER_LEN + 4;
        let (grid, used) = decode_base_prefix(&self.base, base_at)?;
        if used != self.base.len() {
            return Err(CodecError::Corrupt {
                offset: base_at + used,
                reason: "base segment length disagrees with its payload".into(),
            }
            .into());
        }
        if grid.step() != h.step || grid.origin() != h.origin || grid.point_count() != u64::from(h.point_count) {
            return Err(CodecError::Corrupt {
                offset: 5,
                reason: "container header disagrees with the base segment".into(),
            }
            .into());
        }
        let enh_at = base_at + self.base.len() + 4;
        let (enhancement, used) = decode_enhancement_prefix(&self.enhancement, enh_at, &grid, h.fg_weight)?;
        if used != self.enhancement.len() || enhancement.res_step != h.res_step {
            return Err(CodecError::Corrupt {
                offset: enh_at,
                reason: "enhancement segment disagrees with the container header".into(),
            }
            .into());
        }
        let reconstruction = reconstruct(&grid, &enhancement.residuals)?;
        Ok(DecodedLayers {
            grid,
            enhancement,
            reconstruction,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode_layers, EncodeParams};
    use crate::roi::{build_mask, select_regions, LabelConfig};
    use crate::synthetic::{room_scene, SceneParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (Vec<u8>, EncodedLayers) {
        let cloud = room_scene(&SceneParams {
            points: 1500,
            ..Default::default()
        });
        let cfg = LabelConfig::synthetic();
        let part = select_regions(cloud.labels().unwrap(), &cfg.background_set());
        let mask = build_mask(&part, cloud.len()).unwrap();
        let params = EncodeParams {
            step: 0.3,
            res_step: 0.075,
        };
        let layers = encode_layers(&cloud, &mask, params).unwrap();
        let c = Container::from_layers(&layers, params.res_step, cfg.hash());
        (c.to_bytes(), layers)
    }

    #[test]
    fn round_trip() {
        let (bytes, layers) = sample();
        let c = Container::parse(&bytes).unwrap();
        assert_eq!(c.to_bytes(), bytes);
        let d = c.decode().unwrap();
        assert_eq!(d.grid, layers.grid);
        assert_eq!(d.reconstruction.len(), 1500);
    }

    #[test]
    fn every_single_byte_flip_is_caught() {
        let (bytes, _) = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let mut bad = bytes.clone();
            let i = rng.gen_range(0..bad.len());
            bad[i] ^= rng.gen_range(1..=255u8);
            assert!(Container::parse(&bad).and_then(|c| c.decode().map_err(|_| CodecError::EmptyGrid)).is_err());
        }
    }

    #[test]
    fn truncation_is_caught() {
        let (bytes, _) = sample();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(Container::parse(&bytes[..cut]).is_err());
        }
    }
}
