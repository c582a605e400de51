//! Layered point cloud geometry codec.
//!
//! A lossless octree over a coarse voxel grid forms the base layer. An
//! enhancement layer codes the per-point residuals to the voxel centers, with
//! foreground regions (chosen from semantic labels) quantized twice as finely.
//! Metrics, a rate-distortion sweep and a file container sit on top.
//!
//! ```
//! use rpcgc_core::{build_mask, encode_layers, decode_layers, select_regions};
//! use rpcgc_core::{room_scene, EncodeParams, LabelConfig, SceneParams};
//!
//! let cloud = room_scene(&SceneParams { points: 500, ..Default::default() });
//! let bg = LabelConfig::synthetic().background_set();
//! let mask = build_mask(&select_regions(cloud.labels().unwrap(), &bg), cloud.len()).unwrap();
//! let enc = encode_layers(&cloud, &mask, EncodeParams { step: 0.3, res_step: 0.05 }).unwrap();
//! let dec = decode_layers(&enc.base, &enc.enhancement, enc.fg_weight).unwrap();
//! assert_eq!(dec.reconstruction.len(), cloud.len());
//! ```

pub mod codec;
pub mod container;
pub mod entropy;
pub mod metrics;
pub mod morton;
pub mod octree;
pub mod ply;
pub mod pointcloud;
pub mod rd;
pub mod residual;
pub mod roi;
pub mod spatial;
pub mod synthetic;

pub use codec::{decode_layers, encode_layers, DecodedLayers, EncodeParams, EncodedLayers, PipelineError};
pub use container::{Container, ContainerHeader};
pub use entropy::{ac_decode, ac_encode, EntropyError};
pub use metrics::{
    bd_psnr, bd_rate, bits_per_point, chamfer, d1_mse, d1_psnr, d2_mse, d2_psnr, default_peak, rw_chamfer,
    MetricError, MetricReport, RdCurve,
};
pub use octree::{decode_base, encode_base, CodecError};
pub use ply::{read_ply, write_ply, PlyError, PlyFormat};
pub use pointcloud::{dequantize, quantize, quantize_from_min, CloudError, Point3, PointCloud, Voxel, VoxelGrid};
pub use rd::{default_grid, evaluate_config, pareto_front, sweep, total_cost, RdConfig, RdError, RdPoint};
pub use residual::{compute_residuals, decode_enhancement, encode_enhancement, reconstruct, ResidualError, ResidualSet};
pub use roi::{build_mask, select_regions, transfer_mask, LabelConfig, MaskError, MaskMap, RegionPartition};
pub use spatial::SpatialIndex;
pub use synthetic::{room_scene, SceneParams};
