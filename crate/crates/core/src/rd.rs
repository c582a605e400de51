//! Rate-distortion sweep over codec configurations.
//!
//! Each configuration is scored by
//! `delta_base * bpp_base + beta * bpp_enh + alpha * rw_cd + gamma * proxy`,
//! where the proxy is the foreground-restricted D1 MSE standing in for a
//! downstream detection loss.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{decode_layers, encode_layers, EncodeParams, PipelineError};
use crate::metrics::{self, MetricError, DEFAULT_NORMAL_K};
use crate::pointcloud::PointCloud;
use crate::roi::{build_mask, select_regions, MaskError, RegionPartition};
use crate::spatial::SpatialIndex;

#[derive(Debug, Error)]
pub enum RdError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("report output: {0}")]
    Io(String),
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdConfig {
    pub step: f64,
    pub res_step: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Weight of the base-layer rate.
    pub delta_base: f64,
    pub gamma: f64,
}

impl RdConfig {
    /// Defaults for everything but the two steps: alpha 1, beta 1,
    /// delta_base 1, gamma 0.01.
    pub fn with_steps(step: f64, res_step: f64) -> Self {
        Self {
            step,
            res_step,
            alpha: 1.0,
            beta: 1.0,
            delta_base: 1.0,
            gamma: 0.01,
        }
    }

    pub fn validate(&self) -> Result<(), RdError> {
        for (name, v) in [("step", self.step), ("res_step", self.res_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(RdError::BadConfig(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("delta_base", self.delta_base),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(RdError::BadConfig(format!("{name} must be non-negative and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// An evaluated configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub bpp_base: f64,
    pub bpp_enh: f64,
    pub cd: f64,
    pub rw_cd: f64,
    pub d1_db: f64,
    pub d2_db: f64,
    pub machine_proxy: f64,
    pub cost: f64,
    pub config: RdConfig,
}

impl RdPoint {
    pub fn bpp_total(&self) -> f64 {
        self.bpp_base + self.bpp_enh
    }
}

pub fn total_cost(point: &RdPoint, config: &RdConfig) -> f64 {
    config.delta_base * point.bpp_base
        + config.beta * point.bpp_enh
        + config.alpha * point.rw_cd
        + config.gamma * point.machine_proxy
}

/// Foreground-restricted D1 MSE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineProxy {
    pub value: f64,
    /// Set when the partition has no foreground; `value` is then 0.
    pub fg_empty: bool,
}

/// Mean squared distance from each foreground original point to its nearest
/// reconstructed point.
pub fn machine_proxy(
    original: &PointCloud,
    reconstructed: &PointCloud,
    partition: &RegionPartition,
) -> Result<MachineProxy, RdError> {
    if partition.len() != original.len() {
        return Err(MaskError::LengthMismatch {
            mask: partition.len(),
            expected: original.len(),
        }
        .into());
    }
    if partition.fg_indices.is_empty() {
        log::warn!("machine proxy: no foreground points, reporting 0");
        return Ok(MachineProxy {
            value: 0.0,
            fg_empty: true,
        });
    }
    if reconstructed.is_empty() {
        return Err(MetricError::EmptyCloud.into());
    }
    let index = SpatialIndex::build(reconstructed.positions()).map_err(MetricError::from)?;
    let mut fg = Vec::with_capacity(partition.fg_indices.len());
    for &i in &partition.fg_indices {
        let p = original.positions().get(i).ok_or(MaskError::IndexOutOfRange {
            index: i,
            n: original.len(),
        })?;
        fg.push(*p);
    }
    let d = metrics::nearest_map(&fg, &index);
    Ok(MachineProxy {
        value: d.iter().map(|x| x.1).sum::<f64>() / d.len() as f64,
        fg_empty: false,
    })
}

/// Codec and metric results shared by every config with the same steps.
#[derive(Debug, Clone, Copy)]
struct Evaluation {
    bpp_base: f64,
    bpp_enh: f64,
    cd: f64,
    rw_cd: f64,
    d1_db: f64,
    d2_db: f64,
    machine_proxy: f64,
}

fn partition_of(cloud: &PointCloud, background: &BTreeSet<u32>) -> RegionPartition {
    match cloud.labels() {
        Some(labels) => select_regions(labels, background),
        None => RegionPartition {
            fg_indices: Vec::new(),
            bg_indices: (0..cloud.len()).collect(),
        },
    }
}

fn evaluate_steps(cloud: &PointCloud, partition: &RegionPartition, step: f64, res_step: f64) -> Result<Evaluation, RdError> {
    let mask = build_mask(partition, cloud.len())?;
    let layers = encode_layers(cloud, &mask, EncodeParams { step, res_step })?;
    let decoded = decode_layers(&layers.base, &layers.enhancement, layers.fg_weight)?;
    let recon = &decoded.reconstruction;
    let peak = metrics::default_peak(cloud);
    Ok(Evaluation {
        bpp_base: metrics::bits_per_point(layers.base_bits(), cloud.len())?,
        bpp_enh: metrics::bits_per_point(layers.enhancement_bits(), cloud.len())?,
        cd: metrics::chamfer(cloud, recon)?,
        rw_cd: metrics::rw_chamfer(cloud, recon, &mask)?,
        d1_db: metrics::d1_psnr(cloud, recon, peak)?,
        d2_db: metrics::d2_psnr(cloud, recon, peak, DEFAULT_NORMAL_K)?,
        machine_proxy: machine_proxy(cloud, recon, partition)?.value,
    })
}

fn finish(e: Evaluation, config: RdConfig) -> RdPoint {
    let mut p = RdPoint {
        bpp_base: e.bpp_base,
        bpp_enh: e.bpp_enh,
        cd: e.cd,
        rw_cd: e.rw_cd,
        d1_db: e.d1_db,
        d2_db: e.d2_db,
        machine_proxy: e.machine_proxy,
        cost: 0.0,
        config,
    };
    p.cost = total_cost(&p, &config);
    p
}

/// Encodes, decodes and scores `cloud` under `config`. Points whose label is
/// in `background` get mask 0, all others mask 1; an unlabeled cloud is all
/// background.
pub fn evaluate_config(cloud: &PointCloud, background: &BTreeSet<u32>, config: &RdConfig) -> Result<RdPoint, RdError> {
    config.validate()?;
    let partition = partition_of(cloud, background);
    let e = evaluate_steps(cloud, &partition, config.step, config.res_step)?;
    Ok(finish(e, *config))
}

/// Evaluates every config, in input order. Configs sharing both steps share
/// one codec run. `threads` bounds the worker pool (`None` = rayon default).
pub fn sweep(
    cloud: &PointCloud,
    background: &BTreeSet<u32>,
    grid: &[RdConfig],
    threads: Option<usize>,
) -> Result<Vec<RdPoint>, RdError> {
    if grid.is_empty() {
        return Err(RdError::EmptyGrid);
    }
    for c in grid {
        c.validate()?;
    }
    let mut keys: Vec<(f64, f64)> = Vec::new();
    let mut slot: HashMap<(u64, u64), usize> = HashMap::new();
    for c in grid {
        slot.entry((c.step.to_bits(), c.res_step.to_bits())).or_insert_with(|| {
            keys.push((c.step, c.res_step));
            keys.len() - 1
        });
    }
    let partition = partition_of(cloud, background);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| RdError::Pool(e.to_string()))?;
    let evals: Vec<Evaluation> = pool.install(|| {
        keys.par_iter()
            .map(|&(step, res)| evaluate_steps(cloud, &partition, step, res))
            .collect::<Result<_, _>>()
    })?;
    Ok(grid
        .iter()
        .map(|c| finish(evals[slot[&(c.step.to_bits(), c.res_step.to_bits())]], *c))
        .collect())
}

pub const DEFAULT_STEPS: [f64; 5] = [0.15, 0.225, 0.3, 0.375, 0.45];
pub const DEFAULT_RES_DIVISORS: [f64; 3] = [2.0, 4.0, 8.0];
pub const DEFAULT_ALPHAS: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

/// 75 configs: step (outer) x res_step = step/{2,4,8} x alpha 1..5 (inner).
pub fn default_grid() -> Vec<RdConfig> {
    let mut grid = Vec::with_capacity(75);
    for &step in &DEFAULT_STEPS {
        for &div in &DEFAULT_RES_DIVISORS {
            for &alpha in &DEFAULT_ALPHAS {
                grid.push(RdConfig {
                    alpha,
                    ..RdConfig::with_steps(step, step / div)
                });
            }
        }
    }
    grid
}

/// Points not dominated in (lower rate, higher quality), sorted by rate then
/// descending quality. Exact duplicates do not dominate each other.
pub fn pareto_front(
    points: &[RdPoint],
    rate_key: impl Fn(&RdPoint) -> f64,
    quality_key: impl Fn(&RdPoint) -> f64,
) -> Vec<RdPoint> {
    let mut order: Vec<(f64, f64, usize)> =
        points.iter().enumerate().map(|(i, p)| (rate_key(p), quality_key(p), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    let mut front = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for (r, q, i) in order {
        let keep = match best {
            None => true,
            Some((br, bq)) => q > bq || (q == bq && r == br),
        };
        if keep {
            front.push(points[i]);
            if best.map_or(true, |(_, bq)| q > bq) {
                best = Some((r, q));
            }
        }
    }
    front
}

/// Per-point flag: is it on the (total bpp, D1) Pareto front?
pub fn pareto_mask(points: &[RdPoint]) -> Vec<bool> {
    let front = pareto_front(points, RdPoint::bpp_total, |p| p.d1_db);
    points.iter().map(|p| front.contains(p)).collect()
}

#[derive(Serialize)]
struct CsvRow {
    step: f64,
    res_step: f64,
    alpha: f64,
    beta: f64,
    delta_base: f64,
    gamma: f64,
    bpp_base: f64,
    bpp_enh: f64,
    bpp_total: f64,
    cd: f64,
    rw_cd: f64,
    d1_db: f64,
    d2_db: f64,
    machine_proxy: f64,
    cost: f64,
    pareto: bool,
}

/// One CSV row per point, with the Pareto flag of [`pareto_mask`].
pub fn write_sweep_csv(points: &[RdPoint], out: impl Write) -> Result<(), RdError> {
    let on_front = pareto_mask(points);
    let mut w = csv::Writer::from_writer(out);
    for (p, &pareto) in points.iter().zip(&on_front) {
        let c = &p.config;
        w.serialize(CsvRow {
            step: c.step,
            res_step: c.res_step,
            alpha: c.alpha,
            beta: c.beta,
            delta_base: c.delta_base,
            gamma: c.gamma,
            bpp_base: p.bpp_base,
            bpp_enh: p.bpp_enh,
            bpp_total: p.bpp_total(),
            cd: p.cd,
            rw_cd: p.rw_cd,
            d1_db: p.d1_db,
            d2_db: p.d2_db,
            machine_proxy: p.machine_proxy,
            cost: p.cost,
            pareto,
        })
        .map_err(|e| RdError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| RdError::Io(e.to_string()))
}

/// A named `[bpp, d1_db]` polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCurve {
    pub name: String,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFile {
    pub curves: Vec<NamedCurve>,
}

/// Sorted by rate; at equal rates only the best quality is kept, so every
/// curve has strictly increasing rates.
fn polyline(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(b[1].total_cmp(&a[1])));
    pts.dedup_by(|later, kept| later[0] == kept[0]);
    pts
}

fn ratio_name(c: &RdConfig) -> String {
    let k = c.step / c.res_step;
    if (k - k.round()).abs() < 1e-9 {
        format!("res_step=step/{}", k.round())
    } else {
        format!("res_step=step/{k:.4}")
    }
}

/// One curve per step ratio `step / res_step`, in order of first
/// appearance, then the Pareto front as `"pareto"`. Rates are total bpp.
pub fn curves(points: &[RdPoint]) -> CurveFile {
    let mut names: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<[f64; 2]>> = HashMap::new();
    for p in points {
        let name = ratio_name(&p.config);
        groups
            .entry(name.clone())
            .or_insert_with(|| {
                names.push(name);
                Vec::new()
            })
            .push([p.bpp_total(), p.d1_db]);
    }
    let mut out: Vec<NamedCurve> = names
        .into_iter()
        .map(|name| {
            let pts = polyline(groups.remove(&name).unwrap_or_default());
            NamedCurve { name, points: pts }
        })
        .collect();
    let front = pareto_front(points, RdPoint::bpp_total, |p| p.d1_db);
    out.push(NamedCurve {
        name: "pareto".into(),
        points: polyline(front.iter().map(|p| [p.bpp_total(), p.d1_db]).collect()),
    });
    CurveFile { curves: out }
}
