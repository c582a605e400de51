//! Geometry distortion and rate metrics.
//!
//! All nearest-neighbour terms use squared Euclidean distance from
//! [`SpatialIndex`], so correspondences are exact and deterministic.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointcloud::{Point3, PointCloud};
use crate::roi::MaskMap;
use crate::spatial::{SpatialError, SpatialIndex};

/// PSNR reported when the error vanishes.
pub const PSNR_CAP_DB: f64 = 100.0;
/// Default neighbourhood for normal estimation.
pub const DEFAULT_NORMAL_K: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric needs non-empty point clouds")]
    EmptyCloud,
    #[error("peak must be positive and finite, got {0}")]
    BadPeak(f64),
    #[error("mask has {mask} entries for {points} points")]
    MaskLength { mask: usize, points: usize },
    #[error("normal estimation needs 3 <= k <= n, got k = {k} with n = {n}")]
    BadK { k: usize, n: usize },
    #[error("bits per point needs a non-empty original cloud")]
    ZeroPoints,
    #[error("RD curve needs at least 2 points, got {0}")]
    ShortCurve(usize),
    #[error("RD curve rates must be strictly increasing and all values finite")]
    BadCurve,
    #[error("RD curves do not overlap")]
    NoOverlap,
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

fn non_empty(a: &PointCloud, b: &PointCloud) -> Result<(), MetricError> {
    if a.is_empty() || b.is_empty() {
        Err(MetricError::EmptyCloud)
    } else {
        Ok(())
    }
}

/// For every point of `from`, its nearest point in `to`.
pub fn nearest_map(from: &[Point3], to: &SpatialIndex) -> Vec<(usize, f64)> {
    from.par_iter()
        .map(|q| {
            let n = to.nearest(q);
            (n.index, n.dist2)
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

/// Symmetric Chamfer distance in squared units: the mean squared nearest
/// distance from each cloud to the other, summed.
pub fn chamfer(p1: &PointCloud, p2: &PointCloud) -> Result<f64, MetricError> {
    non_empty(p1, p2)?;
    let i1 = SpatialIndex::build(p1.positions())?;
    let i2 = SpatialIndex::build(p2.positions())?;
    let a = nearest_map(p1.positions(), &i2);
    let b = nearest_map(p2.positions(), &i1);
    Ok(mean(a.iter().map(|x| x.1), a.len()) + mean(b.iter().map(|x| x.1), b.len()))
}

/// ROI-weighted Chamfer distance.
///
/// Each `a` in `p1` carries `W(a) = 1 + m1(a)`. Each `b` in `p2` inherits the
/// weight of its nearest `p1` point. Within each direction the weights are
/// normalized to sum to one, so a constant mask gives plain [`chamfer`].
pub fn rw_chamfer(p1: &PointCloud, p2: &PointCloud, m1: &MaskMap) -> Result<f64, MetricError> {
    non_empty(p1, p2)?;
    if m1.len() != p1.len() {
        return Err(MetricError::MaskLength {
            mask: m1.len(),
            points: p1.len(),
        });
    }
    let i1 = SpatialIndex::build(p1.positions())?;
    let i2 = SpatialIndex::build(p2.positions())?;
    let a = nearest_map(p1.positions(), &i2);
    let b = nearest_map(p2.positions(), &i1);
    let w1: f64 = m1.weights().sum();
    let term1: f64 = a
        .iter()
        .enumerate()
        .map(|(i, &(_, d))| m1.weight(i) / w1 * d)
        .sum();
    let w2: f64 = b.iter().map(|&(j, _)| m1.weight(j)).sum();
    let term2: f64 = b.iter().map(|&(j, d)| m1.weight(j) / w2 * d).sum();
    Ok(term1 + term2)
}

/// `10 log10(3 peak^2 / mse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    let signal = 3.0 * peak * peak;
    if mse < signal * 1e-10 {
        PSNR_CAP_DB
    } else {
        10.0 * (signal / mse).log10()
    }
}

fn check_peak(peak: f64) -> Result<(), MetricError> {
    if peak > 0.0 && peak.is_finite() {
        Ok(())
    } else {
        Err(MetricError::BadPeak(peak))
    }
}

/// Largest bounding-box extent of the reference, the default PSNR peak.
pub fn default_peak(reference: &PointCloud) -> f64 {
    reference
        .bounds()
        .map(|(lo, hi)| (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max))
        .filter(|&e| e > 0.0)
        .unwrap_or(1.0)
}

/// Symmetric point-to-point MSE: max of the two directional means.
pub fn d1_mse(reference: &PointCloud, reconstructed: &PointCloud) -> Result<f64, MetricError> {
    non_empty(reference, reconstructed)?;
    let ir = SpatialIndex::build(reference.positions())?;
    let ic = SpatialIndex::build(reconstructed.positions())?;
    let fwd = nearest_map(reference.positions(), &ic);
    let bwd = nearest_map(reconstructed.positions(), &ir);
    Ok(mean(fwd.iter().map(|x| x.1), fwd.len()).max(mean(bwd.iter().map(|x| x.1), bwd.len())))
}

/// Point-to-point geometry PSNR.
pub fn d1_psnr(reference: &PointCloud, reconstructed: &PointCloud, peak: f64) -> Result<f64, MetricError> {
    check_peak(peak)?;
    Ok(psnr_from_mse(d1_mse(reference, reconstructed)?, peak))
}

/// Unit normals from the covariance of each point's `k` nearest neighbours
/// (the point itself included). The eigenvector of the smallest eigenvalue is
/// taken and signed so its largest-magnitude component is positive.
pub fn estimate_normals(points: &[Point3], k: usize) -> Result<Vec<Point3>, MetricError> {
    if k < 3 || k > points.len() {
        return Err(MetricError::BadK { k, n: points.len() });
    }
    let index = SpatialIndex::build(points)?;
    points
        .par_iter()
        .map(|q| {
            let nn = index.knn(q, k)?;
            Ok(normal_of(nn.iter().map(|n| points[n.index])))
        })
        .collect()
}

fn normal_of(neighbours: impl Iterator<Item = Point3> + Clone) -> Point3 {
    let n = neighbours.clone().count() as f64;
    let mut c = [0.0; 3];
    for p in neighbours.clone() {
        for a in 0..3 {
            c[a] += p[a] / n;
        }
    }
    let mut cov = Matrix3::<f64>::zeros();
    for p in neighbours {
        let d = nalgebra::Vector3::new(p[0] - c[0], p[1] - c[1], p[2] - c[2]);
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .unwrap();
    let v = eig.eigenvectors.column(imin).normalize();
    let mut normal = [v[0], v[1], v[2]];
    let dominant = (0..3)
        .max_by(|&a, &b| normal[a].abs().total_cmp(&normal[b].abs()).then(b.cmp(&a)))
        .unwrap();
    if normal[dominant] < 0.0 {
        normal = normal.map(|x| -x);
    }
    normal
}

fn plane_mse(from: &[Point3], normals: &[Point3], to: &SpatialIndex) -> f64 {
    let to_pts = to.points();
    // Collected before summing so the result does not depend on the pool size.
    let errors: Vec<f64> = from
        .par_iter()
        .zip(normals.par_iter())
        .map(|(a, n)| {
            let b = to_pts[to.nearest(a).index];
            let e = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let proj = e[0] * n[0] + e[1] * n[1] + e[2] * n[2];
            proj * proj
        })
        .collect();
    errors.iter().sum::<f64>() / from.len() as f64
}

/// Symmetric point-to-plane MSE. In each direction the error to the nearest
/// point of the other cloud is projected onto the normal of the query point,
/// estimated on the query's own cloud.
pub fn d2_mse(reference: &PointCloud, reconstructed: &PointCloud, k: usize) -> Result<f64, MetricError> {
    non_empty(reference, reconstructed)?;
    let nr = estimate_normals(reference.positions(), k)?;
    let nc = estimate_normals(reconstructed.positions(), k)?;
    let ir = SpatialIndex::build(reference.positions())?;
    let ic = SpatialIndex::build(reconstructed.positions())?;
    Ok(plane_mse(reference.positions(), &nr, &ic).max(plane_mse(reconstructed.positions(), &nc, &ir)))
}

/// Point-to-plane geometry PSNR.
pub fn d2_psnr(reference: &PointCloud, reconstructed: &PointCloud, peak: f64, k: usize) -> Result<f64, MetricError> {
    check_peak(peak)?;
    Ok(psnr_from_mse(d2_mse(reference, reconstructed, k)?, peak))
}

pub fn bits_per_point(total_bits: u64, n: usize) -> Result<f64, MetricError> {
    if n == 0 {
        return Err(MetricError::ZeroPoints);
    }
    Ok(total_bits as f64 / n as f64)
}

/// Metric report as emitted by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub d1_db: f64,
    /// `None` when a cloud is too small to estimate normals.
    pub d2_db: Option<f64>,
    pub cd: f64,
    pub rw_cd: f64,
    pub bpp_base: Option<f64>,
    pub bpp_enh: Option<f64>,
    pub bpp_total: Option<f64>,
}

/// A rate–quality curve with strictly increasing rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    points: Vec<(f64, f64)>,
}

impl RdCurve {
    /// `points` are `(rate in bpp, quality in dB)` pairs.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, MetricError> {
        if points.len() < 2 {
            return Err(MetricError::ShortCurve(points.len()));
        }
        let finite = points.iter().all(|(r, q)| r.is_finite() && q.is_finite() && *r > 0.0);
        if !finite || points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(MetricError::BadCurve);
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// Least-squares polynomial fit; coefficients lowest order first. With as
/// many points as coefficients this interpolates.
pub fn fit_polynomial(xs: &[f64], ys: &[f64], degree: usize) -> Vec<f64> {
    let cols = degree + 1;
    let a = DMatrix::from_fn(xs.len(), cols, |r, c| xs[r].powi(c as i32));
    let b = DVector::from_column_slice(ys);
    let svd = a.svd(true, true);
    let coef = svd.solve(&b, 1e-14).expect("SVD computed with U and V");
    coef.iter().copied().collect()
}

fn integrate(coef: &[f64], lo: f64, hi: f64) -> f64 {
    coef.iter()
        .enumerate()
        .map(|(i, c)| {
            let p = (i + 1) as i32;
            c * (hi.powi(p) - lo.powi(p)) / f64::from(p)
        })
        .sum()
}

/// Average vertical gap between two fitted curves over their shared x-range.
fn average_gap(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64, MetricError> {
    let range = |c: &[(f64, f64)]| {
        c.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)))
    };
    let (alo, ahi) = range(a);
    let (blo, bhi) = range(b);
    let lo = alo.max(blo);
    let hi = ahi.min(bhi);
    if hi <= lo {
        return Err(MetricError::NoOverlap);
    }
    let fit = |c: &[(f64, f64)]| {
        let xs: Vec<f64> = c.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = c.iter().map(|p| p.1).collect();
        fit_polynomial(&xs, &ys, (c.len() - 1).min(3))
    };
    let ia = integrate(&fit(a), lo, hi);
    let ib = integrate(&fit(b), lo, hi);
    Ok((ib - ia) / (hi - lo))
}

/// Bjøntegaard delta PSNR of `b` relative to `a`, in dB: cubic fits of
/// quality over log10(rate), averaged over the overlapping rate interval.
pub fn bd_psnr(a: &RdCurve, b: &RdCurve) -> Result<f64, MetricError> {
    let log = |c: &RdCurve| -> Vec<(f64, f64)> { c.points.iter().map(|&(r, q)| (r.log10(), q)).collect() };
    average_gap(&log(a), &log(b))
}

/// Bjøntegaard delta rate of `b` relative to `a`, in percent (negative
/// means `b` needs fewer bits for the same quality).
pub fn bd_rate(a: &RdCurve, b: &RdCurve) -> Result<f64, MetricError> {
    let swap = |c: &RdCurve| -> Vec<(f64, f64)> { c.points.iter().map(|&(r, q)| (q, r.log10())).collect() };
    let gap = average_gap(&swap(a), &swap(b))?;
    Ok((10f64.powf(gap) - 1.0) * 100.0)
}
