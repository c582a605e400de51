use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use rpcgc_core::metrics::{self, MetricError, MetricReport, DEFAULT_NORMAL_K};
use rpcgc_core::rd::{self, CurveFile, RdConfig};
use rpcgc_core::roi::build_mask_with;
use rpcgc_core::{
    encode_layers, read_ply, room_scene, select_regions, write_ply, Container, EncodeParams, LabelConfig, MaskMap,
    PlyFormat, PointCloud, RdCurve, SceneParams,
};

use crate::error::{CliResult, Exit, Failure};
use crate::output_path;

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

/// Writes to `path`, or stdout when it is absent or `-`.
fn emit(path: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match output_path(path) {
        Some(p) => write_file(p, text.as_bytes()),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::usage(format!("cannot write to stdout: {e}"))),
    }
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn read_cloud(path: &Path) -> CliResult<PointCloud> {
    read_ply(&read_file(path)?).map_err(|e| Failure::from(e).context(format!("reading {}", path.display())))
}

/// The given label config, or the one matching `rpcgc synth` scenes.
fn load_labels(path: &Option<PathBuf>) -> CliResult<LabelConfig> {
    match path {
        None => Ok(LabelConfig::synthetic()),
        Some(p) => {
            let text = String::from_utf8(read_file(p)?)
                .map_err(|_| Failure::usage(format!("{} is not UTF-8", p.display())))?;
            LabelConfig::from_json(&text).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
        }
    }
}

fn positive(name: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Failure::usage(format!("{name} must be positive and finite, got {v}")))
    }
}

fn roi_mask(cloud: &PointCloud, cfg: &LabelConfig, fg_weight: f64) -> CliResult<MaskMap> {
    let labels = cloud
        .labels()
        .ok_or_else(|| Failure::usage("input has no per-point `label` property; pass --no-roi to encode without a mask"))?;
    let part = select_regions(labels, &cfg.background_set());
    build_mask_with(&part, cloud.len(), fg_weight).map_err(Failure::usage)
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Input PLY with x, y, z and (unless --no-roi) a per-point label.
    pub input: PathBuf,
    /// Output container.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Label config JSON; defaults to the synthetic scene's labels.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Base quantization step in dataset units.
    #[arg(long, default_value_t = 0.3)]
    pub step: f64,
    /// Enhancement residual step; defaults to step / 4.
    #[arg(long)]
    pub res_step: Option<f64>,
    /// Foreground mask value m (coding weight 1 + m).
    #[arg(long, default_value_t = 1.0)]
    pub fg_weight: f64,
    /// Code every point as background (m = 0).
    #[arg(long)]
    pub no_roi: bool,
    /// Where to write the JSON summary (default stdout).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Serialize)]
struct EncodeSummary {
    points: usize,
    voxels: usize,
    fg_points: usize,
    step: f64,
    res_step: f64,
    fg_weight: f64,
    container_bytes: usize,
    bpp_base: f64,
    bpp_enh: f64,
    bpp_total: f64,
}

pub fn encode(a: &EncodeArgs) -> CliResult<()> {
    let step = positive("--step", a.step)?;
    let res_step = positive("--res-step", a.res_step.unwrap_or(step / 4.0))?;
    let fg_weight = positive("--fg-weight", a.fg_weight)?;
    let cloud = read_cloud(&a.input)?;
    if cloud.is_empty() {
        return Err(Failure::usage(format!("{} has no points", a.input.display())));
    }
    let (mask, hash) = if a.no_roi {
        (MaskMap::zeros(cloud.len()), 0)
    } else {
        let cfg = load_labels(&a.labels)?;
        (roi_mask(&cloud, &cfg, fg_weight)?, cfg.hash())
    };
    let layers = encode_layers(&cloud, &mask, EncodeParams { step, res_step })?;
    let bytes = Container::from_layers(&layers, res_step, hash).to_bytes();
    write_file(&a.output, &bytes)?;
    let n = cloud.len() as f64;
    let summary = EncodeSummary {
        points: cloud.len(),
        voxels: layers.grid.len(),
        fg_points: mask.values().iter().filter(|&&m| m > 0.0).count(),
        step,
        res_step,
        fg_weight: layers.fg_weight,
        container_bytes: bytes.len(),
        bpp_base: layers.base_bits() as f64 / n,
        bpp_enh: layers.enhancement_bits() as f64 / n,
        bpp_total: (layers.base_bits() + layers.enhancement_bits()) as f64 / n,
    };
    emit(&a.summary, &to_json(&summary))
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Input container.
    pub input: PathBuf,
    /// Output PLY (points in canonical order).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Write ASCII PLY instead of binary little-endian.
    #[arg(long)]
    pub ascii: bool,
    /// Fail with exit code 4 unless the container was made with this label config.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

pub fn decode(a: &DecodeArgs) -> CliResult<()> {
    let bytes = read_file(&a.input)?;
    let container = Container::parse(&bytes).map_err(|e| Failure::from(e).context(format!("reading {}", a.input.display())))?;
    if a.labels.is_some() {
        let want = load_labels(&a.labels)?.hash();
        if container.header.label_hash != want {
            return Err(Failure::incompatible(format!(
                "container label hash {:016x} does not match the given config ({want:016x})",
                container.header.label_hash
            )));
        }
    }
    let decoded = container.decode()?;
    let format = if a.ascii {
        PlyFormat::Ascii
    } else {
        PlyFormat::BinaryLittleEndian
    };
    write_file(&a.output, &write_ply(&decoded.reconstruction, format))
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Reference (original) PLY.
    pub reference: PathBuf,
    /// Reconstructed PLY.
    pub reconstruction: PathBuf,
    /// PSNR peak; defaults to the reference bounding box's largest extent.
    #[arg(long)]
    pub peak: Option<f64>,
    /// Neighbourhood size for D2 normals.
    #[arg(long, default_value_t = DEFAULT_NORMAL_K)]
    pub knn: usize,
    /// Label config for RW-CD; defaults to the synthetic scene's labels.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Container the reconstruction came from, for bpp fields.
    #[arg(long)]
    pub container: Option<PathBuf>,
    /// Output JSON (default stdout).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn metric_failure(e: MetricError) -> Failure {
    Failure::usage(e)
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let reference = read_cloud(&a.reference)?;
    let recon = read_cloud(&a.reconstruction)?;
    if reference.is_empty() || recon.is_empty() {
        return Err(Failure::usage("cannot evaluate an empty cloud"));
    }
    let peak = match a.peak {
        Some(p) => positive("--peak", p)?,
        None => metrics::default_peak(&reference),
    };
    if a.knn < 3 {
        return Err(Failure::usage(format!("--knn must be at least 3, got {}", a.knn)));
    }
    let mask = match reference.labels() {
        Some(_) => roi_mask(&reference, &load_labels(&a.labels)?, 1.0)?,
        None => MaskMap::zeros(reference.len()),
    };
    let k = a.knn.min(reference.len()).min(recon.len());
    let d2_db = if k < 3 {
        log::warn!("fewer than 3 points in a cloud; D2 is not defined");
        None
    } else {
        if k < a.knn {
            log::warn!("--knn {} exceeds the cloud size; using {k}", a.knn);
        }
        Some(metrics::d2_psnr(&reference, &recon, peak, k).map_err(metric_failure)?)
    };
    let mut report = MetricReport {
        d1_db: metrics::d1_psnr(&reference, &recon, peak).map_err(metric_failure)?,
        d2_db,
        cd: metrics::chamfer(&reference, &recon).map_err(metric_failure)?,
        rw_cd: metrics::rw_chamfer(&reference, &recon, &mask).map_err(metric_failure)?,
        bpp_base: None,
        bpp_enh: None,
        bpp_total: None,
    };
    if let Some(path) = &a.container {
        let bytes = read_file(path)?;
        let c = Container::parse(&bytes)?;
        let n = reference.len() as f64;
        report.bpp_base = Some(c.base.len() as f64 * 8.0 / n);
        report.bpp_enh = Some(c.enhancement.len() as f64 * 8.0 / n);
        report.bpp_total = Some(bytes.len() as f64 * 8.0 / n);
    }
    emit(&a.output, &to_json(&report))
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Labeled input PLY.
    pub input: PathBuf,
    /// Label config JSON; defaults to the synthetic scene's labels.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// JSON array of configs; omitted fields take the defaults.
    #[arg(long)]
    pub grid_file: Option<PathBuf>,
    /// Output CSV, one row per config.
    #[arg(long)]
    pub csv: PathBuf,
    /// Output curve JSON.
    #[arg(long)]
    pub curves: PathBuf,
    /// Worker threads; overrides RPCGC_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Grid file entry: steps are required, weights default as in
/// [`RdConfig::with_steps`].
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridEntry {
    step: f64,
    res_step: f64,
    alpha: Option<f64>,
    beta: Option<f64>,
    delta_base: Option<f64>,
    gamma: Option<f64>,
}

impl GridEntry {
    fn config(&self) -> RdConfig {
        let d = RdConfig::with_steps(self.step, self.res_step);
        RdConfig {
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            delta_base: self.delta_base.unwrap_or(d.delta_base),
            gamma: self.gamma.unwrap_or(d.gamma),
            ..d
        }
    }
}

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("RPCGC_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Failure::usage(format!("RPCGC_THREADS must be a positive integer, got {v:?}")))?,
            ),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(Failure::usage("thread count must be at least 1"));
    }
    Ok(n)
}

#[derive(Serialize)]
struct SweepSummary {
    rows: usize,
    pareto_points: usize,
    best: rd::RdPoint,
}

pub fn sweep(a: &SweepArgs) -> CliResult<()> {
    let threads = thread_count(a.threads)?;
    let cloud = read_cloud(&a.input)?;
    if cloud.labels().is_none() {
        return Err(Failure::usage("sweep needs a labeled input"));
    }
    let background: BTreeSet<u32> = load_labels(&a.labels)?.background_set();
    let grid = match &a.grid_file {
        None => rd::default_grid(),
        Some(p) => {
            let entries: Vec<GridEntry> = serde_json::from_slice(&read_file(p)?)
                .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            entries.iter().map(GridEntry::config).collect()
        }
    };
    let points = rd::sweep(&cloud, &background, &grid, threads).map_err(|e| Failure::new(Exit::Usage, e.into()))?;
    let mut csv = Vec::new();
    rd::write_sweep_csv(&points, &mut csv).map_err(Failure::usage)?;
    write_file(&a.csv, &csv)?;
    write_file(&a.curves, to_json(&rd::curves(&points)).as_bytes())?;
    let best = *points
        .iter()
        .min_by(|x, y| x.cost.total_cmp(&y.cost))
        .expect("sweep returns one point per config");
    let summary = SweepSummary {
        rows: points.len(),
        pareto_points: rd::pareto_mask(&points).iter().filter(|&&b| b).count(),
        best,
    };
    emit(&None, &to_json(&summary))
}

#[derive(Args, Debug)]
pub struct BdArgs {
    /// Anchor curve file.
    pub a: PathBuf,
    /// Test curve file; deltas are B relative to A.
    pub b: PathBuf,
    /// Output JSON (default stdout).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Serialize)]
struct BdPair {
    name: String,
    bd_psnr_db: f64,
    /// `None` when the quality ranges do not overlap.
    bd_rate_pct: Option<f64>,
}

#[derive(Serialize)]
struct BdReport {
    pairs: Vec<BdPair>,
}

fn read_curves(path: &Path) -> CliResult<CurveFile> {
    serde_json::from_slice(&read_file(path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn rd_curve(name: &str, pts: &[[f64; 2]]) -> CliResult<RdCurve> {
    RdCurve::new(pts.iter().map(|p| (p[0], p[1])).collect())
        .map_err(|e| Failure::usage(format!("curve {name:?}: {e}")))
}

pub fn bd(a: &BdArgs) -> CliResult<()> {
    let fa = read_curves(&a.a)?;
    let fb = read_curves(&a.b)?;
    let mut pairs = Vec::new();
    for ca in &fa.curves {
        let Some(cb) = fb.curves.iter().find(|c| c.name == ca.name) else {
            continue;
        };
        let (x, y) = (rd_curve(&ca.name, &ca.points)?, rd_curve(&cb.name, &cb.points)?);
        let bd_psnr_db = metrics::bd_psnr(&x, &y).map_err(|e| match e {
            MetricError::NoOverlap => Failure::incompatible(format!("curve {:?}: rate ranges do not overlap", ca.name)),
            other => Failure::usage(other),
        })?;
        let bd_rate_pct = match metrics::bd_rate(&x, &y) {
            Ok(v) => Some(v),
            Err(MetricError::NoOverlap) => {
                log::warn!("curve {:?}: quality ranges do not overlap; no BD-rate", ca.name);
                None
            }
            Err(other) => return Err(Failure::usage(other)),
        };
        pairs.push(BdPair {
            name: ca.name.clone(),
            bd_psnr_db,
            bd_rate_pct,
        });
    }
    if pairs.is_empty() {
        return Err(Failure::incompatible("the curve files share no curve names"));
    }
    emit(&a.output, &to_json(&BdReport { pairs }))
}

#[derive(Args, Debug)]
pub struct MaskArgs {
    /// Labeled input PLY.
    pub input: PathBuf,
    /// Label config JSON; defaults to the synthetic scene's labels.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Foreground mask value.
    #[arg(long, default_value_t = 1.0)]
    pub fg_weight: f64,
    /// Output CSV (default stdout).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

pub fn mask(a: &MaskArgs) -> CliResult<()> {
    let fg_weight = positive("--fg-weight", a.fg_weight)?;
    let cloud = read_cloud(&a.input)?;
    let m = roi_mask(&cloud, &load_labels(&a.labels)?, fg_weight)?;
    emit(&a.output, &m.to_csv())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output PLY.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Share of points on the foreground objects.
    #[arg(long, default_value_t = 0.3)]
    pub fg_fraction: f64,
    #[arg(long)]
    pub ascii: bool,
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    if !(0.0..=1.0).contains(&a.fg_fraction) {
        return Err(Failure::usage(format!("--fg-fraction must be in [0, 1], got {}", a.fg_fraction)));
    }
    let cloud = room_scene(&SceneParams {
        points: a.points,
        seed: a.seed,
        fg_fraction: a.fg_fraction,
        ..Default::default()
    });
    let format = if a.ascii {
        PlyFormat::Ascii
    } else {
        PlyFormat::BinaryLittleEndian
    };
    write_file(&a.output, &write_ply(&cloud, format))
}
