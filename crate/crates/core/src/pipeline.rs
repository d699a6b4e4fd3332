//! Dataset-level runs: scoring, evaluation, weight sweeps and the L2 baseline.
//!
//! A score run writes one fused, refined map per sampled frame to
//! `<out>/<scenario>/NNNN.f32t`, plus `NNNN.masks.txt` with the per-instance
//! scores when the strategy uses masks. Evaluation pools every non-ignored
//! pixel of every frame. A sweep computes each frame's normalized difference
//! maps once and evaluates every grid row from them in memory; its rows are
//! identical to separate score and evaluate runs.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::diffs::{abs_diff, l2_baseline, mse_diff, perceptual_diff, ssim_diff, temporal_diff, SsimConfig};
use crate::error::{Error, Result};
use crate::features::{load_features, ExtractorConfig, FeatureExtractor};
use crate::images::{read_gt_png, read_instance_png, read_rgb_png};
use crate::manifest::{frame_name, load_manifest, DatasetManifest, FrameRef};
use crate::metrics::{pool_into, EvalReport};
use crate::scoring::{fuse, normalize_map, DiffSet, MaskScoreTable, Refinement};
use crate::tensor_file::{read_image, read_map, write_tensor};
use crate::types::{AnomalyMap, BinaryLabelMap, DiffKind, FeatureStack, FusionWeights, ImageTensor, InstanceLabelMap, PixelLabel, PredictionHistory};

/// Where instance masks come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskSource {
    /// `masks/NNNN.png`, the dataset's segmentation.
    Predicted,
    /// `masks_gt/NNNN.png` when the scenario has that directory, otherwise
    /// `masks/` (synthetic datasets store exact instances there).
    GroundTruth,
}

impl MaskSource {
    pub fn name(self) -> &'static str {
        match self {
            MaskSource::Predicted => "predicted",
            MaskSource::GroundTruth => "gt",
        }
    }
}

impl fmt::Display for MaskSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(MaskSource::Predicted),
            "gt" => Ok(MaskSource::GroundTruth),
            other => Err(Error::Config(format!("unknown mask source {other:?}"))),
        }
    }
}

/// Source of the feature stacks behind the perceptual map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureSource {
    Extractor(ExtractorConfig),
    /// `<dir>/<scenario>/NNNN_rgb.umfs` and `NNNN_recon.umfs`.
    Directory(PathBuf),
}

impl Default for FeatureSource {
    fn default() -> Self {
        FeatureSource::Extractor(ExtractorConfig::default())
    }
}

/// One scoring setting: fusion weights, refinement and mask source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRow {
    pub weights: FusionWeights,
    pub strategy: Refinement,
    pub masks: Option<MaskSource>,
}

impl GridRow {
    pub fn validate(&self) -> Result<()> {
        if self.strategy.uses_masks() && self.masks.is_none() {
            return Err(Error::Config(format!(
                "strategy {} requires a mask source",
                self.strategy
            )));
        }
        Ok(())
    }

    /// Mask column of a results table.
    pub fn mask_label(&self) -> &'static str {
        match (self.strategy, self.masks) {
            (Refinement::None, _) | (_, None) => "none",
            (_, Some(m)) => m.name(),
        }
    }
}

/// Everything needed for one score run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub weights: FusionWeights,
    pub strategy: Refinement,
    pub masks: Option<MaskSource>,
    pub ssim: SsimConfig,
    pub features: FeatureSource,
    /// Overrides the manifest's history depth.
    pub history: Option<usize>,
    pub out: PathBuf,
}

impl RunConfig {
    /// Unrefined run with default SSIM and extractor settings.
    pub fn new(manifest: impl Into<PathBuf>, weights: FusionWeights, out: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            weights,
            strategy: Refinement::None,
            masks: None,
            ssim: SsimConfig::default(),
            features: FeatureSource::default(),
            history: None,
            out: out.into(),
        }
    }

    pub fn row(&self) -> GridRow {
        GridRow {
            weights: self.weights,
            strategy: self.strategy,
            masks: self.masks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.row().validate()?;
        self.ssim.validate()?;
        if let FeatureSource::Extractor(cfg) = &self.features {
            cfg.validate()?;
        }
        Ok(())
    }
}

/// Loads the manifest, applying a history override.
fn open_manifest(path: &Path, history: Option<usize>) -> Result<DatasetManifest> {
    let manifest = load_manifest(path)?;
    match history {
        Some(n) => manifest.with_history(n),
        None => Ok(manifest),
    }
}

pub fn score_path(out: &Path, manifest: &DatasetManifest, frame: FrameRef) -> PathBuf {
    out.join(&manifest.scenarios[frame.scenario].id)
        .join(format!("{}.f32t", frame_name(frame.frame)))
}

fn table_path(out: &Path, manifest: &DatasetManifest, frame: FrameRef) -> PathBuf {
    out.join(&manifest.scenarios[frame.scenario].id)
        .join(format!("{}.masks.txt", frame_name(frame.frame)))
}

fn mask_path(manifest: &DatasetManifest, frame: FrameRef, source: MaskSource) -> PathBuf {
    let scenario = &manifest.scenarios[frame.scenario];
    let gt_dir = scenario.dir.join("masks_gt");
    match source {
        MaskSource::GroundTruth if gt_dir.is_dir() => {
            gt_dir.join(format!("{}.png", frame_name(frame.frame)))
        }
        _ => manifest.frame_paths(frame).masks,
    }
}

/// Computes normalized difference maps for frames of one dataset.
struct FrameScorer<'a> {
    manifest: &'a DatasetManifest,
    ssim: SsimConfig,
    features: &'a FeatureSource,
    extractor: Option<FeatureExtractor>,
}

impl<'a> FrameScorer<'a> {
    fn new(manifest: &'a DatasetManifest, ssim: SsimConfig, features: &'a FeatureSource) -> Result<Self> {
        ssim.validate()?;
        let extractor = match features {
            FeatureSource::Extractor(cfg) => Some(FeatureExtractor::new(*cfg, 3)?),
            FeatureSource::Directory(_) => None,
        };
        Ok(Self {
            manifest,
            ssim,
            features,
            extractor,
        })
    }

    fn feature_pair(&self, frame: FrameRef, rgb: &ImageTensor, recon: &ImageTensor) -> Result<(FeatureStack, FeatureStack)> {
        match (&self.extractor, self.features) {
            (Some(ex), _) => Ok((ex.extract(rgb)?, ex.extract(recon)?)),
            (None, FeatureSource::Directory(dir)) => {
                let base = dir.join(&self.manifest.scenarios[frame.scenario].id);
                let name = frame_name(frame.frame);
                let load = |role: &'static str| {
                    let path = base.join(format!("{name}_{role}.umfs"));
                    if !path.is_file() {
                        return Err(Error::MissingFrameFile {
                            scenario: self.manifest.scenarios[frame.scenario].id.clone(),
                            frame: frame.frame,
                            role,
                            path,
                        });
                    }
                    load_features(path)
                };
                Ok((load("rgb")?, load("recon")?))
            }
            (None, FeatureSource::Extractor(_)) => unreachable!("extractor built in new"),
        }
    }

    /// Normalized maps for the requested kinds only.
    fn diff_set(&self, frame: FrameRef, kinds: &[DiffKind]) -> Result<DiffSet> {
        let paths = self.manifest.frame_paths(frame);
        let recon = read_image(&paths.recon)?;
        let visual = kinds.iter().any(|k| *k != DiffKind::Temporal);
        let rgb = if visual {
            Some(read_rgb_png(&paths.rgb)?)
        } else {
            None
        };
        let mut set = DiffSet::new();
        for &kind in kinds {
            let raw = match kind {
                DiffKind::Abs => abs_diff(rgb.as_ref().unwrap(), &recon)?,
                DiffKind::Mse => mse_diff(rgb.as_ref().unwrap(), &recon)?,
                DiffKind::Ssim => ssim_diff(rgb.as_ref().unwrap(), &recon, &self.ssim)?,
                DiffKind::Perceptual => {
                    let rgb = rgb.as_ref().unwrap();
                    let (fg, fp) = self.feature_pair(frame, rgb, &recon)?;
                    perceptual_diff(&fg, &fp, rgb.height(), rgb.width())?
                }
                DiffKind::Temporal => {
                    let preds = paths.preds.iter().map(read_image).collect::<Result<Vec<_>>>()?;
                    temporal_diff(&PredictionHistory::new(frame.frame, preds, recon.clone())?)?
                }
            };
            set.insert(kind, normalize_map(&raw)?);
        }
        Ok(set)
    }

    fn masks(&self, frame: FrameRef, source: MaskSource) -> Result<InstanceLabelMap> {
        read_instance_png(mask_path(self.manifest, frame, source))
    }
}

/// Fuses and refines one frame. Top-1 on a frame without instances yields an
/// all-zero map.
fn score_frame(
    set: &DiffSet,
    row: &GridRow,
    masks: Option<&InstanceLabelMap>,
) -> Result<(AnomalyMap, Option<MaskScoreTable>)> {
    let fused = fuse(set, &row.weights)?;
    if let Some(m) = masks {
        if m.shape() != fused.shape() {
            return Err(Error::contract(format!(
                "mask shape {:?} differs from map shape {:?}",
                m.shape(),
                fused.shape()
            )));
        }
        if row.strategy == Refinement::Top1 && m.instance_ids().is_empty() {
            let (h, w) = fused.shape();
            return Ok((AnomalyMap::zeros(h, w)?.into_normalized()?, Some(MaskScoreTable::default())));
        }
    }
    let masks = if row.strategy.uses_masks() { masks } else { None };
    row.strategy.apply(&fused, masks)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Scores every sampled frame and writes maps and mask tables under `rc.out`.
/// Returns the manifest that was scored.
pub fn run_score(rc: &RunConfig) -> Result<DatasetManifest> {
    rc.validate()?;
    let manifest = open_manifest(&rc.manifest, rc.history)?;
    let row = rc.row();
    let kinds: Vec<DiffKind> = rc.weights.active().collect();
    let scorer = FrameScorer::new(&manifest, rc.ssim, &rc.features)?;
    manifest.frames().par_iter().try_for_each(|&frame| {
        let set = scorer.diff_set(frame, &kinds)?;
        let masks = match (row.strategy.uses_masks(), row.masks) {
            (true, Some(src)) => Some(scorer.masks(frame, src)?),
            _ => None,
        };
        let (map, table) = score_frame(&set, &row, masks.as_ref())?;
        let path = score_path(&rc.out, &manifest, frame);
        create_parent(&path)?;
        write_tensor(&path, &map)?;
        if let Some(t) = table {
            write_text(&table_path(&rc.out, &manifest, frame), &t.to_text())?;
        }
        Ok::<_, Error>(())
    })?;
    write_text(&rc.out.join("run.txt"), &describe_run(rc))?;
    Ok(manifest)
}

fn describe_run(rc: &RunConfig) -> String {
    let w = rc.weights.as_array();
    let mut s = String::new();
    let _ = writeln!(s, "manifest {}", rc.manifest.display());
    let _ = writeln!(s, "weights {},{},{},{},{}", w[0], w[1], w[2], w[3], w[4]);
    let _ = writeln!(s, "strategy {}", rc.strategy);
    let _ = writeln!(s, "masks {}", rc.masks.map_or("none", MaskSource::name));
    let _ = writeln!(s, "ssim_window {}", rc.ssim.window);
    match &rc.features {
        FeatureSource::Extractor(c) => {
            let _ = writeln!(
                s,
                "extractor seed {} layers {} channels {} kernel {}",
                c.seed, c.num_layers, c.channels_per_layer, c.kernel_size
            );
        }
        FeatureSource::Directory(d) => {
            let _ = writeln!(s, "features {}", d.display());
        }
    }
    s
}

/// Pixel pool over many frames.
#[derive(Default)]
struct Pool {
    scores: Vec<f64>,
    labels: Vec<bool>,
    ignored: usize,
}

impl Pool {
    fn add(&mut self, map: &AnomalyMap, gt: &BinaryLabelMap) -> Result<()> {
        self.ignored += gt.count(PixelLabel::Ignore);
        pool_into(map, gt, &mut self.scores, &mut self.labels)
    }

    fn report(&self) -> Result<EvalReport> {
        EvalReport::compute(&self.scores, &self.labels, self.ignored)
    }
}

/// Evaluates the maps in `score_dir` against the manifest's ground truth.
pub fn run_evaluate(score_dir: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<EvalReport> {
    let score_dir = score_dir.as_ref();
    let manifest = load_manifest(manifest)?;
    let mut pool = Pool::default();
    for frame in manifest.frames() {
        let path = score_path(score_dir, &manifest, frame);
        if !path.is_file() {
            return Err(Error::MissingFrameFile {
                scenario: manifest.scenarios[frame.scenario].id.clone(),
                frame: frame.frame,
                role: "score",
                path,
            });
        }
        pool.add(&read_map(path)?, &read_gt_png(manifest.frame_paths(frame).gt)?)?;
    }
    pool.report()
}

/// Writes raw (unnormalized) L2 maps of every frame to `out` and evaluates them.
pub fn run_baseline(manifest_path: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<EvalReport> {
    let (manifest_path, out) = (manifest_path.as_ref(), out.as_ref());
    let manifest = load_manifest(manifest_path)?;
    manifest.frames().par_iter().try_for_each(|&frame| {
        let paths = manifest.frame_paths(frame);
        let map = l2_baseline(&read_rgb_png(&paths.rgb)?, &read_image(&paths.recon)?)?;
        let path = score_path(out, &manifest, frame);
        create_parent(&path)?;
        write_tensor(&path, &map)
    })?;
    run_evaluate(out, manifest_path)
}

/// The fifteen weight settings of the standard ablation, in order: each map
/// alone, every triple of the first four maps, every leave-one-out quadruple
/// and the equal five-way mix.
pub fn standard_weight_rows() -> Vec<FusionWeights> {
    let third = 1.0 / 3.0;
    let mut rows: Vec<[f64; 5]> = (0..5)
        .map(|i| {
            let mut w = [0.0; 5];
            w[i] = 1.0;
            w
        })
        .collect();
    for skip in 0..4 {
        let mut w = [third, third, third, third, 0.0];
        w[skip] = 0.0;
        rows.push(w);
    }
    for skip in 0..5 {
        let mut w = [0.25; 5];
        w[skip] = 0.0;
        rows.push(w);
    }
    rows.push([0.2; 5]);
    rows.into_iter()
        .map(|w| FusionWeights::from_array(w).expect("valid weights"))
        .collect()
}

/// Mask settings of the default grid: ground-truth masks with mean, no
/// masks, then predicted masks with mean, max and top-1.
pub fn standard_settings() -> [(Refinement, Option<MaskSource>); 5] {
    [
        (Refinement::Mean, Some(MaskSource::GroundTruth)),
        (Refinement::None, None),
        (Refinement::Mean, Some(MaskSource::Predicted)),
        (Refinement::Max, Some(MaskSource::Predicted)),
        (Refinement::Top1, Some(MaskSource::Predicted)),
    ]
}

/// Every standard weight row under every standard setting, weights outermost.
pub fn default_grid() -> Vec<GridRow> {
    standard_weight_rows()
        .into_iter()
        .flat_map(|weights| {
            standard_settings().map(|(strategy, masks)| GridRow {
                weights,
                strategy,
                masks,
            })
        })
        .collect()
}

/// Parses a grid file: one row per line as `a,m,s,p,t strategy [masks]`, with
/// blank lines and `#` comments skipped. Mask-using strategies default to
/// predicted masks.
pub fn parse_grid(text: &str) -> Result<Vec<GridRow>> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |e: Error| Error::Config(format!("grid line {}: {e}", i + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (w, strategy, masks) = match fields.as_slice() {
            [w, s] => (*w, *s, None),
            [w, s, m] => (*w, *s, Some(*m)),
            _ => {
                return Err(Error::Config(format!(
                    "grid line {}: expected `weights strategy [masks]`, got {line:?}",
                    i + 1
                )))
            }
        };
        let strategy: Refinement = strategy.parse().map_err(at)?;
        let masks = match masks {
            Some(m) => Some(m.parse::<MaskSource>().map_err(at)?),
            None if strategy.uses_masks() => Some(MaskSource::Predicted),
            None => None,
        };
        rows.push(GridRow {
            weights: w.parse().map_err(at)?,
            strategy,
            masks,
        });
    }
    Ok(rows)
}

/// Shared settings of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub manifest: PathBuf,
    pub ssim: SsimConfig,
    pub features: FeatureSource,
    pub history: Option<usize>,
}

impl SweepConfig {
    pub fn new(manifest: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            ssim: SsimConfig::default(),
            features: FeatureSource::default(),
            history: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub row: GridRow,
    /// Error message when the row failed.
    pub result: std::result::Result<EvalReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepResult>,
}

fn weight_text(w: f64) -> String {
    if w == 0.0 {
        "0".into()
    } else if w == 1.0 {
        "1".into()
    } else {
        format!("{w:.2}")
    }
}

impl SweepTable {
    const HEADER: [&'static str; 10] = [
        "abs", "mse", "ssim", "per", "temp", "masks", "strategy", "AP", "FPR95", "AUROC",
    ];

    fn cells(r: &SweepResult) -> Vec<String> {
        let mut cells: Vec<String> = r.row.weights.as_array().iter().map(|&w| weight_text(w)).collect();
        cells.push(r.row.mask_label().into());
        cells.push(r.row.strategy.name().into());
        match &r.result {
            Ok(report) => cells.extend(report.percent_fields()),
            Err(msg) => cells.push(format!("error: {msg}")),
        }
        cells
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self.rows.iter().map(Self::cells).collect();
        let mut widths: Vec<usize> = Self::HEADER.iter().map(|h| h.len()).collect();
        for cells in &rows {
            for (w, c) in widths.iter_mut().zip(cells).take(9) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, c) in cells.iter().enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                match widths.get(i) {
                    Some(&w) if i < 9 => {
                        let _ = write!(s, "{c:>w$}");
                    }
                    _ => s.push_str(c),
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let header: Vec<String> = Self::HEADER.iter().map(|h| h.to_string()).collect();
        std::iter::once(line(&header)).chain(rows.iter().map(|c| line(c))).collect()
    }

    /// Comma-separated table; failed rows carry the message in an `error` column.
    pub fn to_csv(&self) -> String {
        let mut s = Self::HEADER.join(",") + ",error\n";
        for r in &self.rows {
            let w = r.row.weights.as_array();
            let _ = write!(
                s,
                "{:.6},{:.6},{:.6},{:.6},{:.6},{},{},",
                w[0], w[1], w[2], w[3], w[4],
                r.row.mask_label(),
                r.row.strategy
            );
            match &r.result {
                Ok(report) => {
                    let _ = writeln!(s, "{},", report.percent_fields().join(","));
                }
                Err(msg) => {
                    let _ = writeln!(s, ",,,\"{}\"", msg.replace('"', "'"));
                }
            }
        }
        s
    }
}

/// Frame data shared by all sweep rows.
struct CachedFrame {
    maps: DiffSet,
    predicted: Option<InstanceLabelMap>,
    gt_masks: Option<InstanceLabelMap>,
    gt: BinaryLabelMap,
}

/// Evaluates every grid row. Rows that fail record their error and the sweep
/// continues; dataset-level failures abort.
pub fn run_sweep(cfg: &SweepConfig, grid: &[GridRow]) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let manifest = open_manifest(&cfg.manifest, cfg.history)?;
    let scorer = FrameScorer::new(&manifest, cfg.ssim, &cfg.features)?;
    let kinds: Vec<DiffKind> = DiffKind::ALL
        .into_iter()
        .filter(|k| grid.iter().any(|r| r.weights.weight(*k) > 0.0))
        .collect();
    let wants = |src: MaskSource| {
        grid.iter()
            .any(|r| r.strategy.uses_masks() && r.masks == Some(src))
    };
    let (want_pred, want_gt) = (wants(MaskSource::Predicted), wants(MaskSource::GroundTruth));
    let cache: Vec<CachedFrame> = manifest
        .frames()
        .par_iter()
        .map(|&frame| {
            Ok(CachedFrame {
                maps: scorer.diff_set(frame, &kinds)?,
                predicted: want_pred
                    .then(|| scorer.masks(frame, MaskSource::Predicted))
                    .transpose()?,
                gt_masks: want_gt
                    .then(|| scorer.masks(frame, MaskSource::GroundTruth))
                    .transpose()?,
                gt: read_gt_png(manifest.frame_paths(frame).gt)?,
            })
        })
        .collect::<Result<_>>()?;

    let rows = grid
        .par_iter()
        .map(|row| {
            let result = row.validate().and_then(|_| {
                let mut pool = Pool::default();
                for c in &cache {
                    let masks = match row.masks {
                        Some(MaskSource::Predicted) => c.predicted.as_ref(),
                        Some(MaskSource::GroundTruth) => c.gt_masks.as_ref(),
                        None => None,
                    };
                    pool.add(&score_frame(&c.maps, row, masks)?.0, &c.gt)?;
                }
                pool.report()
            });
            SweepResult {
                row: *row,
                result: result.map_err(|e| e.to_string()),
            }
        })
        .collect();
    Ok(SweepTable { rows })
}

/// Writes `results.txt` and `results.csv` into `out`.
pub fn write_sweep(table: &SweepTable, out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    write_text(&out.join("results.txt"), &table.to_text())?;
    write_text(&out.join("results.csv"), &table.to_csv())
}

#[cfg(test)]
mod tests;
