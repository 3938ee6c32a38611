//! Manifest-driven batch runner chaining the stages over many images.
//!
//! Every stage writes its artifact to `{output_dir}/{image_id}_{stage}.*`
//! and later stages read those files when the producing stage is not part
//! of the current run, so stages can be executed one invocation at a time.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cues::{generate_cues, merge_cues, snap_to_superpixels, CueThresholds, PresentClasses};
use crate::densecrf::{CrfParams, DEFAULT_LATTICE_CUTOFF};
use crate::error::{Error, Result};
use crate::imagery::{
    load_feature_map, load_image, load_mask_png, load_scoremap, resize_bilinear, save_mask_png,
    CueSet, ImageRgb, LabelMask, ScoreMap,
};
use crate::inference::{predict_mask, AmendParams, AmendSpec};
use crate::metrics::{cues_to_mask, ConfusionMatrix};
use crate::objective::{refine_logits, write_trace_csv, LogitsField, RefineParams};
use crate::superpixel::{segment_felzenszwalb, FelzParams, SuperPixelLabeling};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub output_dir: PathBuf,
    /// Images with more pixels than this use the lattice CRF.
    pub lattice_cutoff: usize,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            lattice_cutoff: DEFAULT_LATTICE_CUTOFF,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub felzenszwalb: FelzParams,
    pub crf: CrfParams,
    pub thresholds: CueThresholds,
    pub amend: AmendParams,
    pub refine: RefineParams,
    pub io: IoConfig,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |what: &str, r: Result<()>| r.map_err(|e| Error::Config(format!("{what}: {e}")));
        wrap("felzenszwalb", self.felzenszwalb.validate())?;
        wrap("crf", self.crf.validate())?;
        wrap("thresholds", self.thresholds.validate())?;
        wrap("refine", self.refine.validate())?;
        if !(self.amend.margin > 0.0) {
            return Err(Error::Config(format!("amend: margin must be > 0, got {}", self.amend.margin)));
        }
        Ok(())
    }
}

/// One image and its classifier outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image_id: String,
    pub image: PathBuf,
    pub activations: PathBuf,
    pub features: PathBuf,
    /// Second classifier (grayscale input) for cue merging.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gray_activations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gray_features: Option<PathBuf>,
    /// Foreground classes named by the image-level label.
    pub present: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
    /// Foreground classes predicted by the classifier; defaults to `present`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub images: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Loads a manifest; relative paths are taken relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let mut m = Self::from_json(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            m.resolve(base);
        }
        Ok(m)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for r in &mut self.images {
            fix(&mut r.image);
            fix(&mut r.activations);
            fix(&mut r.features);
            for p in [&mut r.gray_activations, &mut r.gray_features, &mut r.gt]
                .into_iter()
                .flatten()
            {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.images {
            if r.image_id.is_empty() || r.image_id.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid image_id {:?}", r.image_id)));
            }
            if !seen.insert(&r.image_id) {
                return Err(Error::Config(format!("duplicate image_id {:?}", r.image_id)));
            }
            if r.gray_activations.is_some() != r.gray_features.is_some() {
                return Err(Error::Config(format!(
                    "{}: gray_activations and gray_features go together",
                    r.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Superpixel,
    Cues,
    Snap,
    Merge,
    Refine,
    Infer,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Superpixel,
        Stage::Cues,
        Stage::Snap,
        Stage::Merge,
        Stage::Refine,
        Stage::Infer,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Superpixel => "superpixel",
            Stage::Cues => "cues",
            Stage::Snap => "snap",
            Stage::Merge => "merge",
            Stage::Refine => "refine",
            Stage::Infer => "infer",
            Stage::Eval => "eval",
        }
    }

    /// Parses a comma-separated stage list, or `all`.
    pub fn parse_list(list: &str) -> Result<Vec<Stage>> {
        if list.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// Artifact paths for one image.
#[derive(Clone, Debug)]
pub struct ArtifactPaths {
    pub superpixel: PathBuf,
    pub cues: PathBuf,
    pub cues_gray: PathBuf,
    pub snap: PathBuf,
    pub snap_gray: PathBuf,
    pub merge: PathBuf,
    pub refine: PathBuf,
    pub refine_trace: PathBuf,
    pub infer: PathBuf,
}

impl ArtifactPaths {
    pub fn new(dir: &Path, id: &str) -> Self {
        let f = |suffix: &str| dir.join(format!("{id}_{suffix}"));
        Self {
            superpixel: f("superpixel.npy"),
            cues: f("cues.npy"),
            cues_gray: f("cues_gray.npy"),
            snap: f("snap.npy"),
            snap_gray: f("snap_gray.npy"),
            merge: f("merge.npy"),
            refine: f("refine.npy"),
            refine_trace: f("refine_trace.csv"),
            infer: f("infer.png"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image_id: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: Vec<PathBuf>,
    /// mIoU of the predicted mask against ground truth, when evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
    /// mIoU of each cue stage's labeling, when evaluated.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub cue_miou: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stages: Vec<Stage>,
    pub images: Vec<ImageReport>,
    pub failed: usize,
    /// Dataset-level mIoU of the predicted masks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_class_iou: Vec<Option<f64>>,
    /// Dataset-level mIoU per cue stage.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub cue_miou: BTreeMap<String, f64>,
}

impl PipelineReport {
    /// 0 when every image succeeded, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failed == 0 {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Confusion matrices produced by the eval stage for one image.
#[derive(Default)]
struct EvalCounts {
    mask: Option<ConfusionMatrix>,
    cues: BTreeMap<String, ConfusionMatrix>,
}

/// In-memory state of one image while its stages run.
struct Work<'a> {
    rec: &'a ManifestRecord,
    cfg: &'a PipelineConfig,
    paths: ArtifactPaths,
    image: Option<ImageRgb>,
    activations: Option<ScoreMap>,
    superpixels: Option<SuperPixelLabeling>,
    cues: Option<CueSet>,
    cues_gray: Option<CueSet>,
    snap: Option<CueSet>,
    snap_gray: Option<CueSet>,
    merge: Option<CueSet>,
    logits: Option<LogitsField>,
    mask: Option<LabelMask>,
    artifacts: Vec<PathBuf>,
}

fn missing(what: &str, path: &Path) -> Error {
    Error::FileNotFound(PathBuf::from(format!("{} ({what})", path.display())))
}

fn cached<T>(
    slot: &mut Option<T>,
    path: &Path,
    what: &str,
    load: impl FnOnce(&Path) -> Result<T>,
) -> Result<T>
where
    T: Clone,
{
    if slot.is_none() {
        if !path.exists() {
            return Err(missing(what, path));
        }
        *slot = Some(load(path)?);
    }
    Ok(slot.clone().unwrap())
}

/// Loads a classifier map and brings it to the image resolution.
fn load_at(path: &Path, dims: (usize, usize), feature: bool) -> Result<ScoreMap> {
    let map = if feature { load_feature_map(path)? } else { load_scoremap(path)? };
    if map.dims() == dims {
        Ok(map)
    } else {
        resize_bilinear(&map, dims.0, dims.1)
    }
}

impl<'a> Work<'a> {
    fn new(rec: &'a ManifestRecord, cfg: &'a PipelineConfig) -> Self {
        Self {
            rec,
            cfg,
            paths: ArtifactPaths::new(&cfg.io.output_dir, &rec.image_id),
            image: None,
            activations: None,
            superpixels: None,
            cues: None,
            cues_gray: None,
            snap: None,
            snap_gray: None,
            merge: None,
            logits: None,
            mask: None,
            artifacts: Vec::new(),
        }
    }

    fn image(&mut self) -> Result<ImageRgb> {
        if self.image.is_none() {
            self.image = Some(load_image(&self.rec.image)?);
        }
        Ok(self.image.clone().unwrap())
    }

    fn activations(&mut self) -> Result<ScoreMap> {
        if self.activations.is_none() {
            let dims = self.image()?.dims();
            self.activations = Some(load_at(&self.rec.activations, dims, false)?);
        }
        Ok(self.activations.clone().unwrap())
    }

    fn classes(&mut self) -> Result<usize> {
        Ok(self.activations()?.classes)
    }

    fn superpixels(&mut self) -> Result<SuperPixelLabeling> {
        let p = self.paths.superpixel.clone();
        cached(&mut self.superpixels, &p, "superpixel stage output", |p| SuperPixelLabeling::load(p))
    }

    fn cue_file(slot: &mut Option<CueSet>, path: &Path, what: &str) -> Result<CueSet> {
        cached(slot, path, what, |p| CueSet::load(p))
    }

    fn has_gray(&self) -> bool {
        self.rec.gray_activations.is_some()
    }

    /// Most refined cue set available: merged, else snapped, else raw.
    fn training_cues(&mut self) -> Result<CueSet> {
        let p = &self.paths;
        if self.merge.is_some() || p.merge.exists() {
            return Self::cue_file(&mut self.merge, &p.merge.clone(), "merge");
        }
        if self.snap.is_some() || p.snap.exists() {
            return Self::cue_file(&mut self.snap, &p.snap.clone(), "snap");
        }
        Self::cue_file(&mut self.cues, &p.cues.clone(), "cues stage output")
    }

    fn record(&mut self, path: &Path) {
        self.artifacts.push(path.to_path_buf());
    }

    fn run(&mut self, stage: Stage) -> Result<Option<EvalCounts>> {
        let cfg = self.cfg;
        match stage {
            Stage::Superpixel => {
                let sp = segment_felzenszwalb(&self.image()?, &cfg.felzenszwalb)?;
                sp.save(&self.paths.superpixel)?;
                self.record(&self.paths.superpixel.clone());
                self.superpixels = Some(sp);
            }
            Stage::Cues => {
                let img = self.image()?;
                let act = self.activations()?;
                let present = PresentClasses::new(self.rec.present.clone(), act.classes)?;
                let feats = load_at(&self.rec.features, img.dims(), true)?;
                let cues = generate_cues(&act, &feats, &present, &cfg.thresholds)?;
                cues.save(&self.paths.cues)?;
                self.record(&self.paths.cues.clone());
                self.cues = Some(cues);
                if let (Some(ga), Some(gf)) = (&self.rec.gray_activations, &self.rec.gray_features) {
                    let gact = load_at(ga, img.dims(), false)?;
                    let gfeat = load_at(gf, img.dims(), true)?;
                    let cues = generate_cues(&gact, &gfeat, &present, &cfg.thresholds)?;
                    cues.save(&self.paths.cues_gray)?;
                    self.record(&self.paths.cues_gray.clone());
                    self.cues_gray = Some(cues);
                }
            }
            Stage::Snap => {
                let sp = self.superpixels()?;
                let raw = Self::cue_file(&mut self.cues, &self.paths.cues.clone(), "cues stage output")?;
                let snapped = snap_to_superpixels(&raw, &sp, &cfg.thresholds)?;
                snapped.save(&self.paths.snap)?;
                self.record(&self.paths.snap.clone());
                self.snap = Some(snapped);
                if self.has_gray() {
                    let raw = Self::cue_file(
                        &mut self.cues_gray,
                        &self.paths.cues_gray.clone(),
                        "cues stage output (gray)",
                    )?;
                    let snapped = snap_to_superpixels(&raw, &sp, &cfg.thresholds)?;
                    snapped.save(&self.paths.snap_gray)?;
                    self.record(&self.paths.snap_gray.clone());
                    self.snap_gray = Some(snapped);
                }
            }
            Stage::Merge => {
                let a = Self::cue_file(&mut self.snap, &self.paths.snap.clone(), "snap stage output")?;
                let b = if self.has_gray() {
                    Self::cue_file(
                        &mut self.snap_gray,
                        &self.paths.snap_gray.clone(),
                        "snap stage output (gray)",
                    )?
                } else {
                    a.clone()
                };
                let merged = merge_cues(&a, &b)?;
                merged.save(&self.paths.merge)?;
                self.record(&self.paths.merge.clone());
                self.merge = Some(merged);
            }
            Stage::Refine => {
                let img = self.image()?;
                let cues = self.training_cues()?;
                let init = LogitsField::zeros(cues.classes, img.height, img.width);
                let out = refine_logits(
                    &img,
                    &init,
                    &cues,
                    &cfg.crf,
                    &cfg.refine,
                    cfg.io.lattice_cutoff,
                )?;
                out.logits.save(&self.paths.refine)?;
                write_trace_csv(&out.trace, &self.paths.refine_trace)?;
                self.record(&self.paths.refine.clone());
                self.record(&self.paths.refine_trace.clone());
                self.logits = Some(out.logits);
            }
            Stage::Infer => {
                let img = self.image()?;
                let p = self.paths.refine.clone();
                let logits = cached(&mut self.logits, &p, "refine stage output", |p| LogitsField::load(p))?;
                let fg = self.rec.predicted.as_ref().unwrap_or(&self.rec.present);
                let spec = AmendSpec::new(fg, cfg.amend.margin)?;
                let mask = predict_mask(
                    &img,
                    &logits.probabilities(),
                    &spec,
                    &cfg.crf,
                    cfg.io.lattice_cutoff,
                )?;
                save_mask_png(&mask, &self.paths.infer)?;
                self.record(&self.paths.infer.clone());
                self.mask = Some(mask);
            }
            Stage::Eval => return self.evaluate().map(Some),
        }
        Ok(None)
    }

    fn evaluate(&mut self) -> Result<EvalCounts> {
        let gt_path = self
            .rec
            .gt
            .clone()
            .ok_or_else(|| Error::Config(format!("{}: eval needs a gt mask", self.rec.image_id)))?;
        let gt = load_mask_png(&gt_path)?;
        let classes = self.classes()?;
        let tally = |pred: &LabelMask| -> Result<ConfusionMatrix> {
            let mut cm = ConfusionMatrix::new(classes);
            cm.accumulate(&gt, pred)?;
            Ok(cm)
        };
        let mut counts = EvalCounts::default();
        let p = self.paths.clone();
        for (name, slot, path) in [
            ("cues", &mut self.cues, &p.cues),
            ("snap", &mut self.snap, &p.snap),
            ("merge", &mut self.merge, &p.merge),
        ] {
            if slot.is_some() || path.exists() {
                let cues = Self::cue_file(slot, path, name)?;
                counts.cues.insert(name.to_string(), tally(&cues_to_mask(&cues))?);
            }
        }
        if self.mask.is_none() && p.infer.exists() {
            self.mask = Some(load_mask_png(&p.infer)?);
        }
        match &self.mask {
            Some(mask) => counts.mask = Some(tally(mask)?),
            None if counts.cues.is_empty() => return Err(missing("infer stage output", &p.infer)),
            None => {}
        }
        Ok(counts)
    }
}

fn run_image(
    rec: &ManifestRecord,
    cfg: &PipelineConfig,
    stages: &[Stage],
) -> (ImageReport, Option<EvalCounts>) {
    let mut work = Work::new(rec, cfg);
    let mut counts = None;
    let mut result = Ok(());
    for &stage in stages {
        log::debug!("{}: {stage}", rec.image_id);
        match work.run(stage) {
            Ok(Some(c)) => counts = Some(c),
            Ok(None) => {}
            Err(e) => {
                result = Err(format!("{stage}: {e}"));
                break;
            }
        }
    }
    let mut report = ImageReport {
        image_id: rec.image_id.clone(),
        ok: result.is_ok(),
        error: result.err(),
        artifacts: work.artifacts,
        ..Default::default()
    };
    if !report.ok {
        log::warn!("{}: {}", rec.image_id, report.error.as_deref().unwrap_or(""));
        return (report, None);
    }
    if let Some(c) = &counts {
        report.miou = c.mask.as_ref().and_then(|m| m.miou(None).ok());
        for (name, cm) in &c.cues {
            if let Ok(v) = cm.miou(None) {
                report.cue_miou.insert(name.clone(), v);
            }
        }
    }
    (report, counts)
}

fn fold_matrix(acc: &mut Option<ConfusionMatrix>, cm: &ConfusionMatrix) -> std::result::Result<(), String> {
    match acc {
        None => {
            *acc = Some(cm.clone());
            Ok(())
        }
        Some(a) => a.merge(cm).map_err(|e| e.to_string()),
    }
}

/// Runs `stages` over every manifest image, `jobs` images at a time.
/// Per-image failures are recorded in the report; the other images still run.
pub fn run_pipeline(
    manifest: &Manifest,
    cfg: &PipelineConfig,
    stages: &[Stage],
    jobs: usize,
) -> Result<PipelineReport> {
    manifest.validate()?;
    cfg.validate()?;
    if !manifest.images.is_empty() {
        std::fs::create_dir_all(&cfg.io.output_dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<_> = pool.install(|| {
        manifest
            .images
            .par_iter()
            .map(|rec| run_image(rec, cfg, stages))
            .collect()
    });

    let mut report = PipelineReport {
        stages: stages.to_vec(),
        ..Default::default()
    };
    let mut total: Option<ConfusionMatrix> = None;
    let mut cue_totals: BTreeMap<String, Option<ConfusionMatrix>> = BTreeMap::new();
    for (mut image, counts) in results {
        if let Some(c) = counts {
            let mut folded = Ok(());
            if let Some(m) = &c.mask {
                folded = fold_matrix(&mut total, m);
            }
            for (name, cm) in &c.cues {
                if folded.is_ok() {
                    folded = fold_matrix(cue_totals.entry(name.clone()).or_default(), cm);
                }
            }
            if let Err(e) = folded {
                image.ok = false;
                image.error = Some(format!("eval: {e}"));
            }
        }
        report.failed += usize::from(!image.ok);
        report.images.push(image);
    }
    if let Some(cm) = total {
        report.miou = cm.miou(None).ok();
        report.per_class_iou = cm.iou_per_class();
    }
    for (name, cm) in cue_totals {
        if let Some(v) = cm.and_then(|m| m.miou(None).ok()) {
            report.cue_miou.insert(name, v);
        }
    }
    Ok(report)
}
