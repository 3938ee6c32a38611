//! Seeding and constrain-to-boundary losses with analytic gradients, and a
//! gradient-descent refiner that fits a free logits field to a cue set.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::densecrf::{CrfParams, DenseCrf};
use crate::error::{dims_match, Error, Result};
use crate::imagery::{npy, CueSet, ImageRgb, ScoreKind, ScoreMap};

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-8;

/// A loss value with its gradient w.r.t. the probabilities, `(K, H, W)` layout.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub seeding: f64,
    pub boundary: f64,
    pub total: f64,
}

/// `L_s = -(1/|C|) sum_{C(i)=1} log F(i)` over every set (class, pixel) element.
pub fn seeding_loss(probs: &[f64], cues: &CueSet) -> Result<LossGrad> {
    if probs.len() != cues.data.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities vs {} cue elements",
            probs.len(),
            cues.data.len()
        )));
    }
    let count = cues.count();
    if count == 0 {
        return Err(Error::EmptyCues);
    }
    let inv = 1.0 / count as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; probs.len()];
    for ((g, &f), &c) in grad.iter_mut().zip(probs).zip(&cues.data) {
        if c != 0 {
            let f = f.max(LOG_FLOOR);
            value -= f.ln();
            *g = -inv / f;
        }
    }
    Ok(LossGrad {
        value: value * inv,
        grad,
    })
}

/// `L_c = (1/n) sum_i Q(i) log(Q(i) / F(i))`, with `Q` held constant.
pub fn boundary_loss(probs: &[f64], target: &[f64]) -> Result<LossGrad> {
    if probs.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities vs {} CRF marginals",
            probs.len(),
            target.len()
        )));
    }
    let inv = 1.0 / probs.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; probs.len()];
    for ((g, &f), &q) in grad.iter_mut().zip(probs).zip(target) {
        let f = f.max(LOG_FLOOR);
        if q > 0.0 {
            value += q * (q.max(LOG_FLOOR) / f).ln();
        }
        *g = -inv * q / f;
    }
    Ok(LossGrad {
        value: value * inv,
        grad,
    })
}

/// Unnormalized class scores, `(K, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitsField {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl LogitsField {
    pub fn zeros(classes: usize, height: usize, width: usize) -> Self {
        Self {
            classes,
            height,
            width,
            data: vec![0.0; classes * height * width],
        }
    }

    /// Logits whose softmax reproduces `probs` (log with the usual floor).
    pub fn from_probs(probs: &ScoreMap) -> Self {
        Self {
            classes: probs.classes,
            height: probs.height,
            width: probs.width,
            data: probs.data.iter().map(|&p| (p as f64).max(LOG_FLOOR).ln()).collect(),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Per-pixel softmax, `(K, H, W)`.
    pub fn softmax(&self) -> Vec<f64> {
        let n = self.pixel_count();
        let kc = self.classes;
        let mut out = vec![0.0; self.data.len()];
        for i in 0..n {
            let max = (0..kc).map(|k| self.data[k * n + i]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in 0..kc {
                let e = (self.data[k * n + i] - max).exp();
                out[k * n + i] = e;
                z += e;
            }
            for k in 0..kc {
                out[k * n + i] /= z;
            }
        }
        out
    }

    pub fn probabilities(&self) -> ScoreMap {
        ScoreMap {
            classes: self.classes,
            height: self.height,
            width: self.width,
            data: self.softmax().into_iter().map(|v| v as f32).collect(),
            kind: ScoreKind::Probability,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let data: Vec<f32> = self.data.iter().map(|&v| v as f32).collect();
        npy::write_f32(path, &[self.classes, self.height, self.width], &data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let map = crate::imagery::load_scoremap(path)?;
        Ok(Self {
            classes: map.classes,
            height: map.height,
            width: map.width,
            data: map.data.into_iter().map(|v| v as f64).collect(),
        })
    }
}

/// Chains a probability-space gradient through the per-pixel softmax:
/// `dL/dtheta_k = F_k * (g_k - sum_m g_m F_m)`.
pub fn softmax_backward(probs: &[f64], grad: &[f64], classes: usize) -> Vec<f64> {
    let n = probs.len() / classes;
    let mut out = vec![0.0; probs.len()];
    for i in 0..n {
        let dot: f64 = (0..classes).map(|k| grad[k * n + i] * probs[k * n + i]).sum();
        for k in 0..classes {
            out[k * n + i] = probs[k * n + i] * (grad[k * n + i] - dot);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineParams {
    pub steps: usize,
    /// Step size. The losses are averages, so their gradients are small.
    pub lr: f64,
    /// CRF target is recomputed every this many steps.
    pub crf_every: usize,
    pub seeding_weight: f64,
    pub boundary_weight: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 100.0,
            crf_every: 5,
            seeding_weight: 1.0,
            boundary_weight: 1.0,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParam(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.crf_every == 0 {
            return Err(Error::InvalidParam("crf_every must be >= 1".into()));
        }
        if !(self.seeding_weight >= 0.0 && self.boundary_weight >= 0.0) {
            return Err(Error::InvalidParam("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Loss and logit gradient of `ws * L_s + wb * L_c` for a fixed CRF target.
pub fn objective(
    logits: &LogitsField,
    cues: &CueSet,
    target: &[f64],
    seeding_weight: f64,
    boundary_weight: f64,
) -> Result<(LossReport, Vec<f64>)> {
    let probs = logits.softmax();
    let seed = seeding_loss(&probs, cues)?;
    let bound = boundary_loss(&probs, target)?;
    let grad_p: Vec<f64> = seed
        .grad
        .iter()
        .zip(&bound.grad)
        .map(|(s, b)| seeding_weight * s + boundary_weight * b)
        .collect();
    let report = LossReport {
        seeding: seed.value,
        boundary: bound.value,
        total: seeding_weight * seed.value + boundary_weight * bound.value,
    };
    Ok((report, softmax_backward(&probs, &grad_p, logits.classes)))
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub logits: LogitsField,
    /// One report per step, evaluated before that step's update.
    pub trace: Vec<LossReport>,
}

/// Plain gradient descent on `L_s + L_c` over a free logits field. The CRF
/// target `Q` is recomputed from the current prediction every `crf_every`
/// steps and held constant in between.
pub fn refine_logits(
    img: &ImageRgb,
    init: &LogitsField,
    cues: &CueSet,
    crf: &CrfParams,
    params: &RefineParams,
    lattice_cutoff: usize,
) -> Result<RefineOutcome> {
    params.validate()?;
    dims_match("image vs logits", img.dims(), (init.height, init.width))?;
    dims_match("image vs cues", img.dims(), cues.dims())?;
    if cues.classes != init.classes {
        return Err(Error::DimensionMismatch(format!(
            "{} cue channels vs {} logit channels",
            cues.classes, init.classes
        )));
    }
    if params.steps == 0 {
        return Ok(RefineOutcome {
            logits: init.clone(),
            trace: Vec::new(),
        });
    }
    if cues.count() == 0 {
        return Err(Error::EmptyCues);
    }
    let engine = DenseCrf::new(img, crf, lattice_cutoff)?;
    let mut logits = init.clone();
    let mut target: Vec<f64> = Vec::new();
    let mut trace = Vec::with_capacity(params.steps);
    for step in 0..params.steps {
        if step % params.crf_every == 0 {
            let q = engine.infer(&logits.probabilities())?;
            target = q.data.iter().map(|&v| v as f64).collect();
        }
        let (report, grad) = objective(
            &logits,
            cues,
            &target,
            params.seeding_weight,
            params.boundary_weight,
        )?;
        for (t, g) in logits.data.iter_mut().zip(&grad) {
            *t -= params.lr * g;
        }
        trace.push(report);
    }
    Ok(RefineOutcome { logits, trace })
}

/// Writes `step,seeding,boundary,total` rows.
pub fn write_trace_csv(trace: &[LossReport], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,seeding,boundary,total")?;
    for (i, r) in trace.iter().enumerate() {
        writeln!(f, "{i},{:.9},{:.9},{:.9}", r.seeding, r.boundary, r.total)?;
    }
    Ok(())
}
