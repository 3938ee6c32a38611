//! Confusion-matrix segmentation metrics and multi-label classification scores.

use crate::cues::BACKGROUND;
use crate::error::{dims_match, Error, Result};
use crate::imagery::{CueSet, LabelMask, IGNORE_LABEL};

pub const VOC_CLASSES: [&str; 21] = [
    "background",
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

/// Name for class `c`: the VOC name when `classes == 21`, else `class<c>`.
pub fn class_name(c: usize, classes: usize) -> String {
    if classes == VOC_CLASSES.len() {
        VOC_CLASSES[c].to_string()
    } else {
        format!("class{c}")
    }
}

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::LengthMismatch(counts.len(), classes * classes));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Tallies `cm[gt, pred]` for every pixel whose ground truth is not ignored.
    pub fn accumulate(&mut self, gt: &LabelMask, pred: &LabelMask) -> Result<()> {
        dims_match("ground truth vs prediction", gt.dims(), pred.dims())?;
        if let Some(i) = pred.data.iter().position(|&p| p == IGNORE_LABEL) {
            return Err(Error::IgnoreInPrediction(i));
        }
        // Validate before touching the counts so a bad pair leaves them unchanged.
        for (&g, &p) in gt.data.iter().zip(&pred.data) {
            if g == IGNORE_LABEL {
                continue;
            }
            for c in [g, p] {
                if c as usize >= self.classes {
                    return Err(Error::ClassOutOfRange {
                        class: c as usize,
                        classes: self.classes,
                    });
                }
            }
        }
        for (&g, &p) in gt.data.iter().zip(&pred.data) {
            if g != IGNORE_LABEL {
                self.counts[g as usize * self.classes + p as usize] += 1;
            }
        }
        Ok(())
    }

    /// Adds another matrix's counts (per-worker partials).
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::LengthMismatch(other.classes, self.classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// `(tp, union)` per class, with `union = row + col - tp`.
    fn iou_fractions(&self) -> Vec<(u64, u64)> {
        let k = self.classes;
        (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..k).map(|p| self.get(c, p)).sum();
                let col: u64 = (0..k).map(|g| self.get(g, c)).sum();
                (tp, row + col - tp)
            })
            .collect()
    }

    /// `IoU_c = tp / (row + col - tp)`; `None` where the class never occurs
    /// in either ground truth or prediction.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        self.iou_fractions()
            .into_iter()
            .map(|(tp, union)| (union > 0).then(|| tp as f64 / union as f64))
            .collect()
    }

    /// Mean IoU over `subset` (all classes when `None`), skipping undefined classes.
    pub fn miou(&self, subset: Option<&[usize]>) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::EmptyMatrix);
        }
        let fractions = self.iou_fractions();
        let all: Vec<usize> = (0..self.classes).collect();
        let defined: Vec<(u64, u64)> = subset
            .unwrap_or(&all)
            .iter()
            .filter_map(|&c| fractions.get(c).copied())
            .filter(|&(_, union)| union > 0)
            .collect();
        if defined.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        Ok(mean_of_fractions(&defined))
    }

    /// Mean IoU over classes `1..K`.
    pub fn foreground_miou(&self) -> Result<f64> {
        let fg: Vec<usize> = (1..self.classes).collect();
        self.miou(Some(&fg))
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean of `num / den` terms. Summed as a reduced rational so the result is
/// the correctly rounded mean; falls back to floating point on overflow.
fn mean_of_fractions(terms: &[(u64, u64)]) -> f64 {
    let exact = terms.iter().try_fold((0u128, 1u128), |(n, d), &(a, b)| {
        let (a, b) = (a as u128, b as u128);
        let num = n.checked_mul(b)?.checked_add(a.checked_mul(d)?)?;
        let den = d.checked_mul(b)?;
        let g = gcd(num, den).max(1);
        Some((num / g, den / g))
    });
    const LIMIT: u128 = 1 << 53;
    if let Some((n, d)) = exact {
        if let Some(d) = d.checked_mul(terms.len() as u128) {
            let g = gcd(n, d).max(1);
            let (n, d) = (n / g, d / g);
            if n < LIMIT && d < LIMIT {
                return n as f64 / d as f64;
            }
        }
    }
    terms.iter().map(|&(a, b)| a as f64 / b as f64).sum::<f64>() / terms.len() as f64
}

/// Collapses a cue set to a single-label mask: lowest set foreground class,
/// otherwise background (which also covers unknown pixels).
pub fn cues_to_mask(cues: &CueSet) -> LabelMask {
    let n = cues.pixel_count();
    let data = (0..n)
        .map(|i| {
            (1..cues.classes)
                .find(|&k| cues.get(k, i))
                .unwrap_or(BACKGROUND) as u8
        })
        .collect();
    LabelMask {
        height: cues.height,
        width: cues.width,
        data,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultilabelScores {
    pub accuracy: f64,
    /// `NaN` when no image has any true class.
    pub recall: f64,
}

/// Micro-averaged accuracy and recall over every (image, foreground class)
/// decision for classes `1..classes`.
pub fn multilabel_scores(
    pred_sets: &[Vec<usize>],
    true_sets: &[Vec<usize>],
    classes: usize,
) -> Result<MultilabelScores> {
    if pred_sets.len() != true_sets.len() {
        return Err(Error::LengthMismatch(pred_sets.len(), true_sets.len()));
    }
    let (mut correct, mut total, mut tp, mut fneg) = (0u64, 0u64, 0u64, 0u64);
    for (pred, truth) in pred_sets.iter().zip(true_sets) {
        for c in 1..classes {
            let p = pred.contains(&c);
            let t = truth.contains(&c);
            total += 1;
            correct += (p == t) as u64;
            tp += (p && t) as u64;
            fneg += (!p && t) as u64;
        }
    }
    Ok(MultilabelScores {
        accuracy: if total == 0 { f64::NAN } else { correct as f64 / total as f64 },
        recall: if tp + fneg == 0 { f64::NAN } else { tp as f64 / (tp + fneg) as f64 },
    })
}

/// Aligned `class  IoU` table followed by the mIoU line.
pub fn format_iou_table(cm: &ConfusionMatrix) -> String {
    let k = cm.classes();
    let names: Vec<String> = (0..k).map(|c| class_name(c, k)).collect();
    let width = names.iter().map(String::len).max().unwrap_or(5).max(5);
    let mut out = String::new();
    for (name, iou) in names.iter().zip(cm.iou_per_class()) {
        let v = iou.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0));
        out.push_str(&format!("{name:<width$}  {v:>6}\n"));
    }
    let miou = cm.miou(None).map_or_else(|_| "-".into(), |v| format!("{:.2}", v * 100.0));
    out.push_str(&format!("{:<width$}  {miou:>6}\n", "mIoU"));
    out
}

/// `class,iou` CSV rows with a trailing `mIoU` row; undefined IoUs are empty.
pub fn format_iou_csv(cm: &ConfusionMatrix) -> String {
    let k = cm.classes();
    let mut out = String::from("class,iou\n");
    for (c, iou) in cm.iou_per_class().into_iter().enumerate() {
        let v = iou.map_or_else(String::new, |v| format!("{v:.6}"));
        out.push_str(&format!("{},{v}\n", class_name(c, k)));
    }
    let miou = cm.miou(None).map_or_else(|_| String::new(), |v| format!("{v:.6}"));
    out.push_str(&format!("mIoU,{miou}\n"));
    out
}
