//! Saliency evaluation: class-balanced cross-entropy with its gradient,
//! 256-threshold precision/recall curves, F-measure and MAE.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{load_mask, load_prob_map, quantize_unit, GrayMask, ProbMap, DEFAULT_MASK_THRESHOLD};

pub const DEFAULT_EPSILON: f64 = 1e-7;
pub const DEFAULT_BETA_SQ: f64 = 0.3;
pub const THRESHOLDS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Predictions are clipped to `[epsilon, 1 - epsilon]`.
    pub epsilon: f64,
    /// β² of the F-measure.
    pub beta_sq: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            beta_sq: DEFAULT_BETA_SQ,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "epsilon {} outside (0, 0.5)",
                self.epsilon
            )));
        }
        if !(self.beta_sq > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "beta^2 must be positive, got {}",
                self.beta_sq
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// ∂loss/∂p per pixel, evaluated at the clipped prediction.
    pub grad: Vec<f64>,
    /// Fraction of salient pixels in the ground truth.
    pub alpha: f64,
}

fn check_pair(pred: (usize, usize), gt: (usize, usize)) -> Result<()> {
    if pred != gt {
        return Err(Error::dims(gt, pred));
    }
    Ok(())
}

/// Class-balanced binary cross-entropy summed over pixels:
///
/// ```text
/// L = -Σ_i [(1 - α) g_i log p_i + α (1 - g_i) log(1 - p_i)]
/// ```
///
/// where α is the salient-pixel ratio of `gt`. Salient pixels get weight
/// `1 - α`, background pixels weight `α`.
pub fn weighted_bce(pred: &ProbMap, gt: &GrayMask, cfg: &LossConfig) -> Result<LossOutput> {
    check_pair(pred.dims(), gt.dims())?;
    cfg.validate()?;
    let n = gt.data().len();
    let alpha = gt.salient_count() as f64 / n as f64;
    let (lo, hi) = (cfg.epsilon, 1.0 - cfg.epsilon);
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let p = p.clamp(lo, hi);
        if g == 1 {
            loss -= (1.0 - alpha) * p.ln();
            grad.push(-(1.0 - alpha) / p);
        } else {
            loss -= alpha * (1.0 - p).ln();
            grad.push(alpha / (1.0 - p));
        }
    }
    Ok(LossOutput { loss, grad, alpha })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares the analytic gradient against central finite differences of
/// the loss with step `step`. Pixels whose perturbation would cross a clip
/// bound are skipped.
pub fn gradient_check(pred: &ProbMap, gt: &GrayMask, cfg: &LossConfig, step: f64) -> Result<GradientCheck> {
    let analytic = weighted_bce(pred, gt, cfg)?.grad;
    let (h, w) = pred.dims();
    let mut values = pred.data().to_vec();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    for i in 0..values.len() {
        let p = values[i];
        if p - step < cfg.epsilon || p + step > 1.0 - cfg.epsilon {
            skipped += 1;
            continue;
        }
        values[i] = p + step;
        let plus = weighted_bce(&ProbMap::new(h, w, values.clone())?, gt, cfg)?.loss;
        values[i] = p - step;
        let minus = weighted_bce(&ProbMap::new(h, w, values.clone())?, gt, cfg)?.loss;
        values[i] = p;
        let numeric = (plus - minus) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
        checked += 1;
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        checked,
        skipped,
    })
}

/// Weighted harmonic mean `(1 + β²) P R / (β² P + R)`; 0 when the
/// denominator vanishes.
///
/// Evaluated as `R + R (P − R) / (β² P + R)`, which is algebraically the
/// same but returns exactly `R` whenever `P == R`.
pub fn f_measure(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    let denom = beta_sq * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        recall + recall * (precision - recall) / denom
    }
}

/// Mean absolute difference between a prediction and a binary mask.
pub fn mae(pred: &ProbMap, gt: &GrayMask) -> Result<f64> {
    check_pair(pred.dims(), gt.dims())?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| (p - g as f64).abs())
        .sum();
    Ok(sum / gt.data().len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// TP/FP/FN pooled over all frames before dividing.
    #[default]
    Micro,
    /// Per-frame precision and recall averaged over frames.
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: u8,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub points: Vec<PrPoint>,
}

impl PRCurve {
    /// Highest F-measure and its threshold; ties go to the lowest threshold.
    pub fn max_f(&self) -> (f64, u8) {
        self.points.iter().fold((f64::NEG_INFINITY, 0), |best, p| {
            if p.f_measure > best.0 {
                (p.f_measure, p.threshold)
            } else {
                best
            }
        })
    }
}

/// Per-threshold counts for one frame: `tp[t]`, `fp[t]` for predictions
/// quantized ≥ t, plus the number of salient ground-truth pixels.
struct Counts {
    tp: [u64; THRESHOLDS],
    fp: [u64; THRESHOLDS],
    positives: u64,
}

fn frame_counts(pred: &ProbMap, gt: &GrayMask) -> Counts {
    let mut hist_pos = [0u64; THRESHOLDS];
    let mut hist_neg = [0u64; THRESHOLDS];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let q = quantize_unit(p) as usize;
        if g == 1 {
            hist_pos[q] += 1;
        } else {
            hist_neg[q] += 1;
        }
    }
    let mut tp = [0u64; THRESHOLDS];
    let mut fp = [0u64; THRESHOLDS];
    let (mut acc_p, mut acc_n) = (0, 0);
    for t in (0..THRESHOLDS).rev() {
        acc_p += hist_pos[t];
        acc_n += hist_neg[t];
        tp[t] = acc_p;
        fp[t] = acc_n;
    }
    Counts {
        tp,
        fp,
        positives: acc_p,
    }
}

/// Precision is 1 with no predicted positives; recall is 1 with no
/// ground-truth positives.
fn precision_recall(tp: u64, fp: u64, positives: u64) -> (f64, f64) {
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if positives == 0 {
        1.0
    } else {
        tp as f64 / positives as f64
    };
    (precision, recall)
}

/// Precision/recall at thresholds 0..=255 over a set of frames.
/// Probabilities are quantized by round-half-up of 255·p and a pixel is
/// predicted salient at threshold t iff its quantized value is ≥ t.
pub fn pr_curve(preds: &[ProbMap], gts: &[GrayMask], aggregation: Aggregation, beta_sq: f64) -> Result<PRCurve> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no frames to evaluate".into()));
    }
    if preds.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    for (p, g) in preds.iter().zip(gts) {
        check_pair(p.dims(), g.dims())?;
    }
    let counts: Vec<Counts> = preds.iter().zip(gts).map(|(p, g)| frame_counts(p, g)).collect();

    let points = (0..THRESHOLDS)
        .map(|t| {
            let (precision, recall) = match aggregation {
                Aggregation::Micro => {
                    let tp: u64 = counts.iter().map(|c| c.tp[t]).sum();
                    let fp: u64 = counts.iter().map(|c| c.fp[t]).sum();
                    let pos: u64 = counts.iter().map(|c| c.positives).sum();
                    precision_recall(tp, fp, pos)
                }
                Aggregation::Macro => {
                    let (sp, sr) = counts.iter().fold((0.0, 0.0), |(sp, sr), c| {
                        let (p, r) = precision_recall(c.tp[t], c.fp[t], c.positives);
                        (sp + p, sr + r)
                    });
                    let n = counts.len() as f64;
                    (sp / n, sr / n)
                }
            };
            PrPoint {
                threshold: t as u8,
                precision,
                recall,
                f_measure: f_measure(precision, recall, beta_sq),
            }
        })
        .collect();
    Ok(PRCurve { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub name: String,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub aggregation: Aggregation,
    pub beta_sq: f64,
    pub frames: Vec<FrameScore>,
    pub mean_mae: f64,
    pub max_f_measure: f64,
    pub max_f_threshold: u8,
    pub curve: Vec<PrPoint>,
}

impl EvalReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// `threshold,precision,recall,f_measure` rows, one per threshold.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall,f_measure\n");
        for p in &self.curve {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.threshold, p.precision, p.recall, p.f_measure
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Scores named frames. MAE is averaged over frames in the given order.
pub fn evaluate(
    dataset_id: &str,
    frames: &[(String, ProbMap, GrayMask)],
    aggregation: Aggregation,
    beta_sq: f64,
) -> Result<EvalReport> {
    let mut scores = Vec::with_capacity(frames.len());
    for (name, p, g) in frames {
        scores.push(FrameScore {
            name: name.clone(),
            mae: mae(p, g)?,
        });
    }
    let preds: Vec<ProbMap> = frames.iter().map(|f| f.1.clone()).collect();
    let gts: Vec<GrayMask> = frames.iter().map(|f| f.2.clone()).collect();
    let curve = pr_curve(&preds, &gts, aggregation, beta_sq)?;
    let (max_f, max_t) = curve.max_f();
    let mean_mae = scores.iter().map(|s| s.mae).sum::<f64>() / scores.len() as f64;
    Ok(EvalReport {
        dataset_id: dataset_id.to_string(),
        aggregation,
        beta_sq,
        frames: scores,
        mean_mae,
        max_f_measure: max_f,
        max_f_threshold: max_t,
        curve: curve.points,
    })
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Image files in `dir` keyed by file stem.
pub fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if !path.is_file() || !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
                return Err(Error::Dataset(format!(
                    "duplicate stem {stem}: {} and {}",
                    prev.display(),
                    path.display()
                )));
            }
        }
    }
    Ok(out)
}

/// Evaluates every prediction in `pred_dir` against the ground-truth image
/// with the same stem in `gt_dir`.
pub fn evaluate_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    dataset_id: &str,
    aggregation: Aggregation,
    beta_sq: f64,
) -> Result<EvalReport> {
    let preds = images_by_stem(pred_dir)?;
    let gts = images_by_stem(gt_dir)?;
    let mut frames = Vec::new();
    for (stem, pred_path) in &preds {
        if let Some(gt_path) = gts.get(stem) {
            let p = load_prob_map(pred_path)?;
            let g = load_mask(gt_path, DEFAULT_MASK_THRESHOLD)?;
            frames.push((stem.clone(), p, g));
        }
    }
    if frames.is_empty() {
        return Err(Error::Dataset(format!(
            "no matching stems between {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    evaluate(dataset_id, &frames, aggregation, beta_sq)
}

/// Small (prediction, ground truth) pair exchanged as JSON so other
/// implementations of the loss can be checked against this one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFixture {
    pub height: usize,
    pub width: usize,
    pub pred: Vec<f64>,
    pub gt: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Loss reported by the producer, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

impl LossFixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn maps(&self) -> Result<(ProbMap, GrayMask)> {
        Ok((
            ProbMap::new(self.height, self.width, self.pred.clone())?,
            GrayMask::new(self.height, self.width, self.gt.clone())?,
        ))
    }

    pub fn config(&self) -> LossConfig {
        LossConfig {
            epsilon: self.epsilon.unwrap_or(DEFAULT_EPSILON),
            ..LossConfig::default()
        }
    }
}
