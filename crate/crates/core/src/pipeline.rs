//! File-level workflows behind the command-line tool: dataset evaluation,
//! mask measurement and grading.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grading::{self, ClassificationScores, GradeResult, GradeThresholds, Marsh, Task};
use crate::io::{self, ImageRecord, RatioEntry};
use crate::maskmeasure::measure_masks;
use crate::metrics::{self, Counts, ImageEval, MatchConfig};
use crate::raster::{LabelMap, CRYPT, VILLI};

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub matching: MatchConfig,
    pub thresholds: GradeThresholds,
    /// Directories holding `<id>.pgm` label maps; Dice and IoU are only
    /// reported when both are given.
    pub gt_masks: Option<PathBuf>,
    pub pred_masks: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub gt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountsReport {
    pub villi: ClassCounts,
    pub crypt: ClassCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageRatio {
    pub id: String,
    pub pred: f64,
    pub gt: f64,
}

/// Scores are percentages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub binary: ClassificationScores,
    pub marsh: ClassificationScores,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UnmatchedIds {
    /// Ground-truth images without a prediction record (scored as all
    /// misses).
    pub missing_pred: Vec<String>,
    /// Prediction records without ground truth (ignored).
    pub missing_gt: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub precision_villi: f64,
    pub recall_villi: f64,
    pub ap_villi: f64,
    pub precision_crypt: f64,
    pub recall_crypt: f64,
    pub ap_crypt: f64,
    pub map: f64,
    pub mae_villi: f64,
    pub mre_villi: f64,
    pub mae_crypt: f64,
    pub mre_crypt: f64,
    pub mae_ratio: f64,
    pub mre_ratio: f64,
    pub dice: Option<f64>,
    pub iou: Option<f64>,
    pub grades: Vec<GradeResult>,
    pub classification: Option<ClassificationReport>,
    pub counts: CountsReport,
    pub ratios: Vec<ImageRatio>,
    pub ratio_excluded: usize,
    pub unmatched_ids: UnmatchedIds,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        let v = serde_json::to_value(self)?;
        fn walk(v: &serde_json::Value, path: &str) -> Result<()> {
            match v {
                serde_json::Value::Number(n) if n.as_f64().is_some_and(|f| !f.is_finite()) => {
                    Err(Error::Invariant(format!("non-finite report value at {path}")))
                }
                serde_json::Value::Array(a) => a.iter().enumerate().try_for_each(|(i, x)| walk(x, &format!("{path}[{i}]"))),
                serde_json::Value::Object(o) => o.iter().try_for_each(|(k, x)| walk(x, &format!("{path}.{k}"))),
                _ => Ok(()),
            }
        }
        walk(&v, "report")?;
        for (name, c) in [("villi", &self.counts.villi), ("crypt", &self.counts.crypt)] {
            if c.tp + c.fn_ != c.gt {
                return Err(Error::Invariant(format!("{name}: tp + fn = {} but {} ground-truth polylines", c.tp + c.fn_, c.gt)));
            }
        }
        for p in [self.precision_villi, self.recall_villi, self.precision_crypt, self.recall_crypt] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Invariant(format!("precision/recall {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn index_by_id(records: &[ImageRecord], what: &str) -> Result<BTreeMap<String, usize>> {
    let mut map = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if map.insert(r.image.id.clone(), i).is_some() {
            return Err(Error::Schema {
                record: i,
                path: "image.id".into(),
                message: format!("duplicate {what} image id {:?}", r.image.id),
            });
        }
    }
    Ok(map)
}

fn class_counts(c: &Counts, gt: usize) -> ClassCounts {
    ClassCounts {
        tp: c.tp,
        fp: c.fp,
        fn_: c.fn_,
        gt,
    }
}

fn mask_scores(ids: &[String], gt_dir: &Path, pred_dir: &Path) -> Result<(f64, f64)> {
    let per_image: Vec<(f64, f64)> = ids
        .par_iter()
        .map(|id| -> Result<(f64, f64)> {
            let g = LabelMap::read_pgm(gt_dir.join(format!("{id}.pgm")))?;
            let p = LabelMap::read_pgm(pred_dir.join(format!("{id}.pgm")))?;
            let (dv, iv) = metrics::dice_iou(&p, &g, VILLI)?;
            let (dc, ic) = metrics::dice_iou(&p, &g, CRYPT)?;
            Ok(((dv + dc) / 2.0, (iv + ic) / 2.0))
        })
        .collect::<Result<_>>()?;
    let n = per_image.len().max(1) as f64;
    Ok((
        per_image.iter().map(|s| s.0).sum::<f64>() / n,
        per_image.iter().map(|s| s.1).sum::<f64>() / n,
    ))
}

/// Evaluates predictions against ground truth. Images are reduced in id
/// order, so the report does not depend on record order or thread count.
pub fn run_eval(gt: &[ImageRecord], pred: &[ImageRecord], opts: &EvalOptions) -> Result<EvalReport> {
    opts.matching.validate()?;
    let gt_ids = index_by_id(gt, "ground-truth")?;
    let pred_ids = index_by_id(pred, "prediction")?;
    let unmatched = UnmatchedIds {
        missing_pred: gt_ids.keys().filter(|k| !pred_ids.contains_key(*k)).cloned().collect(),
        missing_gt: pred_ids.keys().filter(|k| !gt_ids.contains_key(*k)).cloned().collect(),
    };
    for id in &unmatched.missing_pred {
        log::warn!("image {id:?} has no prediction record");
    }
    for id in &unmatched.missing_gt {
        log::warn!("prediction for unknown image {id:?} ignored");
    }

    let ids: Vec<String> = gt_ids.keys().cloned().collect();
    let evals: Vec<ImageEval> = ids
        .par_iter()
        .map(|id| -> Result<ImageEval> {
            let g = &gt[gt_ids[id]];
            let gl = g.polylines()?;
            let pl = match pred_ids.get(id) {
                Some(&k) => {
                    let p = &pred[k];
                    if (p.image.width, p.image.height) != (g.image.width, g.image.height) {
                        return Err(Error::Schema {
                            record: k,
                            path: "image".into(),
                            message: format!(
                                "size {}x{} differs from ground truth {}x{}",
                                p.image.width, p.image.height, g.image.width, g.image.height
                            ),
                        });
                    }
                    p.polylines()?
                }
                None => Vec::new(),
            };
            metrics::evaluate_image(id, g.image.width, g.image.height, &pl, &gl, &opts.matching)
        })
        .collect::<Result<_>>()?;

    let det = metrics::detection_summary(&evals);
    let errs = metrics::measurement_errors(&evals);

    let mut grades = Vec::new();
    let mut ratios = Vec::new();
    let (mut pred_grades, mut true_grades) = (Vec::new(), Vec::new());
    for ev in &evals {
        if let Some((p, g)) = ev.matched_ratio() {
            ratios.push(ImageRatio { id: ev.id.clone(), pred: p, gt: g });
            let res = grading::grade(&ev.id, p, &opts.thresholds)?;
            if let Some(truth) = ev.gt_ratio {
                pred_grades.push(res.marsh);
                true_grades.push(grading::marsh_grade(truth, &opts.thresholds)?);
            }
            grades.push(res);
        }
    }
    let classification = if pred_grades.is_empty() {
        None
    } else {
        Some(ClassificationReport {
            binary: grading::classification_scores(&pred_grades, &true_grades, Task::Binary)?.percent(),
            marsh: grading::classification_scores(&pred_grades, &true_grades, Task::Marsh)?.percent(),
        })
    };

    let (dice, iou) = match (&opts.gt_masks, &opts.pred_masks) {
        (Some(g), Some(p)) => {
            let (d, i) = mask_scores(&ids, g, p)?;
            (Some(d), Some(i))
        }
        _ => (None, None),
    };

    let report = EvalReport {
        precision_villi: det.villi.precision,
        recall_villi: det.villi.recall,
        ap_villi: det.villi.ap,
        precision_crypt: det.crypt.precision,
        recall_crypt: det.crypt.recall,
        ap_crypt: det.crypt.ap,
        map: det.map,
        mae_villi: errs.villi.mae,
        mre_villi: errs.villi.mre,
        mae_crypt: errs.crypt.mae,
        mre_crypt: errs.crypt.mre,
        mae_ratio: errs.ratio.mae,
        mre_ratio: errs.ratio.mre,
        dice,
        iou,
        grades,
        classification,
        counts: CountsReport {
            villi: class_counts(&det.villi.counts, det.villi.gt_total),
            crypt: class_counts(&det.crypt.counts, det.crypt.gt_total),
        },
        ratios,
        ratio_excluded: errs.ratio_excluded,
        unmatched_ids: unmatched,
    };
    report.check()?;
    Ok(report)
}

pub fn run_eval_files(gt: impl AsRef<Path>, pred: impl AsRef<Path>, opts: &EvalOptions) -> Result<EvalReport> {
    let g = io::parse_records(gt)?;
    let p = io::parse_records(pred)?;
    run_eval(&g.records, &p.records, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskReport {
    pub file: String,
    pub villi_lengths: Vec<f64>,
    pub crypt_lengths: Vec<f64>,
    pub mean_crypt_depth: Option<f64>,
    pub ratio: Option<f64>,
    pub grade: Option<Marsh>,
}

pub fn measure_mask_report(file: &str, m: &LabelMap, min_area: usize, t: &GradeThresholds) -> MaskReport {
    let meas = measure_masks(m, min_area);
    let ratio = meas.ratio();
    let grade = meas.grade(t);
    MaskReport {
        file: file.to_string(),
        villi_lengths: meas.villi_lengths,
        crypt_lengths: meas.crypt_lengths,
        mean_crypt_depth: meas.mean_crypt_depth,
        ratio,
        grade,
    }
}

/// Measures each label map; output order follows the input order.
pub fn run_measure_mask(paths: &[PathBuf], min_area: usize, t: &GradeThresholds) -> Result<Vec<MaskReport>> {
    paths
        .par_iter()
        .map(|p| {
            let m = LabelMap::read_pgm(p).map_err(|e| match e {
                Error::Parse(msg) => Error::Parse(format!("{}: {msg}", p.display())),
                other => other,
            })?;
            Ok(measure_mask_report(&p.display().to_string(), &m, min_area, t))
        })
        .collect()
}

/// Grades a ratio list.
pub fn grade_ratios(entries: &[RatioEntry], t: &GradeThresholds) -> Result<Vec<GradeResult>> {
    entries.iter().map(|e| grading::grade(&e.id, e.vd_cd, t)).collect()
}

/// Re-grades the per-image predicted ratios of a saved evaluation report.
pub fn grade_report(text: &str, t: &GradeThresholds) -> Result<Vec<GradeResult>> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse(format!("report: {e}")))?;
    let items = v
        .get("grades")
        .and_then(|g| g.as_array())
        .ok_or_else(|| Error::Schema {
            record: 0,
            path: "grades".into(),
            message: "missing grade list".into(),
        })?;
    let entries = items
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let err = |path: &str| Error::Schema {
                record: i,
                path: format!("grades[{i}].{path}"),
                message: "missing or wrong type".into(),
            };
            Ok(RatioEntry {
                id: g.get("id").and_then(|x| x.as_str()).ok_or_else(|| err("id"))?.to_string(),
                vd_cd: g.get("vd_cd").and_then(|x| x.as_f64()).ok_or_else(|| err("vd_cd"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    grade_ratios(&entries, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn noiseless_cohort_is_perfect() {
        let out = generate(&SynthConfig { n_images: 8, seed: 2, ..Default::default() }).unwrap();
        let r = run_eval(&out.gt, &out.pred, &EvalOptions::default()).unwrap();
        for v in [r.precision_villi, r.recall_villi, r.precision_crypt, r.recall_crypt, r.map] {
            assert_eq!(v, 1.0);
        }
        for v in [r.mae_villi, r.mre_villi, r.mae_crypt, r.mre_crypt, r.mae_ratio, r.mre_ratio] {
            assert_eq!(v, 0.0);
        }
        assert_eq!(r.classification.unwrap().marsh.accuracy, 100.0);
        assert_eq!(r.grades.len(), 8);
        assert!(r.dice.is_none());
    }

    #[test]
    fn report_is_order_independent() {
        let out = generate(&SynthConfig { n_images: 6, noise_sigma: 3.0, drop_rate: 0.2, spurious_rate: 1.0, ..Default::default() }).unwrap();
        let a = run_eval(&out.gt, &out.pred, &EvalOptions::default()).unwrap();
        let mut gt = out.gt.clone();
        let mut pred = out.pred.clone();
        gt.reverse();
        pred.rotate_left(2);
        let b = run_eval(&gt, &pred, &EvalOptions::default()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn field_order_and_unmatched_ids() {
        let out = generate(&SynthConfig { n_images: 3, ..Default::default() }).unwrap();
        let r = run_eval(&out.gt, &out.pred[1..], &EvalOptions::default()).unwrap();
        assert_eq!(r.unmatched_ids.missing_pred, vec!["img0000".to_string()]);
        let json = r.to_json().unwrap();
        let keys = [
            "precision_villi", "recall_villi", "ap_villi", "precision_crypt", "recall_crypt", "ap_crypt", "map",
            "mae_villi", "mre_villi", "mae_crypt", "mre_crypt", "mae_ratio", "mre_ratio", "dice", "iou",
            "grades", "classification",
        ];
        let pos: Vec<usize> = keys.iter().map(|k| json.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let out = generate(&SynthConfig { n_images: 1, ..Default::default() }).unwrap();
        let gt = [out.gt[0].clone(), out.gt[0].clone()];
        assert_eq!(run_eval(&gt, &out.pred, &EvalOptions::default()).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn mask_fixture_report() {
        let mut m = LabelMap::empty(80, 20).unwrap();
        for x in 10..60 {
            m.paint(x, 5, VILLI);
        }
        for x in 10..35 {
            m.paint(x, 12, CRYPT);
        }
        let r = measure_mask_report("f", &m, 20, &GradeThresholds::default());
        assert_eq!(r.villi_lengths, vec![49.0]);
        assert_eq!(r.crypt_lengths, vec![24.0]);
        assert!((r.ratio.unwrap() - 49.0 / 24.0).abs() < 1e-12);
        assert_eq!(r.grade, Some(Marsh::Marsh1));

        let empty = measure_mask_report("e", &LabelMap::empty(5, 5).unwrap(), 20, &GradeThresholds::default());
        let json = serde_json::to_string(&empty).unwrap();
        assert!(json.contains("\"ratio\":null") && json.contains("\"grade\":null"), "{json}");
    }

    #[test]
    fn grade_from_report_and_ratios() {
        let out = generate(&SynthConfig { n_images: 4, ..Default::default() }).unwrap();
        let r = run_eval(&out.gt, &out.pred, &EvalOptions::default()).unwrap();
        let again = grade_report(&r.to_json().unwrap(), &GradeThresholds::default()).unwrap();
        assert_eq!(again, r.grades);
        let g = grade_ratios(&io::parse_ratios_str("[3.5, 2.0, 1.0, 0.5]").unwrap(), &GradeThresholds::default()).unwrap();
        let m: Vec<Marsh> = g.iter().map(|x| x.marsh).collect();
        assert_eq!(m, vec![Marsh::Normal, Marsh::Marsh1, Marsh::Marsh2, Marsh::Marsh3]);
    }
}
