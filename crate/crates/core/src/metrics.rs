//! Detection metrics (precision, recall, AP), measurement errors and mask
//! overlap scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{distance, normalize_polyline, ClassLabel, DistanceKind, Polyline, ResamplePolicy};
use crate::raster::LabelMap;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Maximum (exclusive) distance on [0, 1]-normalised coordinates.
    pub chamfer_threshold: f64,
    /// Predictions below this confidence are ignored for precision/recall
    /// and measurement errors (not for AP).
    pub confidence_threshold: f64,
    pub distance: DistanceKind,
    /// Used by the earth mover distance when point counts differ.
    pub resample: ResamplePolicy,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            chamfer_threshold: 0.05,
            confidence_threshold: 0.5,
            distance: DistanceKind::ChamferSquared,
            resample: ResamplePolicy::DuplicateEndpoint,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("chamfer threshold", self.chamfer_threshold),
            ("confidence threshold", self.confidence_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub distance: f64,
}

/// Outcome of matching one image. Pairs appear in matching order, the
/// unmatched index lists are ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageMatches {
    pub pairs: Vec<MatchPair>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

/// Greedy one-to-one matching: predictions in descending confidence (ties
/// by index) each take the nearest unmatched same-class ground truth whose
/// distance is below the threshold (ties by ground-truth index).
pub fn match_image<T: Scalar>(preds: &[Polyline<T>], gts: &[Polyline<T>], cfg: &MatchConfig) -> Result<ImageMatches> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .partial_cmp(&preds[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut taken = vec![false; gts.len()];
    let mut out = ImageMatches::default();
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.class != preds[p].class {
                continue;
            }
            let d = distance(&preds[p], gt, cfg.distance, cfg.resample)?.to_f64_lossy();
            if d < cfg.chamfer_threshold && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((g, d));
            }
        }
        match best {
            Some((g, d)) => {
                taken[g] = true;
                out.pairs.push(MatchPair { pred: p, gt: g, distance: d });
            }
            None => out.false_positives.push(p),
        }
    }
    out.false_positives.sort_unstable();
    out.false_negatives = (0..gts.len()).filter(|&g| !taken[g]).collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, o: &Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// `(precision, recall)`, each 0 when its denominator is 0.
pub fn precision_recall(c: &Counts) -> (f64, f64) {
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    (ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_))
}

/// One ranked detection for the AP sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedHit {
    pub confidence: f64,
    pub true_positive: bool,
}

/// All-point interpolated AP. Hits are ranked by confidence, ties keep
/// their input order. `None` when there is neither ground truth nor a
/// prediction.
pub fn average_precision(hits: &[RankedHit], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return if hits.is_empty() { None } else { Some(0.0) };
    }
    let mut ranked = hits.to_vec();
    ranked.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap_or(std::cmp::Ordering::Equal));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(ranked.len());
    for h in &ranked {
        if h.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut envelope = 0.0f64;
    for i in (0..curve.len()).rev() {
        envelope = envelope.max(curve[i].1);
        curve[i].1 = envelope;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in curve {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    Some(ap)
}

/// Mean over the classes that have an AP.
pub fn mean_ap(aps: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = aps.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Length pair (pixels) of one matched prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LengthPair {
    pub class: ClassLabel,
    pub pred: f64,
    pub gt: f64,
}

/// Everything the dataset reduction needs from one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub id: String,
    pub counts: [Counts; 2],
    pub gt_total: [usize; 2],
    pub hits: [Vec<RankedHit>; 2],
    pub pairs: Vec<LengthPair>,
    /// Ratio of all ground-truth polylines in the image.
    pub gt_ratio: Option<f64>,
}

impl ImageEval {
    /// `(predicted, ground truth)` mean villi over mean crypt length using
    /// matched pairs only.
    pub fn matched_ratio(&self) -> Option<(f64, f64)> {
        let means = |class: ClassLabel| -> Option<(f64, f64)> {
            let sel: Vec<&LengthPair> = self.pairs.iter().filter(|p| p.class == class).collect();
            if sel.is_empty() {
                return None;
            }
            let n = sel.len() as f64;
            Some((
                sel.iter().map(|p| p.pred).sum::<f64>() / n,
                sel.iter().map(|p| p.gt).sum::<f64>() / n,
            ))
        };
        let (pv, gv) = means(ClassLabel::Villi)?;
        let (pc, gc) = means(ClassLabel::Crypt)?;
        (pc > 0.0 && gc > 0.0).then(|| (pv / pc, gv / gc))
    }
}

/// Mean villi length over mean crypt length of a polyline set.
pub fn length_ratio(lines: &[Polyline<f64>]) -> Option<f64> {
    let mean = |class| {
        let l: Vec<f64> = lines.iter().filter(|p| p.class == class).map(|p| p.length()).collect();
        (!l.is_empty()).then(|| l.iter().sum::<f64>() / l.len() as f64)
    };
    let (v, c) = (mean(ClassLabel::Villi)?, mean(ClassLabel::Crypt)?);
    (c > 0.0).then(|| v / c)
}

/// Matches one image in pixel coordinates (normalised internally by the
/// image size).
pub fn evaluate_image(
    id: &str,
    width: u32,
    height: u32,
    preds: &[Polyline<f64>],
    gts: &[Polyline<f64>],
    cfg: &MatchConfig,
) -> Result<ImageEval> {
    let norm = |v: &[Polyline<f64>]| -> Result<Vec<Polyline<f64>>> {
        v.iter().map(|p| normalize_polyline(p, width, height).map(|r| r.0)).collect()
    };
    let (np, ng) = (norm(preds)?, norm(gts)?);

    let mut gt_total = [0; 2];
    for g in gts {
        gt_total[g.class.index()] += 1;
    }

    let all = match_image(&np, &ng, cfg)?;
    let mut hits: [Vec<RankedHit>; 2] = Default::default();
    let mut is_tp = vec![false; np.len()];
    for m in &all.pairs {
        is_tp[m.pred] = true;
    }
    let mut rank: Vec<usize> = (0..np.len()).collect();
    rank.sort_by(|&a, &b| np[b].confidence.partial_cmp(&np[a].confidence).unwrap().then(a.cmp(&b)));
    for i in rank {
        hits[np[i].class.index()].push(RankedHit {
            confidence: np[i].confidence,
            true_positive: is_tp[i],
        });
    }

    let kept: Vec<usize> = (0..np.len())
        .filter(|&i| np[i].confidence >= cfg.confidence_threshold)
        .collect();
    let kept_lines: Vec<Polyline<f64>> = kept.iter().map(|&i| np[i].clone()).collect();
    let m = match_image(&kept_lines, &ng, cfg)?;
    let mut counts = [Counts::default(); 2];
    let mut pairs = Vec::with_capacity(m.pairs.len());
    for p in &m.pairs {
        let class = ng[p.gt].class;
        counts[class.index()].tp += 1;
        pairs.push((
            p.gt,
            LengthPair {
                class,
                pred: preds[kept[p.pred]].length(),
                gt: gts[p.gt].length(),
            },
        ));
    }
    for &f in &m.false_positives {
        counts[kept_lines[f].class.index()].fp += 1;
    }
    for &f in &m.false_negatives {
        counts[ng[f].class.index()].fn_ += 1;
    }
    // ground-truth order keeps the summation order independent of ranking
    pairs.sort_by_key(|&(g, _)| g);
    let pairs = pairs.into_iter().map(|(_, p)| p).collect();

    Ok(ImageEval {
        id: id.to_string(),
        counts,
        gt_total,
        hits,
        pairs,
        gt_ratio: length_ratio(gts),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ErrorStats {
    pub mae: f64,
    /// Percent.
    pub mre: f64,
    pub n: usize,
}

/// MAE and MRE (x100) over `(pred, truth)` pairs in the given order. Pairs
/// with a zero truth value are left out of the MRE mean.
pub fn error_stats(pairs: impl IntoIterator<Item = (f64, f64)>) -> ErrorStats {
    let (mut abs, mut rel, mut n, mut n_rel) = (0.0, 0.0, 0usize, 0usize);
    for (p, t) in pairs {
        let d = (p - t).abs();
        abs += d;
        n += 1;
        if t != 0.0 {
            rel += d / t.abs();
            n_rel += 1;
        }
    }
    ErrorStats {
        mae: if n == 0 { 0.0 } else { abs / n as f64 },
        mre: if n_rel == 0 { 0.0 } else { 100.0 * rel / n_rel as f64 },
        n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementErrors {
    pub villi: ErrorStats,
    pub crypt: ErrorStats,
    pub ratio: ErrorStats,
    /// Images without a matched pair of both classes.
    pub ratio_excluded: usize,
}

/// Length and ratio errors over images in the given order.
pub fn measurement_errors(images: &[ImageEval]) -> MeasurementErrors {
    let class_pairs = |class: ClassLabel| {
        images
            .iter()
            .flat_map(|im| im.pairs.iter())
            .filter(move |p| p.class == class)
            .map(|p| (p.pred, p.gt))
    };
    let ratios: Vec<Option<(f64, f64)>> = images.iter().map(ImageEval::matched_ratio).collect();
    MeasurementErrors {
        villi: error_stats(class_pairs(ClassLabel::Villi)),
        crypt: error_stats(class_pairs(ClassLabel::Crypt)),
        ratio: error_stats(ratios.iter().flatten().copied()),
        ratio_excluded: ratios.iter().filter(|r| r.is_none()).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassDetection {
    pub precision: f64,
    pub recall: f64,
    pub ap: f64,
    pub counts: Counts,
    pub gt_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionSummary {
    pub villi: ClassDetection,
    pub crypt: ClassDetection,
    pub map: f64,
}

pub fn detection_summary(images: &[ImageEval]) -> DetectionSummary {
    let mut per = Vec::new();
    let mut aps = Vec::new();
    for class in ClassLabel::ALL {
        let k = class.index();
        let mut counts = Counts::default();
        let mut gt_total = 0;
        let mut hits = Vec::new();
        for im in images {
            counts.add(&im.counts[k]);
            gt_total += im.gt_total[k];
            hits.extend_from_slice(&im.hits[k]);
        }
        let (precision, recall) = precision_recall(&counts);
        let ap = average_precision(&hits, gt_total);
        aps.push(ap);
        per.push(ClassDetection {
            precision,
            recall,
            ap: ap.unwrap_or(0.0),
            counts,
            gt_total,
        });
    }
    DetectionSummary {
        villi: per[0],
        crypt: per[1],
        map: mean_ap(&aps),
    }
}

/// Dice and IoU of one label; both 1 when the label is absent from both maps.
pub fn dice_iou(pred: &LabelMap, gt: &LabelMap, label: u8) -> Result<(f64, f64)> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} prediction vs {}x{} ground truth",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.raster().data().iter().zip(gt.raster().data()) {
        let (p, g) = (p == label, g == label);
        a += p as usize;
        b += g as usize;
        inter += (p && g) as usize;
    }
    if a + b == 0 {
        return Ok((1.0, 1.0));
    }
    let union = a + b - inter;
    Ok((2.0 * inter as f64 / (a + b) as f64, inter as f64 / union as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::VILLI;
    use proptest::prelude::*;

    fn line(x0: f64, y0: f64, x1: f64, y1: f64, class: ClassLabel, conf: f64) -> Polyline<f64> {
        Polyline::with_confidence(
            vec![crate::Point::new(x0, y0), crate::Point::new(x1, y1)],
            class,
            conf,
        )
        .unwrap()
    }

    #[test]
    fn match_examples() {
        let cfg = MatchConfig::default();
        let gts = vec![
            line(0.1, 0.1, 0.3, 0.1, ClassLabel::Villi, 1.0),
            line(0.5, 0.5, 0.5, 0.8, ClassLabel::Crypt, 1.0),
        ];
        let m = match_image(&gts, &gts, &cfg).unwrap();
        assert_eq!(m.pairs.len(), 2);
        assert!(m.false_positives.is_empty() && m.false_negatives.is_empty());

        let one = &gts[..1];
        let preds = vec![
            line(0.1, 0.1, 0.3, 0.1, ClassLabel::Villi, 0.9),
            line(0.1, 0.101, 0.3, 0.101, ClassLabel::Villi, 0.8),
        ];
        let m = match_image(&preds, one, &cfg).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].pred, 0);
        assert_eq!(m.false_positives, vec![1]);

        // chamfer 0.06: each endpoint offset so both directions give 0.03
        let off = 0.03f64.sqrt();
        let far = vec![line(0.1, 0.1 + off, 0.3, 0.1 + off, ClassLabel::Villi, 0.9)];
        let d = distance(&far[0], &one[0], DistanceKind::ChamferSquared, ResamplePolicy::Midpoint).unwrap();
        assert!((d - 0.06).abs() < 1e-12);
        let m = match_image(&far, one, &cfg).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!((m.false_positives.len(), m.false_negatives.len()), (1, 1));
    }

    #[test]
    fn class_separation() {
        let gts = vec![line(0.1, 0.1, 0.3, 0.1, ClassLabel::Villi, 1.0)];
        let preds = vec![line(0.1, 0.1, 0.3, 0.1, ClassLabel::Crypt, 1.0)];
        let m = match_image(&preds, &gts, &MatchConfig::default()).unwrap();
        assert!(m.pairs.is_empty());
    }

    #[test]
    fn precision_recall_examples() {
        assert_eq!(precision_recall(&Counts { tp: 3, fp: 0, fn_: 0 }), (1.0, 1.0));
        assert_eq!(precision_recall(&Counts { tp: 1, fp: 1, fn_: 1 }), (0.5, 0.5));
        assert_eq!(precision_recall(&Counts { tp: 0, fp: 0, fn_: 4 }), (0.0, 0.0));
    }

    #[test]
    fn ap_examples() {
        let hit = |c, t| RankedHit { confidence: c, true_positive: t };
        assert_eq!(average_precision(&[hit(0.9, true), hit(0.8, true)], 2), Some(1.0));
        assert_eq!(average_precision(&[hit(0.9, false), hit(0.8, true)], 1), Some(0.5));
        assert_eq!(average_precision(&[], 0), None);
        assert_eq!(average_precision(&[], 3), Some(0.0));
        assert_eq!(mean_ap(&[Some(0.5), None]), 0.5);
        // envelope: precisions 1, 0.5, 2/3 at recalls 1/3, 1/3, 2/3
        let ap = average_precision(&[hit(0.9, true), hit(0.8, false), hit(0.7, true)], 3).unwrap();
        assert!((ap - (1.0 / 3.0 + (1.0 / 3.0) * (2.0 / 3.0))).abs() < 1e-12);
    }

    #[test]
    fn measurement_examples() {
        let im = |pairs: Vec<LengthPair>| ImageEval {
            id: "a".into(),
            counts: Default::default(),
            gt_total: [0; 2],
            hits: Default::default(),
            pairs,
            gt_ratio: None,
        };
        let e = measurement_errors(&[im(vec![LengthPair { class: ClassLabel::Villi, pred: 8.0, gt: 10.0 }])]);
        assert_eq!((e.villi.mae, e.villi.mre), (2.0, 20.0));
        assert_eq!(e.ratio_excluded, 1);

        // GT ratio 2.0, predicted 1.5
        let e = measurement_errors(&[im(vec![
            LengthPair { class: ClassLabel::Villi, pred: 15.0, gt: 20.0 },
            LengthPair { class: ClassLabel::Crypt, pred: 10.0, gt: 10.0 },
        ])]);
        assert_eq!((e.ratio.mae, e.ratio.mre), (0.5, 25.0));
        assert_eq!(e.ratio_excluded, 0);

        let perfect = measurement_errors(&[im(vec![LengthPair { class: ClassLabel::Crypt, pred: 4.0, gt: 4.0 }])]);
        assert_eq!((perfect.crypt.mae, perfect.crypt.mre), (0.0, 0.0));
    }

    #[test]
    fn evaluate_image_perfect() {
        let gts = vec![
            line(10.0, 10.0, 60.0, 12.0, ClassLabel::Villi, 1.0),
            line(100.0, 300.0, 110.0, 330.0, ClassLabel::Crypt, 1.0),
        ];
        let ev = evaluate_image("x", 640, 640, &gts, &gts, &MatchConfig::default()).unwrap();
        let s = detection_summary(std::slice::from_ref(&ev));
        assert_eq!((s.villi.precision, s.villi.recall, s.map), (1.0, 1.0, 1.0));
        let (p, g) = ev.matched_ratio().unwrap();
        assert_eq!(p, g);
        assert_eq!(ev.gt_ratio, Some(g));
        let e = measurement_errors(&[ev]);
        assert_eq!(e.villi.mae + e.crypt.mae + e.ratio.mae, 0.0);
    }

    #[test]
    fn confidence_cutoff_applies_to_pr_not_ap() {
        let gts = vec![line(10.0, 10.0, 60.0, 12.0, ClassLabel::Villi, 1.0)];
        let preds = vec![line(10.0, 10.0, 60.0, 12.0, ClassLabel::Villi, 0.3)];
        let ev = evaluate_image("x", 640, 640, &preds, &gts, &MatchConfig::default()).unwrap();
        let s = detection_summary(&[ev]);
        assert_eq!(s.villi.recall, 0.0);
        assert_eq!(s.villi.ap, 1.0);
    }

    #[test]
    fn dice_iou_examples() {
        let mk = |on: &[usize]| {
            let mut v = vec![0u8; 16];
            for &i in on {
                v[i] = VILLI;
            }
            LabelMap::new(4, 4, v).unwrap()
        };
        let a = mk(&[0, 1, 2, 3]);
        assert_eq!(dice_iou(&a, &a, VILLI).unwrap(), (1.0, 1.0));
        assert_eq!(dice_iou(&a, &mk(&[8, 9]), VILLI).unwrap(), (0.0, 0.0));
        let (d, i) = dice_iou(&a, &mk(&[2, 3, 4, 5]), VILLI).unwrap();
        assert_eq!(d, 0.5);
        assert!((i - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice_iou(&mk(&[]), &mk(&[]), VILLI).unwrap(), (1.0, 1.0));
        assert!(dice_iou(&a, &LabelMap::empty(3, 4).unwrap(), VILLI).is_err());
    }

    proptest! {
        #[test]
        fn dice_iou_relation(a in prop::collection::vec(0u8..2, 25), b in prop::collection::vec(0u8..2, 25)) {
            let (d, i) = dice_iou(&LabelMap::new(5, 5, a).unwrap(), &LabelMap::new(5, 5, b).unwrap(), 1).unwrap();
            prop_assert!(d >= i);
            prop_assert!((d - 2.0 * i / (1.0 + i)).abs() < 1e-12);
        }

        #[test]
        fn shuffling_equal_confidence_keeps_counts(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..0.05, prop::bool::ANY), 1..8),
            rot in 0usize..8,
        ) {
            let lines: Vec<Polyline<f64>> = pts
                .iter()
                .map(|&(x, y, dx, v)| line(x, y, (x + 0.1).min(1.0), (y + dx).min(1.0), if v { ClassLabel::Villi } else { ClassLabel::Crypt }, 0.7))
                .collect();
            let mut shuffled = lines.clone();
            shuffled.rotate_left(rot % lines.len());
            let cfg = MatchConfig::default();
            let a = match_image(&lines, &lines, &cfg).unwrap();
            let b = match_image(&shuffled, &lines, &cfg).unwrap();
            prop_assert_eq!(a.pairs.len(), b.pairs.len());
            prop_assert_eq!(a.false_positives.len(), b.false_positives.len());
            prop_assert_eq!(a.false_negatives.len(), b.false_negatives.len());
        }

        #[test]
        fn one_to_one(n_p in 0usize..6, n_g in 0usize..6, jitter in 0.0f64..0.01) {
            let preds: Vec<_> = (0..n_p).map(|i| line(0.2, 0.2 + jitter * i as f64, 0.4, 0.2, ClassLabel::Villi, 0.9)).collect();
            let gts: Vec<_> = (0..n_g).map(|_| line(0.2, 0.2, 0.4, 0.2, ClassLabel::Villi, 1.0)).collect();
            let m = match_image(&preds, &gts, &MatchConfig::default()).unwrap();
            prop_assert!(m.pairs.len() <= n_p.min(n_g));
            prop_assert_eq!(m.pairs.len() + m.false_negatives.len(), n_g);
            prop_assert_eq!(m.pairs.len() + m.false_positives.len(), n_p);
        }
    }
}
