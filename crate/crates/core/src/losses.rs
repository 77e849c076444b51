//! Detection and segmentation losses with analytic gradients.
//!
//! Polyline gradients use the flat layout `x0, y0, x1, y1, ...` of the
//! prediction. Non-smooth points (absolute-value kinks, zero-length segments)
//! take subgradient 0; argmin selections are frozen at the evaluated point.

use crate::dtw;
use crate::error::{Error, Result};
use crate::geom::{chamfer_distance, polyline_length, Point, Polyline};
use crate::raster::Raster;
use crate::scalar::{sign0, Scalar};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;
pub const DICE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    pub gradient: Vec<T>,
}

impl<T: Scalar> LossValue<T> {
    pub fn zero(dof: usize) -> Self {
        Self {
            value: T::zero(),
            gradient: vec![T::zero(); dof],
        }
    }

    fn scaled(&self, w: T) -> Self {
        Self {
            value: self.value * w,
            gradient: self.gradient.iter().map(|&g| g * w).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams<T> {
    pub alpha: T,
    pub gamma: T,
}

impl<T: Scalar> Default for FocalParams<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(0.25),
            gamma: T::lit(2.0),
        }
    }
}

impl<T: Scalar> FocalParams<T> {
    pub fn new(alpha: T, gamma: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha < T::one()) || !(gamma >= T::zero()) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "focal parameters alpha={alpha} gamma={gamma}"
            )));
        }
        Ok(Self { alpha, gamma })
    }
}

/// Point distance used inside the part-length loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PartDistance {
    #[default]
    Euclidean,
    Squared,
}

fn same_len<T: Scalar>(pred: &Polyline<T>, gt: &Polyline<T>) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} points, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

fn three_points<T: Scalar>(p: &Polyline<T>) -> Result<()> {
    if p.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected a 3-point polyline, got {} points",
            p.len()
        )));
    }
    Ok(())
}

/// L1 distance between corresponding coordinates.
pub fn loc_loss<T: Scalar>(pred: &Polyline<T>, gt: &Polyline<T>) -> Result<LossValue<T>> {
    same_len(pred, gt)?;
    let diff: Vec<T> = pred
        .coords()
        .iter()
        .zip(gt.coords())
        .map(|(&p, g)| p - g)
        .collect();
    Ok(LossValue {
        value: diff.iter().map(|d| d.abs()).sum(),
        gradient: diff.into_iter().map(sign0).collect(),
    })
}

/// Two-sided squared chamfer distance between prediction and ground truth.
pub fn chamfer_loss<T: Scalar>(pred: &Polyline<T>, gt: &Polyline<T>) -> Result<LossValue<T>> {
    let p = pred.points();
    let g = gt.points();
    let two = T::lit(2.0);
    let mut grad = vec![T::zero(); 2 * p.len()];

    // ground truth -> nearest prediction
    let wg = T::one() / T::from_usize(g.len()).unwrap();
    for gj in g {
        let k = argmin(p.iter().map(|pk| pk.dist_sq(gj)));
        grad[2 * k] = grad[2 * k] + wg * two * (p[k].x - gj.x);
        grad[2 * k + 1] = grad[2 * k + 1] + wg * two * (p[k].y - gj.y);
    }
    // prediction -> nearest ground truth
    let wp = T::one() / T::from_usize(p.len()).unwrap();
    for (k, pk) in p.iter().enumerate() {
        let j = argmin(g.iter().map(|gj| pk.dist_sq(gj)));
        grad[2 * k] = grad[2 * k] + wp * two * (pk.x - g[j].x);
        grad[2 * k + 1] = grad[2 * k + 1] + wp * two * (pk.y - g[j].y);
    }
    Ok(LossValue {
        value: chamfer_distance(g, p),
        gradient: grad,
    })
}

/// First index of the minimum.
fn argmin<T: Scalar>(it: impl Iterator<Item = T>) -> usize {
    let mut best = (0, T::infinity());
    for (i, v) in it.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Focal loss of one score against a binary target. The gradient has one
/// entry, the derivative with respect to the score.
pub fn focal_loss<T: Scalar>(target: bool, score: T, params: FocalParams<T>) -> LossValue<T> {
    let lo = T::lit(PROB_CLAMP);
    let hi = T::one() - lo;
    let clamped = score < lo || score > hi;
    let y = score.max(lo).min(hi);
    let FocalParams { alpha, gamma } = params;
    let one = T::one();
    let (value, d) = if target {
        let w = (one - y).powf(gamma);
        let v = -alpha * w * y.ln();
        let d = alpha * gamma * (one - y).powf(gamma - one) * y.ln() - alpha * w / y;
        (v, d)
    } else {
        let w = y.powf(gamma);
        let v = -(one - alpha) * w * (one - y).ln();
        let d = -(one - alpha) * (gamma * y.powf(gamma - one) * (one - y).ln() - w / (one - y));
        (v, d)
    };
    LossValue {
        value,
        gradient: vec![if clamped { T::zero() } else { d }],
    }
}

/// Gradient of the polyline length with respect to its coordinates.
fn length_gradient<T: Scalar>(points: &[Point<T>]) -> Vec<T> {
    let mut grad = vec![T::zero(); 2 * points.len()];
    for j in 1..points.len() {
        let (a, b) = (points[j - 1], points[j]);
        let len = b.dist(&a);
        if len > T::zero() {
            let ux = (b.x - a.x) / len;
            let uy = (b.y - a.y) / len;
            grad[2 * j] = grad[2 * j] + ux;
            grad[2 * j + 1] = grad[2 * j + 1] + uy;
            grad[2 * (j - 1)] = grad[2 * (j - 1)] - ux;
            grad[2 * (j - 1) + 1] = grad[2 * (j - 1) + 1] - uy;
        }
    }
    grad
}

/// Absolute difference of total polyline lengths.
pub fn length_loss<T: Scalar>(pred: &Polyline<T>, gt: &Polyline<T>) -> Result<LossValue<T>> {
    let lp = polyline_length(pred.points());
    let lg = polyline_length(gt.points());
    let s = sign0(lp - lg);
    Ok(LossValue {
        value: (lg - lp).abs(),
        gradient: length_gradient(pred.points()).into_iter().map(|g| g * s).collect(),
    })
}

/// Distance and its gradient with respect to `a`.
fn part_distance<T: Scalar>(a: Point<T>, b: Point<T>, kind: PartDistance) -> (T, [T; 2]) {
    match kind {
        PartDistance::Euclidean => {
            let d = a.dist(&b);
            if d > T::zero() {
                (d, [(a.x - b.x) / d, (a.y - b.y) / d])
            } else {
                (d, [T::zero(); 2])
            }
        }
        PartDistance::Squared => {
            let two = T::lit(2.0);
            (a.dist_sq(&b), [two * (a.x - b.x), two * (a.y - b.y)])
        }
    }
}

/// Start-to-middle plus middle-to-end segment length mismatch.
pub fn part_length_loss<T: Scalar>(
    pred: &Polyline<T>,
    gt: &Polyline<T>,
    kind: PartDistance,
) -> Result<LossValue<T>> {
    three_points(pred)?;
    three_points(gt)?;
    let p = pred.points();
    let g = gt.points();
    let mut value = T::zero();
    let mut grad = vec![T::zero(); 6];
    for (i, j) in [(0usize, 1usize), (1, 2)] {
        let (dp, gi) = part_distance(p[i], p[j], kind);
        let (dg, _) = part_distance(g[i], g[j], kind);
        let s = sign0(dp - dg);
        value = value + (dp - dg).abs();
        // d(p_i, p_j) has gradient gi at p_i and -gi at p_j
        grad[2 * i] = grad[2 * i] + s * gi[0];
        grad[2 * i + 1] = grad[2 * i + 1] + s * gi[1];
        grad[2 * j] = grad[2 * j] - s * gi[0];
        grad[2 * j + 1] = grad[2 * j + 1] - s * gi[1];
    }
    Ok(LossValue {
        value,
        gradient: grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionWeights<T> {
    pub loc: T,
    pub chamfer: T,
    pub focal: T,
    pub length: T,
    pub part_length: T,
}

impl<T: Scalar> Default for DetectionWeights<T> {
    fn default() -> Self {
        Self {
            loc: T::one(),
            chamfer: T::one(),
            focal: T::one(),
            length: T::one(),
            part_length: T::one(),
        }
    }
}

/// The five per-instance detection terms. Polyline terms carry coordinate
/// gradients; the focal term carries the score derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTerms<T> {
    pub loc: LossValue<T>,
    pub chamfer: LossValue<T>,
    pub focal: LossValue<T>,
    pub length: LossValue<T>,
    pub part_length: LossValue<T>,
}

impl<T: Scalar> DetectionTerms<T> {
    pub fn compute(
        pred: &Polyline<T>,
        gt: &Polyline<T>,
        target: bool,
        score: T,
        focal: FocalParams<T>,
        part: PartDistance,
    ) -> Result<Self> {
        three_points(pred)?;
        three_points(gt)?;
        Ok(Self {
            loc: loc_loss(pred, gt)?,
            chamfer: chamfer_loss(pred, gt)?,
            focal: focal_loss(target, score, focal),
            length: length_loss(pred, gt)?,
            part_length: part_length_loss(pred, gt, part)?,
        })
    }

    /// Weighted sum. The gradient is the coordinate gradient followed by the
    /// score derivative.
    pub fn total(&self, w: &DetectionWeights<T>) -> LossValue<T> {
        let dof = self.loc.gradient.len();
        let mut out = LossValue::zero(dof + 1);
        for (term, weight) in [
            (&self.loc, w.loc),
            (&self.chamfer, w.chamfer),
            (&self.length, w.length),
            (&self.part_length, w.part_length),
        ] {
            let t = term.scaled(weight);
            out.value = out.value + t.value;
            for (o, g) in out.gradient.iter_mut().zip(&t.gradient) {
                *o = *o + *g;
            }
        }
        let f = self.focal.scaled(w.focal);
        out.value = out.value + f.value;
        out.gradient[dof] = out.gradient[dof] + f.gradient.first().copied().unwrap_or_else(T::zero);
        out
    }
}

/// Weighted sum of localization, chamfer, focal, length and part-length terms.
pub fn total_detection_loss<T: Scalar>(
    pred: &Polyline<T>,
    gt: &Polyline<T>,
    target: bool,
    score: T,
    focal: FocalParams<T>,
    weights: &DetectionWeights<T>,
) -> Result<LossValue<T>> {
    Ok(DetectionTerms::compute(pred, gt, target, score, focal, PartDistance::Euclidean)?.total(weights))
}

/// Soft Dice loss `1 - (2 sum(pq) + eps) / (sum(p) + sum(q) + eps)`; gradient
/// with respect to the predicted probabilities.
pub fn dice_loss<T: Scalar>(pred: &Raster<T>, gt: &Raster<bool>) -> Result<LossValue<T>> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch(format!(
            "dice: prediction {}x{}, ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(dice_core(pred.data(), gt.data()))
}

pub(crate) fn dice_core<T: Scalar>(p: &[T], q: &[bool]) -> LossValue<T> {
    let eps = T::lit(DICE_EPS);
    let two = T::lit(2.0);
    let ind = |b: bool| if b { T::one() } else { T::zero() };
    let inter: T = p.iter().zip(q).map(|(&pi, &qi)| pi * ind(qi)).sum();
    let sum_p: T = p.iter().copied().sum();
    let sum_q: T = q.iter().map(|&b| ind(b)).sum();
    let num = two * inter + eps;
    let den = sum_p + sum_q + eps;
    let gradient = q
        .iter()
        .map(|&qi| -(two * ind(qi) * den - num) / (den * den))
        .collect();
    LossValue {
        value: T::one() - num / den,
        gradient,
    }
}

/// Per-pixel class distributions, pixel-major (`pixel * classes + class`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap<T> {
    width: usize,
    height: usize,
    classes: usize,
    data: Vec<T>,
}

impl<T: Scalar> ProbMap<T> {
    pub fn new(width: usize, height: usize, classes: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || classes == 0 {
            return Err(Error::InvalidArgument("empty probability map".into()));
        }
        if data.len() != width * height * classes {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height}x{classes} probability map with {} values",
                data.len()
            )));
        }
        let tol = T::lit(1e-6);
        for (i, px) in data.chunks(classes).enumerate() {
            let s: T = px.iter().copied().sum();
            if (s - T::one()).abs() > tol || px.iter().any(|&v| !(v >= T::zero())) {
                return Err(Error::InvalidArgument(format!(
                    "pixel {i}: probabilities sum to {s}"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            classes,
            data,
        })
    }

    /// Same distribution at every pixel.
    pub fn constant(width: usize, height: usize, dist: &[T]) -> Result<Self> {
        Self::new(width, height, dist.len(), dist.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Probability raster of one class.
    pub fn channel(&self, class: usize) -> Raster<T> {
        let data = self.data.chunks(self.classes).map(|px| px[class]).collect();
        Raster::new(self.width, self.height, data).expect("shape checked at construction")
    }
}

/// Mean over pixels of `-ln p(true class)`; gradient with respect to the
/// probability entries.
pub fn cross_entropy_loss<T: Scalar>(probs: &ProbMap<T>, labels: &Raster<u8>) -> Result<LossValue<T>> {
    if probs.width != labels.width() || probs.height != labels.height() {
        return Err(Error::ShapeMismatch(format!(
            "cross entropy: probabilities {}x{}, labels {}x{}",
            probs.width,
            probs.height,
            labels.width(),
            labels.height()
        )));
    }
    if let Some(bad) = labels.data().iter().find(|&&l| usize::from(l) >= probs.classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside {} classes",
            probs.classes
        )));
    }
    Ok(cross_entropy_core(&probs.data, probs.classes, labels.data()))
}

pub(crate) fn cross_entropy_core<T: Scalar>(probs: &[T], classes: usize, labels: &[u8]) -> LossValue<T> {
    let lo = T::lit(PROB_CLAMP);
    let n = T::from_usize(labels.len()).unwrap();
    let mut value = T::zero();
    let mut gradient = vec![T::zero(); probs.len()];
    for (i, &l) in labels.iter().enumerate() {
        let idx = i * classes + usize::from(l);
        let p = probs[idx];
        value = value - p.max(lo).ln();
        if p > lo {
            gradient[idx] = -T::one() / (n * p);
        }
    }
    LossValue {
        value: value / n,
        gradient,
    }
}

/// Optimal warping cost between two point sequences divided by `|a| + |b|`;
/// gradient with respect to the coordinates of `a` along the optimal path.
pub fn dtw_loss<T: Scalar>(a: &[Point<T>], b: &[Point<T>]) -> Result<LossValue<T>> {
    let al = dtw::align(a, b)?;
    let norm = T::from_usize(a.len() + b.len()).unwrap();
    let mut gradient = vec![T::zero(); 2 * a.len()];
    for &(i, j) in &al.path {
        let d = a[i].dist(&b[j]);
        if d > T::zero() {
            gradient[2 * i] = gradient[2 * i] + (a[i].x - b[j].x) / (d * norm);
            gradient[2 * i + 1] = gradient[2 * i + 1] + (a[i].y - b[j].y) / (d * norm);
        }
    }
    Ok(LossValue {
        value: al.cost / norm,
        gradient,
    })
}

/// Segmentation objective: Dice + cross entropy + optional contour DTW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationLoss<T> {
    pub dice: T,
    pub cross_entropy: T,
    /// `None` when no shoulder/border contours were supplied.
    pub dtw: Option<T>,
    pub value: T,
}

impl<T: Scalar> SegmentationLoss<T> {
    pub fn from_terms(dice: T, cross_entropy: T, dtw: Option<T>) -> Self {
        Self {
            dice,
            cross_entropy,
            dtw,
            value: dice + cross_entropy + dtw.unwrap_or_else(T::zero),
        }
    }

    pub fn includes_dtw(&self) -> bool {
        self.dtw.is_some()
    }
}

/// Dice is averaged over the non-background classes of `probs`; the DTW term
/// compares the predicted shoulder contour against the border contour.
pub fn segmentation_loss<T: Scalar>(
    probs: &ProbMap<T>,
    labels: &Raster<u8>,
    contours: Option<(&[Point<T>], &[Point<T>])>,
) -> Result<SegmentationLoss<T>> {
    let ce = cross_entropy_loss(probs, labels)?;
    let fg = probs.classes().saturating_sub(1).max(1);
    let mut dice = T::zero();
    for class in (0..probs.classes()).filter(|&c| c > 0 || probs.classes() == 1) {
        let gt = labels.map(|l| usize::from(l) == class);
        dice = dice + dice_loss(&probs.channel(class), &gt)?.value;
    }
    dice = dice / T::from_usize(fg).unwrap();
    let dtw = contours
        .map(|(a, b)| dtw_loss(a, b).map(|l| l.value))
        .transpose()?;
    Ok(SegmentationLoss::from_terms(dice, ce.value, dtw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ClassLabel;

    fn pl(xy: &[(f64, f64)]) -> Polyline<f64> {
        Polyline::from_xy(xy, ClassLabel::Villi).unwrap()
    }

    fn pts(xy: &[(f64, f64)]) -> Vec<Point<f64>> {
        xy.iter().map(|&p| p.into()).collect()
    }

    #[test]
    fn loc_examples() {
        let gt = pl(&[(0., 0.), (1., 1.), (2., 2.)]);
        assert_eq!(loc_loss(&gt, &gt).unwrap().value, 0.0);
        let pred = pl(&[(0.5, 0.), (1., 1.), (2., 1.5)]);
        let l = loc_loss(&pred, &gt).unwrap();
        assert_eq!(l.value, 1.0);
        assert_eq!(l.gradient, vec![1., 0., 0., 0., 0., -1.]);
        let zero = pl(&[(0., 0.), (0., 0.), (0., 0.)]);
        let ones = pl(&[(1., 1.), (1., 1.), (1., 1.)]);
        assert_eq!(loc_loss(&ones, &zero).unwrap().value, 6.0);
    }

    #[test]
    fn chamfer_examples() {
        let a = pl(&[(0., 0.), (1., 0.), (2., 0.)]);
        let z = chamfer_loss(&a, &a).unwrap();
        assert_eq!(z.value, 0.0);
        assert!(z.gradient.iter().all(|&g| g == 0.0));
        let b = pl(&[(0., 1.), (1., 1.), (2., 1.)]);
        assert_eq!(chamfer_loss(&a, &b).unwrap().value, 2.0);
    }

    #[test]
    fn focal_examples() {
        let p = FocalParams::default();
        assert_eq!((p.alpha, p.gamma), (0.25, 2.0));
        assert!(focal_loss(true, 1.0, p).value < 1e-12);
        let v = focal_loss(true, 0.5, p).value;
        assert!((v - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((v - 0.043_321_7).abs() < 1e-7);
        // negative target uses the mirrored term
        let n = focal_loss(false, 0.5, p).value;
        assert!((n - 0.75 * 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!(FocalParams::new(1.5, 2.0).is_err());
    }

    #[test]
    fn focal_monotone_for_positive_target() {
        let p = FocalParams::default();
        let mut last = f64::INFINITY;
        for i in 1..1000 {
            let v = focal_loss(true, i as f64 / 1000.0, p).value;
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn length_examples() {
        let a = pl(&[(0., 0.), (3., 4.), (3., 10.)]);
        let b = pl(&[(0., 0.), (11., 0.), (11., 0.)]);
        assert_eq!(length_loss(&b, &a).unwrap().value, 0.0);
        let pred = pl(&[(0., 0.), (4., 0.), (8., 0.)]);
        let l = length_loss(&pred, &a).unwrap();
        assert_eq!(l.value, 3.0);
        // pred is short: lengthening decreases the loss
        assert_eq!(l.gradient, vec![1., 0., 0., 0., -1., 0.]);
    }

    #[test]
    fn part_length_examples() {
        let gt = pl(&[(0., 0.), (1., 0.), (1., 1.)]);
        assert_eq!(part_length_loss(&gt, &gt, PartDistance::Euclidean).unwrap().value, 0.0);
        let pred = pl(&[(0., 0.), (2., 0.), (2., 2.)]);
        assert_eq!(part_length_loss(&pred, &gt, PartDistance::Euclidean).unwrap().value, 2.0);
        let sym_gt = pl(&[(0., 0.), (1., 1.), (2., 0.)]);
        let sym_pred = pl(&[(0., 0.), (1., 2.), (2., 0.)]);
        let swapped = pl(&[(2., 0.), (1., 2.), (0., 0.)]);
        assert_eq!(
            part_length_loss(&sym_pred, &sym_gt, PartDistance::Euclidean).unwrap().value,
            part_length_loss(&swapped, &sym_gt, PartDistance::Euclidean).unwrap().value
        );
        assert_eq!(part_length_loss(&pred, &gt, PartDistance::Squared).unwrap().value, 6.0);
        assert!(part_length_loss(&pl(&[(0., 0.), (1., 1.)]), &gt, PartDistance::Euclidean).is_err());
    }

    #[test]
    fn total_examples() {
        let gt = pl(&[(0., 0.), (1., 1.), (2., 2.)]);
        let z = total_detection_loss(&gt, &gt, true, 1.0, FocalParams::default(), &DetectionWeights::default()).unwrap();
        assert!(z.value < 1e-12);

        let t = DetectionTerms {
            loc: LossValue { value: 1.0f64, gradient: vec![0.0; 6] },
            chamfer: LossValue { value: 2.0, gradient: vec![0.0; 6] },
            focal: LossValue { value: 0.043_321_7, gradient: vec![0.0] },
            length: LossValue { value: 3.0, gradient: vec![0.0; 6] },
            part_length: LossValue { value: 2.0, gradient: vec![0.0; 6] },
        };
        assert!((t.total(&DetectionWeights::default()).value - 8.043_321_7).abs() < 1e-12);

        let pred = pl(&[(0.5, 0.), (1.2, 1.), (2., 1.5)]);
        let only_loc = DetectionWeights { loc: 1.0, chamfer: 0.0, focal: 0.0, length: 0.0, part_length: 0.0 };
        let tot = total_detection_loss(&pred, &gt, true, 0.3, FocalParams::default(), &only_loc).unwrap();
        let loc = loc_loss(&pred, &gt).unwrap();
        assert_eq!(tot.value, loc.value);
        assert_eq!(&tot.gradient[..6], loc.gradient.as_slice());
        assert_eq!(tot.gradient[6], 0.0);
    }

    #[test]
    fn total_is_sum_of_terms() {
        let gt = pl(&[(0., 0.), (3., 1.), (5., 4.)]);
        let pred = pl(&[(0.4, -0.2), (2.5, 1.7), (6., 3.)]);
        let f = FocalParams::default();
        let t = DetectionTerms::compute(&pred, &gt, true, 0.7, f, PartDistance::Euclidean).unwrap();
        let sum = t.loc.value + t.chamfer.value + t.focal.value + t.length.value + t.part_length.value;
        let total = t.total(&DetectionWeights::default()).value;
        assert!((total - sum).abs() <= 1e-12);
    }

    #[test]
    fn dice_examples() {
        let gt = Raster::new(2, 2, vec![true, false, true, true]).unwrap();
        let same = gt.map(|b| if b { 1.0f64 } else { 0.0 });
        assert!(dice_loss(&same, &gt).unwrap().value.abs() < 1e-6);
        let zeros = Raster::filled(2, 2, 0.0f64).unwrap();
        assert!((dice_loss(&zeros, &gt).unwrap().value - 1.0).abs() < 1e-6);

        let g = Raster::new(4, 2, vec![true, true, true, true, false, false, false, false]).unwrap();
        let p = Raster::new(4, 2, vec![0f64, 0., 1., 1., 1., 1., 0., 0.]).unwrap();
        assert!((dice_loss(&p, &g).unwrap().value - 0.5).abs() < 1e-6);
        assert!(dice_loss(&Raster::filled(1, 2, 0.0).unwrap(), &gt).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let labels = Raster::new(2, 1, vec![0u8, 2]).unwrap();
        let probs = ProbMap::new(2, 1, 3, vec![1., 0., 0., 0., 0., 1.]).unwrap();
        assert_eq!(cross_entropy_loss(&probs, &labels).unwrap().value, 0.0);

        let labels5 = Raster::new(3, 2, vec![0u8, 1, 2, 3, 4, 0]).unwrap();
        let uniform = ProbMap::constant(3, 2, &[0.2; 5]).unwrap();
        assert!((cross_entropy_loss(&uniform, &labels5).unwrap().value - 5f64.ln()).abs() < 1e-12);

        let one = Raster::new(1, 1, vec![1u8]).unwrap();
        let p = ProbMap::new(1, 1, 2, vec![0.75, 0.25]).unwrap();
        assert!((cross_entropy_loss(&p, &one).unwrap().value - 4f64.ln()).abs() < 1e-12);

        assert!(ProbMap::new(1, 1, 2, vec![0.5, 0.6]).is_err());
        assert!(cross_entropy_loss(&p, &labels).is_err());
    }

    #[test]
    fn dtw_examples() {
        let a = pts(&[(0., 0.), (2., 1.), (3., 3.)]);
        assert_eq!(dtw_loss(&a, &a).unwrap().value, 0.0);
        let a = pts(&[(0., 0.), (2., 0.)]);
        let b = pts(&[(0., 0.), (1., 0.), (2., 0.)]);
        assert!((dtw_loss(&a, &b).unwrap().value - 0.2).abs() < 1e-15);

        let a = pts(&[(0., 0.), (1., 3.), (4., 1.), (5., 5.)]);
        let b = pts(&[(1., 1.), (2., 2.), (6., 0.)]);
        let ra: Vec<_> = a.iter().rev().copied().collect();
        let rb: Vec<_> = b.iter().rev().copied().collect();
        assert!((dtw_loss(&a, &b).unwrap().value - dtw_loss(&ra, &rb).unwrap().value).abs() < 1e-12);
        assert!(dtw_loss(&[], &b).is_err());
    }

    #[test]
    fn segmentation_examples() {
        assert_eq!(SegmentationLoss::<f64>::from_terms(0.0, 0.0, Some(0.0)).value, 0.0);
        let s = SegmentationLoss::from_terms(0.5f64, 1.386_29, Some(0.2));
        assert!((s.value - 2.086_29).abs() < 1e-12);
        let s = SegmentationLoss::from_terms(0.5f64, 1.386_29, None);
        assert!(!s.includes_dtw());
        assert!((s.value - 1.886_29).abs() < 1e-12);

        let labels = Raster::new(2, 1, vec![0u8, 1]).unwrap();
        let probs = ProbMap::new(2, 1, 2, vec![1., 0., 0., 1.]).unwrap();
        let c = pts(&[(0., 0.), (1., 0.)]);
        let full = segmentation_loss(&probs, &labels, Some((&c, &c))).unwrap();
        assert!(full.value.abs() < 1e-6);
        assert!(full.includes_dtw());
        let partial = segmentation_loss(&probs, &labels, None).unwrap();
        assert!(!partial.includes_dtw());
    }

    #[test]
    fn works_in_f32() {
        let gt = Polyline::<f32>::from_xy(&[(0., 0.), (1., 0.), (1., 1.)], ClassLabel::Crypt).unwrap();
        let pred = Polyline::<f32>::from_xy(&[(0., 0.), (2., 0.), (2., 2.)], ClassLabel::Crypt).unwrap();
        assert_eq!(part_length_loss(&pred, &gt, PartDistance::Euclidean).unwrap().value, 2.0f32);
        let f = focal_loss(true, 0.5f32, FocalParams::default());
        assert!((f.value - 0.043_321_7).abs() < 1e-6);
    }
}
