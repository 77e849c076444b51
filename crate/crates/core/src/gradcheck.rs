//! Central finite-difference verification of the analytic loss gradients.
//!
//! Relative error of a partial is `|analytic - numeric| / max(|analytic|,
//! |numeric|, 1)`. Instances within `NONSMOOTH_MARGIN` of a kink or argmin
//! tie are skipped and replaced by a fresh random instance.

use std::fmt;

use rand::Rng;
use serde::Serialize;

use crate::geom::{ClassLabel, Point, Polyline};
use crate::losses::{self, FocalParams, PartDistance};
use crate::raster::Raster;
use crate::rng;

pub const NONSMOOTH_MARGIN: f64 = 1e-3;
const MAX_ATTEMPTS_PER_TRIAL: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossOp {
    Loc,
    Chamfer,
    Length,
    PartLength,
    Focal,
    Dice,
    CrossEntropy,
    Dtw,
}

impl LossOp {
    pub const ALL: [LossOp; 8] = [
        LossOp::Loc,
        LossOp::Chamfer,
        LossOp::Length,
        LossOp::PartLength,
        LossOp::Focal,
        LossOp::Dice,
        LossOp::CrossEntropy,
        LossOp::Dtw,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LossOp::Loc => "loc",
            LossOp::Chamfer => "chamfer",
            LossOp::Length => "length",
            LossOp::PartLength => "part_length",
            LossOp::Focal => "focal",
            LossOp::Dice => "dice",
            LossOp::CrossEntropy => "cross_entropy",
            LossOp::Dtw => "dtw",
        }
    }
}

impl fmt::Display for LossOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One loss evaluation point. The differentiable input is always the first
/// argument (prediction, score, probabilities or the first contour).
#[derive(Debug, Clone)]
pub enum GradCase {
    Loc { pred: Polyline<f64>, gt: Polyline<f64> },
    Chamfer { pred: Polyline<f64>, gt: Polyline<f64> },
    Length { pred: Polyline<f64>, gt: Polyline<f64> },
    PartLength { pred: Polyline<f64>, gt: Polyline<f64> },
    Focal { target: bool, score: f64 },
    Dice { pred: Raster<f64>, gt: Raster<bool> },
    CrossEntropy { probs: Vec<f64>, classes: usize, labels: Vec<u8> },
    Dtw { a: Vec<Point<f64>>, b: Vec<Point<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CaseOutcome {
    Skipped,
    Checked { max_rel_error: f64 },
}

fn random_polyline<R: Rng>(rng: &mut R) -> Polyline<f64> {
    let pts = (0..3)
        .map(|_| Point::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
        .collect();
    Polyline::new(pts, ClassLabel::Villi).expect("finite random points")
}

fn points_from(xs: &[f64]) -> Vec<Point<f64>> {
    xs.chunks(2).map(|c| Point::new(c[0], c[1])).collect()
}

/// Smallest gap between the best and second-best squared distance, for
/// every nearest-neighbour selection in both directions.
fn argmin_gap(from: &[Point<f64>], to: &[Point<f64>]) -> f64 {
    from.iter()
        .map(|p| {
            let mut d: Vec<f64> = to.iter().map(|q| p.dist_sq(q)).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if d.len() > 1 {
                d[1] - d[0]
            } else {
                f64::INFINITY
            }
        })
        .fold(f64::INFINITY, f64::min)
}

fn min_segment(points: &[Point<f64>]) -> f64 {
    points
        .windows(2)
        .map(|w| w[0].dist(&w[1]))
        .fold(f64::INFINITY, f64::min)
}

impl GradCase {
    pub fn random<R: Rng>(op: LossOp, rng: &mut R) -> Self {
        match op {
            LossOp::Loc => GradCase::Loc {
                pred: random_polyline(rng),
                gt: random_polyline(rng),
            },
            LossOp::Chamfer => GradCase::Chamfer {
                pred: random_polyline(rng),
                gt: random_polyline(rng),
            },
            LossOp::Length => GradCase::Length {
                pred: random_polyline(rng),
                gt: random_polyline(rng),
            },
            LossOp::PartLength => GradCase::PartLength {
                pred: random_polyline(rng),
                gt: random_polyline(rng),
            },
            LossOp::Focal => GradCase::Focal {
                target: rng.random_bool(0.5),
                score: rng.random_range(0.01..0.99),
            },
            LossOp::Dice => {
                let (w, h) = (4, 4);
                let pred = (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect();
                let gt = (0..w * h).map(|_| rng.random_bool(0.5)).collect();
                GradCase::Dice {
                    pred: Raster::new(w, h, pred).unwrap(),
                    gt: Raster::new(w, h, gt).unwrap(),
                }
            }
            LossOp::CrossEntropy => {
                let (pixels, classes) = (9, 4);
                let mut probs = Vec::with_capacity(pixels * classes);
                for _ in 0..pixels {
                    let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.05..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    probs.extend(raw.iter().map(|v| v / s));
                }
                let labels = (0..pixels).map(|_| rng.random_range(0..classes as u8)).collect();
                GradCase::CrossEntropy {
                    probs,
                    classes,
                    labels,
                }
            }
            LossOp::Dtw => {
                let n = rng.random_range(2..=6);
                let m = rng.random_range(2..=6);
                let mut pts = |k: usize| -> Vec<Point<f64>> {
                    (0..k)
                        .map(|_| Point::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                        .collect()
                };
                let a = pts(n);
                let b = pts(m);
                GradCase::Dtw { a, b }
            }
        }
    }

    pub fn op(&self) -> LossOp {
        match self {
            GradCase::Loc { .. } => LossOp::Loc,
            GradCase::Chamfer { .. } => LossOp::Chamfer,
            GradCase::Length { .. } => LossOp::Length,
            GradCase::PartLength { .. } => LossOp::PartLength,
            GradCase::Focal { .. } => LossOp::Focal,
            GradCase::Dice { .. } => LossOp::Dice,
            GradCase::CrossEntropy { .. } => LossOp::CrossEntropy,
            GradCase::Dtw { .. } => LossOp::Dtw,
        }
    }

    /// Current value of the differentiable input, flattened.
    pub fn params(&self) -> Vec<f64> {
        match self {
            GradCase::Loc { pred, .. }
            | GradCase::Chamfer { pred, .. }
            | GradCase::Length { pred, .. }
            | GradCase::PartLength { pred, .. } => pred.coords(),
            GradCase::Focal { score, .. } => vec![*score],
            GradCase::Dice { pred, .. } => pred.data().to_vec(),
            GradCase::CrossEntropy { probs, .. } => probs.clone(),
            GradCase::Dtw { a, .. } => a.iter().flat_map(|p| [p.x, p.y]).collect(),
        }
    }

    /// Loss value and analytic gradient with the input replaced by `x`.
    pub fn evaluate(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let l = match self {
            GradCase::Loc { pred, gt } => losses::loc_loss(&pred.with_coords(x).unwrap(), gt).unwrap(),
            GradCase::Chamfer { pred, gt } => {
                losses::chamfer_loss(&pred.with_coords(x).unwrap(), gt).unwrap()
            }
            GradCase::Length { pred, gt } => {
                losses::length_loss(&pred.with_coords(x).unwrap(), gt).unwrap()
            }
            GradCase::PartLength { pred, gt } => losses::part_length_loss(
                &pred.with_coords(x).unwrap(),
                gt,
                PartDistance::Euclidean,
            )
            .unwrap(),
            GradCase::Focal { target, .. } => losses::focal_loss(*target, x[0], FocalParams::default()),
            GradCase::Dice { gt, .. } => losses::dice_core(x, gt.data()),
            GradCase::CrossEntropy { classes, labels, .. } => {
                losses::cross_entropy_core(x, *classes, labels)
            }
            GradCase::Dtw { b, .. } => losses::dtw_loss(&points_from(x), b).unwrap(),
        };
        (l.value, l.gradient)
    }

    /// Which coordinates are far enough from a non-smooth point to check.
    /// All-false means the instance is skipped.
    pub fn checkable(&self) -> Vec<bool> {
        let dof = self.params().len();
        let all = |ok: bool| vec![ok; dof];
        match self {
            GradCase::Loc { pred, gt } => pred
                .coords()
                .iter()
                .zip(gt.coords())
                .map(|(p, g)| (p - g).abs() >= NONSMOOTH_MARGIN)
                .collect(),
            GradCase::Chamfer { pred, gt } => {
                // coincident sets sit on the zero tie of every selection
                let gap = argmin_gap(pred.points(), gt.points())
                    .min(argmin_gap(gt.points(), pred.points()))
                    .min(crate::geom::chamfer_distance(pred.points(), gt.points()));
                all(gap >= NONSMOOTH_MARGIN)
            }
            GradCase::Length { pred, gt } => {
                let margin = (pred.length() - gt.length())
                    .abs()
                    .min(min_segment(pred.points()));
                all(margin >= NONSMOOTH_MARGIN)
            }
            GradCase::PartLength { pred, gt } => {
                let (p, g) = (pred.points(), gt.points());
                let margin = (p[0].dist(&p[1]) - g[0].dist(&g[1]))
                    .abs()
                    .min((p[1].dist(&p[2]) - g[1].dist(&g[2])).abs())
                    .min(min_segment(p));
                all(margin >= NONSMOOTH_MARGIN)
            }
            GradCase::Focal { score, .. } => {
                all(*score >= NONSMOOTH_MARGIN && *score <= 1.0 - NONSMOOTH_MARGIN)
            }
            GradCase::Dice { .. } => all(true),
            GradCase::CrossEntropy { probs, .. } => {
                probs.iter().map(|&p| p >= NONSMOOTH_MARGIN).collect()
            }
            GradCase::Dtw { a, b } => {
                let al = crate::dtw::align(a, b).unwrap();
                let local = al
                    .path
                    .iter()
                    .map(|&(i, j)| a[i].dist(&b[j]))
                    .fold(f64::INFINITY, f64::min);
                all(al.decision_margin.min(local) >= NONSMOOTH_MARGIN)
            }
        }
    }

    pub fn check(&self, step: f64) -> CaseOutcome {
        let mask = self.checkable();
        if !mask.iter().any(|&m| m) {
            return CaseOutcome::Skipped;
        }
        let x0 = self.params();
        let (_, analytic) = self.evaluate(&x0);
        let mut worst = 0.0f64;
        let mut x = x0.clone();
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            x[i] = x0[i] + step;
            let (fp, _) = self.evaluate(&x);
            x[i] = x0[i] - step;
            let (fm, _) = self.evaluate(&x);
            x[i] = x0[i];
            let numeric = (fp - fm) / (2.0 * step);
            let denom = analytic[i].abs().max(numeric.abs()).max(1.0);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        CaseOutcome::Checked {
            max_rel_error: worst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub op: LossOp,
    pub trials: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<14} {} checked={} skipped={} max_rel_err={:.3e} tol={:.1e}",
            self.op.name(),
            if self.passed { "PASS" } else { "FAIL" },
            self.checked,
            self.skipped,
            self.max_rel_error,
            self.tolerance
        )
    }
}

/// Checks `trials` random non-degenerate instances of `op`.
pub fn gradcheck<R: Rng>(op: LossOp, trials: usize, step: f64, tol: f64, rng: &mut R) -> GradcheckReport {
    let mut checked = 0;
    let mut skipped = 0;
    let mut worst = 0.0f64;
    let max_attempts = trials.saturating_mul(MAX_ATTEMPTS_PER_TRIAL);
    while checked < trials && checked + skipped < max_attempts {
        match GradCase::random(op, rng).check(step) {
            CaseOutcome::Skipped => skipped += 1,
            CaseOutcome::Checked { max_rel_error } => {
                checked += 1;
                worst = worst.max(max_rel_error);
            }
        }
    }
    GradcheckReport {
        op,
        trials,
        checked,
        skipped,
        max_rel_error: worst,
        tolerance: tol,
        passed: trials > 0 && checked >= trials && worst <= tol,
    }
}

/// Runs every loss, each on its own sub-stream of `seed`.
pub fn gradcheck_all(trials: usize, step: f64, tol: f64, seed: u64) -> Vec<GradcheckReport> {
    LossOp::ALL
        .iter()
        .enumerate()
        .map(|(i, &op)| gradcheck(op, trials, step, tol, &mut rng::stream(seed, i as u64)))
        .collect()
}
