//! Point and polyline primitives, lengths, resampling and set distances.

use serde::{Deserialize, Serialize};

use crate::assign::{hungarian_solve, CostMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist_sq(&self, other: &Self) -> T {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn midpoint(&self, other: &Self) -> Self {
        let half = T::lit(0.5);
        Self::new((self.x + other.x) * half, (self.y + other.y) * half)
    }
}

impl<T: Scalar> From<(T, T)> for Point<T> {
    fn from((x, y): (T, T)) -> Self {
        Self::new(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Villi,
    Crypt,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Villi, ClassLabel::Crypt];

    pub fn as_str(&self) -> &'static str {
        match self {
            ClassLabel::Villi => "villi",
            ClassLabel::Crypt => "crypt",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            ClassLabel::Villi => 0,
            ClassLabel::Crypt => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    /// Mean nearest-neighbour squared distance, both directions summed.
    #[default]
    #[serde(alias = "chamfer")]
    ChamferSquared,
    /// Minimum-cost transport between equal-weight point sets.
    #[serde(alias = "emd")]
    EarthMover,
}

/// How a polyline is brought to exactly three points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplePolicy {
    #[default]
    DuplicateEndpoint,
    Midpoint,
    SampleInterior,
}

/// An ordered 2–4 point polyline with a class label and confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline<T> {
    points: Vec<Point<T>>,
    pub class: ClassLabel,
    pub confidence: T,
}

impl<T: Scalar> Polyline<T> {
    pub const MIN_POINTS: usize = 2;
    pub const MAX_POINTS: usize = 4;

    pub fn new(points: Vec<Point<T>>, class: ClassLabel) -> Result<Self> {
        Self::with_confidence(points, class, T::one())
    }

    pub fn with_confidence(points: Vec<Point<T>>, class: ClassLabel, confidence: T) -> Result<Self> {
        if points.len() < Self::MIN_POINTS || points.len() > Self::MAX_POINTS {
            return Err(Error::InvalidPolyline(format!(
                "points: expected 2–4, got {}",
                points.len()
            )));
        }
        if !points.iter().all(Point::is_finite) {
            return Err(Error::NonFinite("polyline points"));
        }
        if !(confidence >= T::zero() && confidence <= T::one()) {
            return Err(Error::InvalidPolyline(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            points,
            class,
            confidence,
        })
    }

    /// Builds a polyline from `(x, y)` pairs.
    pub fn from_xy(xy: &[(T, T)], class: ClassLabel) -> Result<Self> {
        Self::new(xy.iter().map(|&p| p.into()).collect(), class)
    }

    pub fn points(&self) -> &[Point<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> T {
        polyline_length(&self.points)
    }

    /// Flat coordinate layout `x0, y0, x1, y1, ...`.
    pub fn coords(&self) -> Vec<T> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    /// Same class and confidence, new coordinates in the flat layout.
    pub fn with_coords(&self, coords: &[T]) -> Result<Self> {
        if coords.len() % 2 != 0 {
            return Err(Error::ShapeMismatch("odd coordinate count".into()));
        }
        let points = coords.chunks(2).map(|c| Point::new(c[0], c[1])).collect();
        Self::with_confidence(points, self.class, self.confidence)
    }

    pub fn map_points(&self, f: impl Fn(Point<T>) -> Point<T>) -> Result<Self> {
        Self::with_confidence(
            self.points.iter().copied().map(f).collect(),
            self.class,
            self.confidence,
        )
    }
}

/// Sum of Euclidean segment lengths; 0 for fewer than two points.
pub fn polyline_length<T: Scalar>(points: &[Point<T>]) -> T {
    points
        .windows(2)
        .map(|w| w[1].dist(&w[0]))
        .fold(T::zero(), |acc, d| acc + d)
}

/// Brings a 2–4 point polyline to exactly three points.
///
/// The policy decides the two-point case; four-point inputs always keep the
/// interior point nearest the arc-length midpoint, and three-point inputs are
/// returned unchanged. `SampleInterior` on a two-point input inserts the
/// segment midpoint, the only interior sample a segment has.
pub fn resample_to_three<T: Scalar>(p: &Polyline<T>, policy: ResamplePolicy) -> Result<Polyline<T>> {
    let pts = p.points();
    let out = match pts.len() {
        2 => {
            let (a, b) = (pts[0], pts[1]);
            match policy {
                ResamplePolicy::DuplicateEndpoint => vec![a, b, b],
                ResamplePolicy::Midpoint | ResamplePolicy::SampleInterior => {
                    vec![a, a.midpoint(&b), b]
                }
            }
        }
        3 => pts.to_vec(),
        4 => {
            let half = polyline_length(pts) * T::lit(0.5);
            let s1 = pts[1].dist(&pts[0]);
            let s2 = s1 + pts[2].dist(&pts[1]);
            // ties keep the earlier interior point
            let pick = if (s2 - half).abs() < (s1 - half).abs() {
                pts[2]
            } else {
                pts[1]
            };
            vec![pts[0], pick, pts[3]]
        }
        n => {
            return Err(Error::InvalidPolyline(format!(
                "points: expected 2–4, got {n}"
            )))
        }
    };
    Polyline::with_confidence(out, p.class, p.confidence)
}

/// Two-sided chamfer distance with squared point distances.
///
/// `mean_j min_k |a_j - b_k|^2 + mean_k min_j |a_j - b_k|^2`; zero when either
/// side is empty.
pub fn chamfer_distance<T: Scalar>(a: &[Point<T>], b: &[Point<T>]) -> T {
    if a.is_empty() || b.is_empty() {
        return T::zero();
    }
    one_sided(a, b) + one_sided(b, a)
}

fn one_sided<T: Scalar>(from: &[Point<T>], to: &[Point<T>]) -> T {
    let sum = from
        .iter()
        .map(|p| {
            to.iter()
                .map(|q| p.dist_sq(q))
                .fold(T::infinity(), T::min)
        })
        .fold(T::zero(), |acc, d| acc + d);
    sum / T::from_usize(from.len()).unwrap()
}

/// Exact earth mover's distance between equal-size, uniformly weighted point
/// sets: the minimum over one-to-one pairings of the mean Euclidean cost.
pub fn emd_distance<T: Scalar>(a: &[Point<T>], b: &[Point<T>]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "earth mover distance needs equal point counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Empty("point set"));
    }
    let n = a.len();
    let costs = a
        .iter()
        .flat_map(|p| b.iter().map(move |q| p.dist(q)))
        .collect();
    let assignment = hungarian_solve(&CostMatrix::new(n, n, costs)?)?;
    Ok(assignment.total_cost / T::from_usize(n).unwrap())
}

/// Distance of the chosen kind. Earth mover inputs of different sizes are
/// first brought to three points with `policy`.
pub fn distance<T: Scalar>(
    a: &Polyline<T>,
    b: &Polyline<T>,
    kind: DistanceKind,
    policy: ResamplePolicy,
) -> Result<T> {
    match kind {
        DistanceKind::ChamferSquared => Ok(chamfer_distance(a.points(), b.points())),
        DistanceKind::EarthMover => {
            if a.len() == b.len() {
                emd_distance(a.points(), b.points())
            } else {
                let a3 = resample_to_three(a, policy)?;
                let b3 = resample_to_three(b, policy)?;
                emd_distance(a3.points(), b3.points())
            }
        }
    }
}

/// Scales coordinates into `[0, 1]` by the image size, clamping points that
/// fall outside the image. The flag reports whether any clamping happened.
pub fn normalize_polyline<T: Scalar>(
    p: &Polyline<T>,
    width: u32,
    height: u32,
) -> Result<(Polyline<T>, bool)> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    let w = T::from_u32(width).unwrap();
    let h = T::from_u32(height).unwrap();
    let mut clamped = false;
    let mut clamp = |v: T| {
        if v < T::zero() {
            clamped = true;
            T::zero()
        } else if v > T::one() {
            clamped = true;
            T::one()
        } else {
            v
        }
    };
    let points = p
        .points()
        .iter()
        .map(|q| Point::new(clamp(q.x / w), clamp(q.y / h)))
        .collect();
    Ok((Polyline::with_confidence(points, p.class, p.confidence)?, clamped))
}

pub fn denormalize_polyline<T: Scalar>(p: &Polyline<T>, width: u32, height: u32) -> Result<Polyline<T>> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    let w = T::from_u32(width).unwrap();
    let h = T::from_u32(height).unwrap();
    p.map_points(|q| Point::new(q.x * w, q.y * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pl(xy: &[(f64, f64)]) -> Polyline<f64> {
        Polyline::from_xy(xy, ClassLabel::Villi).unwrap()
    }

    fn pts(xy: &[(f64, f64)]) -> Vec<Point<f64>> {
        xy.iter().map(|&p| p.into()).collect()
    }

    #[test]
    fn length_examples() {
        assert_eq!(pl(&[(0., 0.), (3., 4.), (3., 10.)]).length(), 11.0);
        assert_eq!(pl(&[(5., 5.), (5., 5.), (5., 5.)]).length(), 0.0);
        let l = pl(&[(0., 0.), (1., 2.), (4., 6.)]).length();
        assert!((l - 7.236_067_977_499_79).abs() < 1e-12);
    }

    #[test]
    fn length_works_in_f32() {
        let p = Polyline::<f32>::from_xy(&[(0., 0.), (3., 4.), (3., 10.)], ClassLabel::Crypt).unwrap();
        assert_eq!(p.length(), 11.0f32);
    }

    #[test]
    fn polyline_rejects_bad_point_counts() {
        assert!(Polyline::<f64>::from_xy(&[(0., 0.)], ClassLabel::Villi).is_err());
        let five = [(0., 0.), (1., 0.), (2., 0.), (3., 0.), (4., 0.)];
        let err = Polyline::<f64>::from_xy(&five, ClassLabel::Villi).unwrap_err();
        assert!(err.to_string().contains("expected 2–4"));
        assert!(Polyline::<f64>::from_xy(&[(0., f64::NAN), (1., 1.)], ClassLabel::Villi).is_err());
    }

    #[test]
    fn resample_examples() {
        let seg = pl(&[(0., 0.), (2., 0.)]);
        let mid = resample_to_three(&seg, ResamplePolicy::Midpoint).unwrap();
        assert_eq!(mid.points(), pts(&[(0., 0.), (1., 0.), (2., 0.)]).as_slice());
        let dup = resample_to_three(&seg, ResamplePolicy::DuplicateEndpoint).unwrap();
        assert_eq!(dup.points(), pts(&[(0., 0.), (2., 0.), (2., 0.)]).as_slice());
        let four = pl(&[(0., 0.), (1., 0.), (3., 0.), (6., 0.)]);
        let s = resample_to_three(&four, ResamplePolicy::SampleInterior).unwrap();
        assert_eq!(s.points(), pts(&[(0., 0.), (3., 0.), (6., 0.)]).as_slice());
        let three = pl(&[(0., 0.), (1., 5.), (2., 0.)]);
        assert_eq!(resample_to_three(&three, ResamplePolicy::Midpoint).unwrap(), three);
    }

    #[test]
    fn chamfer_examples() {
        let a = pts(&[(0., 0.), (1., 0.), (2., 0.)]);
        let b = pts(&[(0., 1.), (1., 1.), (2., 1.)]);
        assert_eq!(chamfer_distance(&a, &a), 0.0);
        assert_eq!(chamfer_distance(&a, &b), 2.0);
        assert_eq!(chamfer_distance(&pts(&[(0., 0.)]), &pts(&[(3., 4.)])), 50.0);
    }

    #[test]
    fn emd_examples() {
        let a = pts(&[(0., 0.), (1., 2.), (3., 1.)]);
        assert_eq!(emd_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(
            emd_distance(&pts(&[(0., 0.), (1., 0.)]), &pts(&[(1., 0.), (0., 0.)])).unwrap(),
            0.0
        );
        assert_eq!(
            emd_distance(&pts(&[(0., 0.), (2., 0.)]), &pts(&[(0., 1.), (2., 1.)])).unwrap(),
            1.0
        );
        assert!(emd_distance(&a, &a[..2]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let (p, c) = normalize_polyline(&pl(&[(320., 160.), (0., 0.)]), 640, 640).unwrap();
        assert_eq!(p.points()[0], Point::new(0.5, 0.25));
        assert!(!c);
        let (p, c) = normalize_polyline(&pl(&[(100., 200.), (0., 0.)]), 100, 200).unwrap();
        assert_eq!(p.points()[0], Point::new(1.0, 1.0));
        assert!(!c);
        let (p, c) = normalize_polyline(&pl(&[(150., 50.), (0., 0.)]), 100, 100).unwrap();
        assert_eq!(p.points()[0], Point::new(1.0, 0.5));
        assert!(c);
        assert!(normalize_polyline(&pl(&[(1., 1.), (0., 0.)]), 0, 10).is_err());
    }

    fn brute_chamfer(a: &[Point<f64>], b: &[Point<f64>]) -> f64 {
        let side = |u: &[Point<f64>], v: &[Point<f64>]| {
            let mut s = 0.0;
            for p in u {
                let mut best = f64::INFINITY;
                for q in v {
                    let d = (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y);
                    if d < best {
                        best = d;
                    }
                }
                s += best;
            }
            s / u.len() as f64
        };
        side(a, b) + side(b, a)
    }

    fn arb_points(lo: usize, hi: usize) -> impl Strategy<Value = Vec<Point<f64>>> {
        prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), lo..=hi)
            .prop_map(|v| v.into_iter().map(Point::from).collect())
    }

    proptest! {
        #[test]
        fn chamfer_symmetric_and_matches_enumeration(a in arb_points(2, 4), b in arb_points(2, 4)) {
            let ab = chamfer_distance(&a, &b);
            prop_assert_eq!(ab, chamfer_distance(&b, &a));
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(chamfer_distance(&a, &a), 0.0);
            prop_assert_eq!(ab, brute_chamfer(&a, &b));
        }

        #[test]
        fn length_rigid_invariance(a in arb_points(2, 4), theta in 0.0..std::f64::consts::TAU,
                                   tx in -50.0..50.0f64, ty in -50.0..50.0f64) {
            let (s, c) = theta.sin_cos();
            let moved: Vec<_> = a.iter().map(|p| Point::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty)).collect();
            let l0 = polyline_length(&a);
            let l1 = polyline_length(&moved);
            prop_assert!((l0 - l1).abs() <= 1e-9 * l0.max(1.0));
        }

        #[test]
        fn midpoint_preserves_two_point_length(a in arb_points(2, 2)) {
            let p = Polyline::new(a, ClassLabel::Villi).unwrap();
            let m = resample_to_three(&p, ResamplePolicy::Midpoint).unwrap();
            let d = resample_to_three(&p, ResamplePolicy::DuplicateEndpoint).unwrap();
            prop_assert!((m.length() - p.length()).abs() <= 1e-12 * p.length().max(1.0));
            prop_assert_eq!(d.length(), p.length());
        }

        #[test]
        fn normalize_round_trip(a in prop::collection::vec((0.0..640.0f64, 0.0..480.0f64), 2..=4)) {
            let p = Polyline::from_xy(&a, ClassLabel::Crypt).unwrap();
            let (n, clamped) = normalize_polyline(&p, 640, 480).unwrap();
            prop_assert!(!clamped);
            let back = denormalize_polyline(&n, 640, 480).unwrap();
            for (u, v) in back.points().iter().zip(p.points()) {
                prop_assert!((u.x - v.x).abs() <= 1e-12 && (u.y - v.y).abs() <= 1e-12);
            }
        }
    }
}
