//! Exact minimum-cost bipartite assignment.
//!
//! Shortest augmenting path Hungarian method with row/column potentials,
//! followed by a lexicographic pass over the tight-edge graph so that equal
//! cost optima always resolve to the same pair list.

use crate::error::{Error, Result};
use crate::geom::{distance, DistanceKind, Polyline, ResamplePolicy};
use crate::scalar::Scalar;

/// Row-major cost matrix; rows are predictions, columns ground truths.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T> {
    rows: usize,
    cols: usize,
    costs: Vec<T>,
    pad_cost: T,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn new(rows: usize, cols: usize, costs: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("cost matrix"));
        }
        if costs.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} cost matrix with {} entries",
                costs.len()
            )));
        }
        if !costs.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("cost matrix"));
        }
        let max = costs.iter().copied().fold(T::neg_infinity(), T::max);
        Ok(Self {
            rows,
            cols,
            costs,
            pad_cost: T::one() + max,
        })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged cost rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pad_cost(&self) -> T {
        self.pad_cost
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.costs[r * self.cols + c]
    }

    pub fn transpose(&self) -> Self {
        let costs = (0..self.cols)
            .flat_map(|c| (0..self.rows).map(move |r| (r, c)))
            .map(|(r, c)| self.get(r, c))
            .collect();
        Self {
            rows: self.cols,
            cols: self.rows,
            costs,
            pad_cost: self.pad_cost,
        }
    }

    fn padded(&self, r: usize, c: usize) -> T {
        if r < self.rows && c < self.cols {
            self.get(r, c)
        } else {
            self.pad_cost
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<T> {
    /// `(row, col)` pairs in increasing row order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    pub total_cost: T,
}

impl<T: Scalar> Assignment<T> {
    fn empty(rows: usize, cols: usize) -> Self {
        Self {
            pairs: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
            total_cost: T::zero(),
        }
    }
}

/// Minimum total cost one-to-one assignment covering `min(rows, cols)` pairs.
///
/// Among equal-cost optima the lexicographically smallest pair list is
/// returned. Rectangular inputs are squared with the matrix pad cost and the
/// padded pairs are reported as unmatched.
pub fn hungarian_solve<T: Scalar>(c: &CostMatrix<T>) -> Result<Assignment<T>> {
    if !c.costs.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }
    let n = c.rows.max(c.cols);
    let (u, v) = potentials(c, n);

    let scale = (0..n)
        .flat_map(|r| (0..n).map(move |k| (r, k)))
        .map(|(r, k)| c.padded(r, k).abs())
        .fold(T::one(), T::max);
    let tol = scale * T::epsilon() * T::from_usize(16 * n).unwrap();
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|r| {
            (0..n)
                .map(|k| c.padded(r, k) - u[r + 1] - v[k + 1] <= tol)
                .collect()
        })
        .collect();

    let row_to_col = lexicographic_perfect_matching(&tight).ok_or_else(|| {
        Error::Invariant("tight-edge graph lost its perfect matching".into())
    })?;

    let mut out = Assignment::empty(0, 0);
    let mut col_used = vec![false; c.cols];
    for (r, &k) in row_to_col.iter().enumerate() {
        if r < c.rows && k < c.cols {
            out.pairs.push((r, k));
            out.total_cost = out.total_cost + c.get(r, k);
            col_used[k] = true;
        } else if r < c.rows {
            out.unmatched_rows.push(r);
        }
    }
    out.unmatched_cols = (0..c.cols).filter(|&k| !col_used[k]).collect();
    Ok(out)
}

/// Dual potentials of the padded `n x n` problem (1-based, index 0 unused).
fn potentials<T: Scalar>(c: &CostMatrix<T>, n: usize) -> (Vec<T>, Vec<T>) {
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c.padded(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (u, v)
}

/// Row-by-row smallest column choice that still admits a perfect matching in
/// the remaining tight graph. Every perfect matching of the tight graph is an
/// optimal assignment.
fn lexicographic_perfect_matching(tight: &[Vec<bool>]) -> Option<Vec<usize>> {
    let n = tight.len();
    let mut chosen = vec![usize::MAX; n];
    let mut col_taken = vec![false; n];
    for r in 0..n {
        let mut found = false;
        for k in 0..n {
            if !tight[r][k] || col_taken[k] {
                continue;
            }
            col_taken[k] = true;
            if has_perfect_matching(tight, r + 1, &col_taken) {
                chosen[r] = k;
                found = true;
                break;
            }
            col_taken[k] = false;
        }
        if !found {
            return None;
        }
    }
    Some(chosen)
}

/// Kuhn's augmenting paths on rows `first_row..` against free columns.
fn has_perfect_matching(tight: &[Vec<bool>], first_row: usize, col_taken: &[bool]) -> bool {
    fn augment(
        r: usize,
        tight: &[Vec<bool>],
        col_taken: &[bool],
        owner: &mut [Option<usize>],
        seen: &mut [bool],
    ) -> bool {
        for k in 0..tight.len() {
            if !tight[r][k] || col_taken[k] || seen[k] {
                continue;
            }
            seen[k] = true;
            if owner[k].map_or(true, |o| augment(o, tight, col_taken, owner, seen)) {
                owner[k] = Some(r);
                return true;
            }
        }
        false
    }
    let n = tight.len();
    let mut owner = vec![None; n];
    (first_row..n).all(|r| {
        let mut seen = vec![false; n];
        augment(r, tight, col_taken, &mut owner, &mut seen)
    })
}

/// Matching cost of a prediction against a ground truth: the distance term
/// plus `class_weight` when the class labels differ. Inputs are expected in
/// normalized coordinates.
pub fn match_cost<T: Scalar>(
    pred: &Polyline<T>,
    gt: &Polyline<T>,
    class_weight: T,
    kind: DistanceKind,
) -> Result<T> {
    let d = distance(pred, gt, kind, ResamplePolicy::DuplicateEndpoint)?;
    let mismatch = if pred.class == gt.class {
        T::zero()
    } else {
        class_weight
    };
    Ok(d + mismatch)
}

/// Set-prediction target matching: optimal one-to-one pairing of predictions
/// (rows) with ground truths (columns) under [`match_cost`].
pub fn match_targets<T: Scalar>(
    preds: &[Polyline<T>],
    gts: &[Polyline<T>],
    class_weight: T,
    kind: DistanceKind,
) -> Result<Assignment<T>> {
    if preds.is_empty() || gts.is_empty() {
        return Ok(Assignment::empty(preds.len(), gts.len()));
    }
    let mut costs = Vec::with_capacity(preds.len() * gts.len());
    for p in preds {
        for g in gts {
            costs.push(match_cost(p, g, class_weight, kind)?);
        }
    }
    hungarian_solve(&CostMatrix::new(preds.len(), gts.len(), costs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ClassLabel;
    use proptest::prelude::*;

    fn solve(rows: &[Vec<f64>]) -> Assignment<f64> {
        hungarian_solve(&CostMatrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn small_examples() {
        let a = solve(&[vec![0., 9.], vec![9., 0.]]);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost, 0.0);
        let a = solve(&[vec![1., 2.], vec![2., 1.]]);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost, 2.0);
        let a = solve(&[vec![4., 1., 3.], vec![2., 0., 5.], vec![3., 2., 2.]]);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0), (2, 2)]);
        assert_eq!(a.total_cost, 5.0);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let a = solve(&[vec![1., 1.], vec![1., 1.]]);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        let a = solve(&[vec![0.; 3], vec![0.; 3], vec![0.; 3]]);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn rectangular_inputs_report_unmatched() {
        let a = solve(&[vec![5., 1., 9.], vec![1., 5., 9.]]);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(a.unmatched_cols, vec![2]);
        assert!(a.unmatched_rows.is_empty());
        assert_eq!(a.total_cost, 2.0);

        let a = solve(&[vec![3.], vec![1.], vec![2.]]);
        assert_eq!(a.pairs, vec![(1, 0)]);
        assert_eq!(a.unmatched_rows, vec![0, 2]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(CostMatrix::from_rows(&[vec![0., f64::NAN]]).is_err());
        assert!(CostMatrix::from_rows(&[vec![0., f64::INFINITY]]).is_err());
    }

    #[test]
    fn match_cost_examples() {
        let a = Polyline::from_xy(&[(0.1, 0.1), (0.2, 0.2), (0.3, 0.3)], ClassLabel::Villi).unwrap();
        let mut b = a.clone();
        assert_eq!(match_cost(&a, &b, 1.0, DistanceKind::ChamferSquared).unwrap(), 0.0);
        b.class = ClassLabel::Crypt;
        assert_eq!(match_cost(&a, &b, 10.0, DistanceKind::ChamferSquared).unwrap(), 10.0);
        let p = Polyline::from_xy(&[(0., 0.), (1., 0.), (2., 0.)], ClassLabel::Crypt).unwrap();
        let q = Polyline::from_xy(&[(0., 1.), (1., 1.), (2., 1.)], ClassLabel::Crypt).unwrap();
        assert_eq!(match_cost(&p, &q, 1.0, DistanceKind::ChamferSquared).unwrap(), 2.0);
    }

    #[test]
    fn match_targets_pairs_nearest() {
        let g0 = Polyline::from_xy(&[(0.1, 0.1), (0.2, 0.1)], ClassLabel::Villi).unwrap();
        let g1 = Polyline::from_xy(&[(0.8, 0.8), (0.9, 0.8)], ClassLabel::Crypt).unwrap();
        let preds = vec![g1.clone(), g0.clone()];
        let a = match_targets(&preds, &[g0, g1], 1.0, DistanceKind::ChamferSquared).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(a.total_cost, 0.0);
    }

    fn brute_min(c: &CostMatrix<f64>) -> f64 {
        fn rec(c: &CostMatrix<f64>, r: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if r == c.rows() {
                *best = best.min(acc);
                return;
            }
            for k in 0..c.cols() {
                if !used[k] {
                    used[k] = true;
                    rec(c, r + 1, used, acc + c.get(r, k), best);
                    used[k] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(c, 0, &mut vec![false; c.cols()], 0.0, &mut best);
        best
    }

    fn arb_square() -> impl Strategy<Value = CostMatrix<f64>> {
        (1usize..=6).prop_flat_map(|n| {
            prop::collection::vec(0i32..20, n * n)
                .prop_map(move |v| CostMatrix::new(n, n, v.into_iter().map(f64::from).collect()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(c in arb_square()) {
            prop_assert_eq!(hungarian_solve(&c).unwrap().total_cost, brute_min(&c));
        }

        #[test]
        fn constant_shift(c in arb_square(), k in -5i32..5) {
            let n = c.rows();
            let shifted = CostMatrix::new(n, n, c.costs.iter().map(|v| v + f64::from(k)).collect()).unwrap();
            let a = hungarian_solve(&c).unwrap();
            let b = hungarian_solve(&shifted).unwrap();
            prop_assert_eq!(b.total_cost, a.total_cost + n as f64 * f64::from(k));
            prop_assert_eq!(a.pairs, b.pairs);
        }

        #[test]
        fn transpose(c in arb_square()) {
            let a = hungarian_solve(&c).unwrap();
            let t = hungarian_solve(&c.transpose()).unwrap();
            prop_assert_eq!(a.total_cost, t.total_cost);
            let mut flipped: Vec<_> = t.pairs.iter().map(|&(r, k)| (k, r)).collect();
            flipped.sort_unstable();
            // with ties the transposed optimum may be a different optimal set;
            // it must still be optimal for the original matrix
            let cost: f64 = flipped.iter().map(|&(r, k)| c.get(r, k)).sum();
            prop_assert_eq!(cost, a.total_cost);
        }
    }
}
