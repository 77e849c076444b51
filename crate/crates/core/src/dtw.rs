//! Dynamic time warping over point sequences.
//!
//! Steps `(1,0)`, `(0,1)`, `(1,1)`; local cost is the Euclidean distance.

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment<T> {
    /// Cumulative cost of the optimal warping path.
    pub cost: T,
    /// `(index in a, index in b)` from `(0, 0)` to `(|a|-1, |b|-1)`.
    pub path: Vec<(usize, usize)>,
    /// Smallest gap between the chosen predecessor and the runner-up over the
    /// cells of the path; infinite when no cell had a choice.
    pub decision_margin: T,
}

/// Optimal monotone alignment between `a` and `b`.
///
/// Backtracking prefers the diagonal step, then `(i-1, j)`, then `(i, j-1)`.
pub fn align<T: Scalar>(a: &[Point<T>], b: &[Point<T>]) -> Result<Alignment<T>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("dtw sequence"));
    }
    let (n, m) = (a.len(), b.len());
    let inf = T::infinity();
    let mut acc = vec![inf; n * m];
    let at = |i: usize, j: usize| i * m + j;
    for i in 0..n {
        for j in 0..m {
            let local = a[i].dist(&b[j]);
            let prev = if i == 0 && j == 0 {
                T::zero()
            } else {
                let diag = if i > 0 && j > 0 { acc[at(i - 1, j - 1)] } else { inf };
                let up = if i > 0 { acc[at(i - 1, j)] } else { inf };
                let left = if j > 0 { acc[at(i, j - 1)] } else { inf };
                diag.min(up).min(left)
            };
            acc[at(i, j)] = prev + local;
        }
    }

    let mut path = vec![(n - 1, m - 1)];
    let mut margin = inf;
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 { acc[at(i - 1, j - 1)] } else { inf };
        let up = if i > 0 { acc[at(i - 1, j)] } else { inf };
        let left = if j > 0 { acc[at(i, j - 1)] } else { inf };
        let best = diag.min(up).min(left);
        let mut options = [diag, up, left];
        options.sort_by(|x, y| x.partial_cmp(y).unwrap());
        if options[1].is_finite() {
            margin = margin.min(options[1] - options[0]);
        }
        if diag == best {
            i -= 1;
            j -= 1;
        } else if up == best {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(Alignment {
        cost: acc[at(n - 1, m - 1)],
        path,
        decision_margin: margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xy: &[(f64, f64)]) -> Vec<Point<f64>> {
        xy.iter().map(|&p| p.into()).collect()
    }

    #[test]
    fn aligns_resampled_line() {
        let a = pts(&[(0., 0.), (2., 0.)]);
        let b = pts(&[(0., 0.), (1., 0.), (2., 0.)]);
        let al = align(&a, &b).unwrap();
        assert_eq!(al.cost, 1.0);
        assert_eq!(al.path.first(), Some(&(0, 0)));
        assert_eq!(al.path.last(), Some(&(1, 2)));
    }

    #[test]
    fn parallel_lines_align_diagonally() {
        let a = pts(&[(0., 0.), (1., 0.), (2., 0.), (3., 0.)]);
        let b = pts(&[(0., 5.), (1., 5.), (2., 5.), (3., 5.)]);
        let al = align(&a, &b).unwrap();
        assert_eq!(al.path, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        assert_eq!(al.cost, 20.0);
    }

    #[test]
    fn single_points_and_empty() {
        let al = align(&pts(&[(0., 0.)]), &pts(&[(3., 4.)])).unwrap();
        assert_eq!(al.cost, 5.0);
        assert_eq!(al.path, vec![(0, 0)]);
        assert!(al.decision_margin.is_infinite());
        assert!(align::<f64>(&[], &pts(&[(0., 0.)])).is_err());
    }
}
