//! Length measurement from label rasters: 8-connected components,
//! Zhang–Suen thinning, the longest geodesic path through the skeleton, and
//! shoulder-to-border crypt depth through a DTW alignment.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::Serialize;

use crate::dtw;
use crate::error::{Error, Result};
use crate::geom::{polyline_length, Point};
use crate::grading::{self, GradeThresholds, Marsh};
use crate::raster::{LabelMap, BORDER, CRYPT, SHOULDER, VILLI};
use crate::scalar::Scalar;

pub const DEFAULT_MIN_AREA: usize = 20;

/// An ordered pixel path (pixel centres at integer coordinates).
pub type Contour<T> = Vec<Point<T>>;

/// Pixels of one 8-connected component in raster order (`y`, then `x`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub pixels: Vec<(usize, usize)>,
}

impl Component {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

const NEIGHBOURS8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// 8-connected components of `label` with at least `min_area` pixels,
/// ordered by their first pixel in raster order.
pub fn connected_components(m: &LabelMap, label: u8, min_area: usize) -> Vec<Component> {
    let (w, h) = (m.width(), m.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if seen[y * w + x] || m.get(x, y) != label {
                continue;
            }
            seen[y * w + x] = true;
            let mut pixels = vec![];
            let mut queue = VecDeque::from([(x, y)]);
            while let Some((cx, cy)) = queue.pop_front() {
                pixels.push((cx, cy));
                for (dx, dy) in NEIGHBOURS8 {
                    let (nx, ny) = (cx as isize + dx, cy as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if !seen[ny * w + nx] && m.get(nx, ny) == label {
                        seen[ny * w + nx] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
            if pixels.len() >= min_area {
                pixels.sort_unstable_by_key(|&(px, py)| (py, px));
                out.push(Component { pixels });
            }
        }
    }
    out
}

/// Binary working grid with a one-pixel empty frame around the component.
struct Grid {
    w: usize,
    h: usize,
    x0: usize,
    y0: usize,
    cells: Vec<bool>,
}

impl Grid {
    fn from_component(c: &Component) -> Self {
        let x0 = c.pixels.iter().map(|p| p.0).min().unwrap_or(0);
        let y0 = c.pixels.iter().map(|p| p.1).min().unwrap_or(0);
        let x1 = c.pixels.iter().map(|p| p.0).max().unwrap_or(0);
        let y1 = c.pixels.iter().map(|p| p.1).max().unwrap_or(0);
        let (w, h) = (x1 - x0 + 3, y1 - y0 + 3);
        let mut cells = vec![false; w * h];
        for &(x, y) in &c.pixels {
            cells[(y - y0 + 1) * w + (x - x0 + 1)] = true;
        }
        Self { w, h, x0, y0, cells }
    }

    fn at(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.w + x]
    }

    /// P2..P9: N, NE, E, SE, S, SW, W, NW.
    fn ring(&self, x: usize, y: usize) -> [bool; 8] {
        [
            self.at(x, y - 1),
            self.at(x + 1, y - 1),
            self.at(x + 1, y),
            self.at(x + 1, y + 1),
            self.at(x, y + 1),
            self.at(x - 1, y + 1),
            self.at(x - 1, y),
            self.at(x - 1, y - 1),
        ]
    }

    fn to_image(&self, x: usize, y: usize) -> (usize, usize) {
        (x + self.x0 - 1, y + self.y0 - 1)
    }
}

fn zhang_suen(g: &mut Grid) {
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 1..g.h - 1 {
                for x in 1..g.w - 1 {
                    if !g.at(x, y) {
                        continue;
                    }
                    let p = g.ring(x, y);
                    let b = p.iter().filter(|&&v| v).count();
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    let (n, e, s, wst) = (p[0], p[2], p[4], p[6]);
                    let cond = if pass == 0 {
                        !(n && e && s) && !(e && s && wst)
                    } else {
                        !(n && e && wst) && !(n && s && wst)
                    };
                    if (2..=6).contains(&b) && a == 1 && cond {
                        remove.push(y * g.w + x);
                    }
                }
            }
            changed |= !remove.is_empty();
            for i in remove {
                g.cells[i] = false;
            }
        }
        if !changed {
            break;
        }
    }
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (dist, node)
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over 8-connected skeleton pixels with step costs 1 and sqrt(2).
fn geodesic(nodes: &[(usize, usize)], adj: &[Vec<(usize, f64)>], src: usize) -> (Vec<f64>, Vec<usize>) {
    let mut dist = vec![f64::INFINITY; nodes.len()];
    let mut prev = vec![usize::MAX; nodes.len()];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(HeapItem { dist: 0.0, node: src });
    while let Some(HeapItem { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, wgt) in &adj[node] {
            let nd = d + wgt;
            if nd < dist[next] {
                dist[next] = nd;
                prev[next] = node;
                heap.push(HeapItem { dist: nd, node: next });
            }
        }
    }
    (dist, prev)
}

fn farthest(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &d) in dist.iter().enumerate() {
        if d.is_finite() && d > dist[best] {
            best = i;
        }
    }
    best
}

/// Thins a component to a one-pixel skeleton and returns the longest
/// geodesic path through it (double sweep; exact on tree-shaped skeletons).
/// Side branches are discarded.
pub fn skeletonize<T: Scalar>(component: &Component) -> Contour<T> {
    if component.is_empty() {
        return Vec::new();
    }
    let mut g = Grid::from_component(component);
    zhang_suen(&mut g);

    let mut nodes = Vec::new();
    let mut index = vec![usize::MAX; g.w * g.h];
    for y in 1..g.h - 1 {
        for x in 1..g.w - 1 {
            if g.at(x, y) {
                index[y * g.w + x] = nodes.len();
                nodes.push((x, y));
            }
        }
    }
    if nodes.is_empty() {
        // thinning removed everything (only happens for tiny blobs); keep the
        // first pixel as a point skeleton
        let (x, y) = component.pixels[0];
        return vec![Point::new(T::from_usize(x).unwrap(), T::from_usize(y).unwrap())];
    }
    let adj: Vec<Vec<(usize, f64)>> = nodes
        .iter()
        .map(|&(x, y)| {
            NEIGHBOURS8
                .iter()
                .filter_map(|&(dx, dy)| {
                    let (nx, ny) = ((x as isize + dx) as usize, (y as isize + dy) as usize);
                    let j = index[ny * g.w + nx];
                    (j != usize::MAX).then(|| (j, if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 }))
                })
                .collect()
        })
        .collect();

    let (d0, _) = geodesic(&nodes, &adj, 0);
    let a = farthest(&d0);
    let (d1, prev) = geodesic(&nodes, &adj, a);
    let mut cur = farthest(&d1);
    let mut path = vec![cur];
    while cur != a {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    let mut cells: Vec<(usize, usize)> = path.into_iter().map(|i| nodes[i]).collect();

    // thinning eats roughly half the stroke width at each end; walk the
    // terminal direction back out to the region boundary
    let original = Grid::from_component(component);
    for _ in 0..2 {
        extend_end(&mut cells, &original);
        cells.reverse();
    }
    cells
        .into_iter()
        .map(|(x, y)| {
            let (x, y) = g.to_image(x, y);
            Point::new(T::from_usize(x).unwrap(), T::from_usize(y).unwrap())
        })
        .collect()
}

fn extend_end(cells: &mut Vec<(usize, usize)>, region: &Grid) {
    let n = cells.len();
    if n < 2 {
        return;
    }
    let (px, py) = cells[n - 2];
    let (mut x, mut y) = cells[n - 1];
    let (dx, dy) = (x as isize - px as isize, y as isize - py as isize);
    loop {
        let (nx, ny) = ((x as isize + dx) as usize, (y as isize + dy) as usize);
        // the frame is always empty, so this stops before leaving the grid
        if !region.at(nx, ny) || cells.contains(&(nx, ny)) {
            break;
        }
        cells.push((nx, ny));
        (x, y) = (nx, ny);
    }
}

/// Length of an 8-connected pixel path: 1 per axial step, sqrt(2) per
/// diagonal step.
pub fn skeleton_length<T: Scalar>(c: &[Point<T>]) -> T {
    polyline_length(c)
}

/// Skeleton curve of a shoulder or border class region.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassContour<T> {
    pub points: Contour<T>,
    /// The label does not occur in the raster.
    pub missing: bool,
}

/// Skeleton of the largest region of `label`, oriented so that it starts at
/// the end with the smaller `x` (then smaller `y`).
pub fn extract_class_contour<T: Scalar>(m: &LabelMap, label: u8) -> ClassContour<T> {
    let comps = connected_components(m, label, 1);
    let Some(largest) = comps
        .iter()
        .fold(None::<&Component>, |best, c| match best {
            Some(b) if b.len() >= c.len() => Some(b),
            _ => Some(c),
        })
    else {
        return ClassContour {
            points: Vec::new(),
            missing: true,
        };
    };
    let mut points = skeletonize::<T>(largest);
    if let (Some(first), Some(last)) = (points.first(), points.last()) {
        if (last.x, last.y) < (first.x, first.y) {
            points.reverse();
        }
    }
    ClassContour {
        points,
        missing: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample<T> {
    pub shoulder: Point<T>,
    pub border: Point<T>,
    pub depth: T,
}

/// For each shoulder point, the distance to its DTW-aligned border point
/// (the nearest one when the alignment maps it to several).
pub fn crypt_depth_profile<T: Scalar>(shoulder: &[Point<T>], border: &[Point<T>]) -> Result<Vec<DepthSample<T>>> {
    if shoulder.is_empty() || border.is_empty() {
        return Err(Error::Empty("shoulder or border contour"));
    }
    let al = dtw::align(shoulder, border)?;
    let mut best: Vec<Option<(T, usize)>> = vec![None; shoulder.len()];
    for &(i, j) in &al.path {
        let d = shoulder[i].dist(&border[j]);
        if best[i].map_or(true, |(bd, _)| d < bd) {
            best[i] = Some((d, j));
        }
    }
    Ok(best
        .into_iter()
        .enumerate()
        .map(|(i, b)| {
            let (depth, j) = b.expect("every index lies on the warping path");
            DepthSample {
                shoulder: shoulder[i],
                border: border[j],
                depth,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskMeasurement {
    pub villi_lengths: Vec<f64>,
    pub crypt_lengths: Vec<f64>,
    pub mean_crypt_depth: Option<f64>,
}

impl MaskMeasurement {
    /// Mean villi length over mean crypt length; `None` unless both exist.
    pub fn ratio(&self) -> Option<f64> {
        mean(&self.villi_lengths)
            .zip(mean(&self.crypt_lengths))
            .filter(|&(_, c)| c > 0.0)
            .map(|(v, c)| v / c)
    }

    pub fn grade(&self, thresholds: &GradeThresholds) -> Option<Marsh> {
        self.ratio().and_then(|r| grading::marsh_grade(r, thresholds).ok())
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Villi and crypt lengths per component plus the mean crypt depth when
/// both shoulder and border are present.
pub fn measure_masks(m: &LabelMap, min_area: usize) -> MaskMeasurement {
    let lengths = |label| -> Vec<f64> {
        connected_components(m, label, min_area)
            .iter()
            .map(|c| skeleton_length(&skeletonize::<f64>(c)))
            .collect()
    };
    let shoulder = extract_class_contour::<f64>(m, SHOULDER);
    let border = extract_class_contour::<f64>(m, BORDER);
    let mean_crypt_depth = if shoulder.missing || border.missing {
        None
    } else {
        crypt_depth_profile(&shoulder.points, &border.points)
            .ok()
            .and_then(|d| mean(&d.iter().map(|s| s.depth).collect::<Vec<_>>()))
    };
    MaskMeasurement {
        villi_lengths: lengths(VILLI),
        crypt_lengths: lengths(CRYPT),
        mean_crypt_depth,
    }
}
