//! Marching-squares isolines and the two contour features.
//!
//! Coordinates are in grid units with `x` the column index and `y` the row
//! index, origin at the top-left cell. A cell counts as inside a level when
//! its value is at or above it.

use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::dataset::PressureFrame;

/// Upper bound on the number of contour levels per frame.
pub const MAX_CONTOUR_LEVELS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<Point>,
    /// Closed polylines do not repeat their first vertex.
    pub closed: bool,
}

/// Isolines for every selected level of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourSet {
    pub levels: Vec<f64>,
    /// `polylines[i]` belongs to `levels[i]`.
    pub polylines: Vec<Vec<Polyline>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourFeatures {
    pub num_isolines: usize,
    pub isoline_coord_sum: f64,
}

/// Steps 2, 5, 10, 20, 50, 100, ... in increasing order.
fn step_ladder() -> impl Iterator<Item = f64> {
    (0..).flat_map(|decade: i32| {
        let scale = 10f64.powi(decade);
        [2.0 * scale, 5.0 * scale, 10.0 * scale]
    })
}

/// Picks the smallest step from the 2-5-10 ladder with at most
/// [`MAX_CONTOUR_LEVELS`] multiples in `(min, max]` and returns those
/// multiples in ascending order. Empty when the frame is constant.
pub fn select_contour_levels(frame: &PressureFrame) -> Vec<f64> {
    levels_for_range(frame.min_value(), frame.max_value())
}

fn levels_for_range(min: f64, max: f64) -> Vec<f64> {
    if max.is_nan() || min.is_nan() || max <= min {
        return Vec::new();
    }
    for step in step_ladder() {
        let first = (min / step).floor() as i64 + 1;
        let last = (max / step).floor() as i64;
        let count = (last - first + 1).max(0) as usize;
        if count <= MAX_CONTOUR_LEVELS {
            return (first..=last).map(|m| m as f64 * step).collect();
        }
    }
    unreachable!("ladder is unbounded")
}

/// Index of a grid edge in raster order: for each row, the horizontal edges
/// left to right, then the vertical edges down to the next row.
type EdgeId = usize;

struct EdgeLayout {
    cols: usize,
}

impl EdgeLayout {
    fn stride(&self) -> usize {
        2 * self.cols - 1
    }
    fn horizontal(&self, r: usize, c: usize) -> EdgeId {
        r * self.stride() + c
    }
    fn vertical(&self, r: usize, c: usize) -> EdgeId {
        r * self.stride() + self.cols - 1 + c
    }
}

/// Crossings and chained polylines at one level.
pub(crate) struct LevelTrace {
    /// One vertex per crossed edge, in raster edge order.
    pub crossings: Vec<(EdgeId, Point)>,
    pub polylines: Vec<Polyline>,
}

fn interpolate(level: f64, p1: f64, p2: f64, a: Point, b: Point) -> Point {
    let r = (level - p1) / (p2 - p1);
    Point {
        x: a.x + r * (b.x - a.x),
        y: a.y + r * (b.y - a.y),
    }
}

pub(crate) fn trace_level(values: &[f64], rows: usize, cols: usize, level: f64) -> LevelTrace {
    if rows < 2 || cols < 2 {
        return LevelTrace {
            crossings: Vec::new(),
            polylines: Vec::new(),
        };
    }
    let at = |r: usize, c: usize| values[r * cols + c];
    let inside = |r: usize, c: usize| at(r, c) >= level;
    let pt = |r: usize, c: usize| Point {
        x: c as f64,
        y: r as f64,
    };
    let layout = EdgeLayout { cols };

    let mut crossings: Vec<(EdgeId, Point)> = Vec::new();
    for r in 0..rows {
        for c in 0..cols - 1 {
            if inside(r, c) != inside(r, c + 1) {
                let p = interpolate(level, at(r, c), at(r, c + 1), pt(r, c), pt(r, c + 1));
                crossings.push((layout.horizontal(r, c), p));
            }
        }
        if r + 1 < rows {
            for c in 0..cols {
                if inside(r, c) != inside(r + 1, c) {
                    let p = interpolate(level, at(r, c), at(r + 1, c), pt(r, c), pt(r + 1, c));
                    crossings.push((layout.vertical(r, c), p));
                }
            }
        }
    }
    debug_assert!(crossings.windows(2).all(|w| w[0].0 < w[1].0));

    let node = |edge: EdgeId| -> usize {
        crossings
            .binary_search_by_key(&edge, |(e, _)| *e)
            .expect("segment endpoint is a crossing")
    };
    let mut links: Vec<[usize; 2]> = vec![[usize::MAX; 2]; crossings.len()];
    let mut link = |a: usize, b: usize| {
        for (from, to) in [(a, b), (b, a)] {
            let slot = if links[from][0] == usize::MAX { 0 } else { 1 };
            debug_assert_eq!(links[from][slot], usize::MAX);
            links[from][slot] = to;
        }
    };

    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            // Corners clockwise from top-left, each with its two edges.
            let corners = [
                inside(r, c),
                inside(r, c + 1),
                inside(r + 1, c + 1),
                inside(r + 1, c),
            ];
            let top = layout.horizontal(r, c);
            let right = layout.vertical(r, c + 1);
            let bottom = layout.horizontal(r + 1, c);
            let left = layout.vertical(r, c);
            let corner_edges = [(top, left), (top, right), (right, bottom), (bottom, left)];

            let crossed: Vec<EdgeId> = [
                (corners[0] != corners[1], top),
                (corners[1] != corners[2], right),
                (corners[3] != corners[2], bottom),
                (corners[0] != corners[3], left),
            ]
            .into_iter()
            .filter_map(|(hit, e)| hit.then_some(e))
            .collect();

            match crossed.len() {
                0 => {}
                2 => link(node(crossed[0]), node(crossed[1])),
                4 => {
                    // Saddle: isolate the two corners that disagree with the
                    // square's center.
                    let center =
                        (at(r, c) + at(r, c + 1) + at(r + 1, c + 1) + at(r + 1, c)) / 4.0;
                    let center_inside = center >= level;
                    for (k, &corner_inside) in corners.iter().enumerate() {
                        if corner_inside != center_inside {
                            let (a, b) = corner_edges[k];
                            link(node(a), node(b));
                        }
                    }
                }
                n => unreachable!("{n} crossings on a square"),
            }
        }
    }

    let polylines = chain(&crossings, &links);
    LevelTrace {
        crossings,
        polylines,
    }
}

fn chain(crossings: &[(EdgeId, Point)], links: &[[usize; 2]]) -> Vec<Polyline> {
    let degree = |i: usize| links[i].iter().filter(|&&n| n != usize::MAX).count();
    let mut visited = vec![false; crossings.len()];
    let mut polylines = Vec::new();

    let walk = |start: usize, visited: &mut Vec<bool>| -> Vec<Point> {
        let mut points = Vec::new();
        let mut cur = start;
        loop {
            visited[cur] = true;
            points.push(crossings[cur].1);
            match links[cur]
                .iter()
                .copied()
                .find(|&n| n != usize::MAX && !visited[n])
            {
                Some(next) => cur = next,
                None => break,
            }
        }
        points
    };

    // Open lines start and end on the boundary, where crossings have one link.
    for i in 0..crossings.len() {
        if !visited[i] && degree(i) == 1 {
            let points = walk(i, &mut visited);
            polylines.push(Polyline {
                points,
                closed: false,
            });
        }
    }
    for i in 0..crossings.len() {
        if !visited[i] {
            let points = walk(i, &mut visited);
            polylines.push(Polyline {
                points,
                closed: true,
            });
        }
    }
    polylines
}

/// Isolines of `frame` at `level`, which must lie in `(min, max]`.
pub fn trace_isolines(frame: &PressureFrame, level: f64) -> Result<Vec<Polyline>, FeatureError> {
    let (min, max) = (frame.min_value(), frame.max_value());
    if !(level > min && level <= max) {
        return Err(FeatureError::LevelOutOfRange { level, min, max });
    }
    Ok(trace_level(&frame.values, frame.grid.rows, frame.grid.cols, level).polylines)
}

/// Isolines at every level chosen by [`select_contour_levels`].
pub fn trace_contours(frame: &PressureFrame) -> ContourSet {
    let levels = select_contour_levels(frame);
    let polylines = levels
        .iter()
        .map(|&l| trace_level(&frame.values, frame.grid.rows, frame.grid.cols, l).polylines)
        .collect();
    ContourSet { levels, polylines }
}

/// Number of polylines over all selected levels, and the sum of `x + y`
/// over all of their vertices.
///
/// The coordinate sum is accumulated level by level in raster edge order so
/// the result does not depend on how polylines were chained.
pub fn extract_contour_features(frame: &PressureFrame) -> ContourFeatures {
    let mut num_isolines = 0;
    let mut isoline_coord_sum = 0.0;
    for level in select_contour_levels(frame) {
        let trace = trace_level(&frame.values, frame.grid.rows, frame.grid.cols, level);
        num_isolines += trace.polylines.len();
        for (_, p) in &trace.crossings {
            isoline_coord_sum += p.x + p.y;
        }
    }
    ContourFeatures {
        num_isolines,
        isoline_coord_sum,
    }
}
