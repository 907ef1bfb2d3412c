use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::data::{Dataset, GridAxis, QueryGrid};
use crate::error::{Error, Result};
use crate::sim::quantile_sorted;

pub const DEFAULT_RESOLUTION: usize = 60;
/// Quantile of nearest-neighbour distances used as the mask radius when q > 2.
pub const NN_MASK_QUANTILE: f64 = 0.95;

/// Rectangular grid over the observed covariate ranges: `res` points for
/// q = 1, `res × res` for q = 2.
pub fn auto_grid(data: &Dataset, res: usize) -> Result<QueryGrid> {
    if res < 2 {
        return Err(Error::invalid("grid resolution must be at least 2"));
    }
    if data.q() > 2 {
        return Err(Error::UnsupportedGrid(format!(
            "automatic rectangular grids need q <= 2 (q = {}); pass explicit grid points",
            data.q()
        )));
    }
    let axes = data
        .covariate_ranges()
        .into_iter()
        .map(|(min, max)| GridAxis { min, max, count: res })
        .collect();
    QueryGrid::rectangular(axes)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull (Andrew's monotone chain), no collinear
/// vertices.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Point-in-hull test; points on the boundary count as inside. Works for
/// degenerate hulls (a point or a segment).
pub fn in_hull(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    let scale = hull
        .iter()
        .flat_map(|h| h.iter())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let eps = 1e-12 * scale * scale;
    match hull.len() {
        0 => false,
        1 => (hull[0][0] - p[0]).abs() <= 1e-12 * scale && (hull[0][1] - p[1]).abs() <= 1e-12 * scale,
        2 => {
            let (a, b) = (hull[0], hull[1]);
            let within = |k: usize| p[k] >= a[k].min(b[k]) - 1e-12 * scale && p[k] <= a[k].max(b[k]) + 1e-12 * scale;
            cross(a, b, p).abs() <= eps && within(0) && within(1)
        }
        m => (0..m).all(|i| cross(hull[i], hull[(i + 1) % m], p) >= -eps),
    }
}

fn nearest(z: ArrayView2<'_, f64>, p: &[f64], skip: Option<usize>) -> f64 {
    let mut best = f64::INFINITY;
    for (i, row) in z.rows().into_iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let d: f64 = row.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best {
            best = d;
        }
    }
    best.sqrt()
}

/// `masked[i]` is true when grid point `i` lies outside the observed data:
/// outside the convex hull for q = 2, farther than the 95th percentile of
/// nearest-neighbour distances from every observation otherwise.
pub fn support_mask(data: &Dataset, grid: &QueryGrid) -> Result<Vec<bool>> {
    if grid.q() != data.q() {
        return Err(Error::DimensionMismatch {
            what: "grid covariates",
            expected: data.q(),
            found: grid.q(),
        });
    }
    let z = data.covariates();
    let pts = grid.points();
    if data.q() == 2 {
        let obs: Vec<[f64; 2]> = z.rows().into_iter().map(|r| [r[0], r[1]]).collect();
        let hull = convex_hull(&obs);
        return Ok(pts
            .rows()
            .into_iter()
            .map(|r| !in_hull(&hull, [r[0], r[1]]))
            .collect());
    }
    if data.q() == 1 {
        let (lo, hi) = data.covariate_ranges()[0];
        return Ok(pts.column(0).iter().map(|&v| v < lo || v > hi).collect());
    }
    let mut nn: Vec<f64> = (0..data.n())
        .into_par_iter()
        .map(|i| nearest(z, &z.row(i).to_vec(), Some(i)))
        .collect();
    nn.sort_by(f64::total_cmp);
    let radius = quantile_sorted(&nn, NN_MASK_QUANTILE).unwrap_or(0.0);
    Ok((0..grid.len())
        .into_par_iter()
        .map(|g| nearest(z, &pts.row(g).to_vec(), None) > radius)
        .collect())
}
