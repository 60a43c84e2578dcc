//! Nipple-marker (BB) detection.
//!
//! Candidates come from a gradient-voting circle Hough transform: every
//! strong edge pixel votes along its gradient direction at each radius in
//! `[r_min, r_max]`, peaks of the centre accumulator are candidate centres,
//! and each radius is the mode of edge distances around its centre. The BB
//! is then the candidate whose centre sits on the image maximum with a
//! uniform 3x3 neighbourhood.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Bounds, Point, Segment};
use crate::imaging::GrayImage;
use crate::view::{Laterality, Side};

#[derive(Debug, Error, PartialEq)]
pub enum BbError {
    #[error("BB on chest wall edge at ({0}, {1}); PNL has zero length")]
    OnChestWall(f64, f64),
    #[error("BB centre ({0}, {1}) outside the image")]
    OutsideImage(f64, f64),
    #[error("invalid BB parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
    /// Accumulator support at the centre.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BbParams {
    pub r_min: f64,
    pub r_max: f64,
    /// Fraction of the strongest gradient an edge pixel must reach.
    pub edge_gradient_threshold: f64,
    /// Minimum smoothed accumulator votes for a centre.
    pub accumulator_peak_threshold: f64,
    pub min_center_separation: f64,
    pub uniformity_tolerance: f64,
}

impl Default for BbParams {
    fn default() -> Self {
        Self {
            r_min: 10.0,
            r_max: 20.0,
            edge_gradient_threshold: 0.2,
            accumulator_peak_threshold: 40.0,
            min_center_separation: 40.0,
            uniformity_tolerance: 1e-3,
        }
    }
}

impl BbParams {
    pub fn validate(&self) -> Result<(), BbError> {
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            return Err(BbError::Params(format!("need 0 < r_min < r_max, got {} and {}", self.r_min, self.r_max)));
        }
        if !(0.0..=1.0).contains(&self.edge_gradient_threshold) {
            return Err(BbError::Params("edge_gradient_threshold must be in [0, 1]".into()));
        }
        if self.uniformity_tolerance < 0.0 || self.min_center_separation < 0.0 || self.accumulator_peak_threshold < 0.0 {
            return Err(BbError::Params("thresholds must be non-negative".into()));
        }
        Ok(())
    }
}

struct Gradients {
    gx: Vec<f64>,
    gy: Vec<f64>,
    mag: Vec<f64>,
}

/// 3x3 Sobel; the one-pixel border is left at zero.
fn sobel(img: &GrayImage) -> Gradients {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let px = img.pixels();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut mag = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let at = |dx: isize, dy: isize| px[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            let sx = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
            let sy = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
            let i = y * w + x;
            gx[i] = sx;
            gy[i] = sy;
            mag[i] = sx.hypot(sy);
        }
    }
    Gradients { gx, gy, mag }
}

fn deposit(acc: &mut [f64], w: usize, h: usize, x: f64, y: f64) {
    if !(x >= 0.0 && y >= 0.0) {
        return;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    if x0 + 1 >= w || y0 + 1 >= h {
        return;
    }
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let i = y0 * w + x0;
    acc[i] += (1.0 - fx) * (1.0 - fy);
    acc[i + 1] += fx * (1.0 - fy);
    acc[i + w] += (1.0 - fx) * fy;
    acc[i + w + 1] += fx * fy;
}

/// Circle candidates sorted by descending score. Expects a normalised image.
pub fn hough_circles(img: &GrayImage, p: &BbParams) -> Vec<Circle> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < 3 || h < 3 || p.validate().is_err() {
        return Vec::new();
    }
    let grad = sobel(img);
    let max_mag = grad.mag.iter().cloned().fold(0.0, f64::max);
    if max_mag <= 1e-12 {
        return Vec::new();
    }
    let thr = (p.edge_gradient_threshold * max_mag).max(1e-12);
    let edges: Vec<usize> = (0..w * h).filter(|&i| grad.mag[i] >= thr).collect();

    // one accumulator plane per integer radius, so only edges that agree on
    // both centre and radius pile up
    let radii: Vec<f64> = (0..=(p.r_max - p.r_min).floor() as usize).map(|k| p.r_min + k as f64).collect();
    let mut smooth = vec![0.0; w * h];
    let mut best_r = vec![0usize; w * h];
    let mut acc = vec![0.0; w * h];
    for (k, &r) in radii.iter().enumerate() {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for &i in &edges {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let (ux, uy) = (grad.gx[i] / grad.mag[i], grad.gy[i] / grad.mag[i]);
            deposit(&mut acc, w, h, x + ux * r, y + uy * r);
            deposit(&mut acc, w, h, x - ux * r, y - uy * r);
        }
        // 3x3 box sum gathers the bilinear spread of each vote
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut s = 0.0;
                for dy in 0..3 {
                    let row = (y + dy - 1) * w;
                    s += acc[row + x - 1] + acc[row + x] + acc[row + x + 1];
                }
                let i = y * w + x;
                if s > smooth[i] {
                    smooth[i] = s;
                    best_r[i] = k;
                }
            }
        }
    }

    let mut peaks: Vec<(usize, f64)> = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let v = smooth[y * w + x];
            if v < p.accumulator_peak_threshold || v <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let j = (y as isize + dy) as usize * w + (x as isize + dx) as usize;
                    // ties resolve towards the earlier pixel in raster order
                    if smooth[j] > v || (smooth[j] == v && j < y * w + x) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                peaks.push((y * w + x, v));
            }
        }
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut out: Vec<Circle> = Vec::new();
    for (i, score) in peaks {
        let (px, py) = (i % w, i / w);
        let center = refine_center(&smooth, w, h, px, py);
        if out.iter().any(|c| c.center.sub(center).norm() < p.min_center_separation) {
            continue;
        }
        if let Some((center, radius)) = refine_circle(&edges, &grad, w, center, radii[best_r[i]], p) {
            out.push(Circle { center, radius, score });
        }
    }
    out
}

fn refine_center(acc: &[f64], w: usize, h: usize, x: usize, y: usize) -> Point {
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
        for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
            let v = acc[yy * w + xx];
            sx += v * xx as f64;
            sy += v * yy as f64;
            sw += v;
        }
    }
    if sw > 0.0 {
        Point::new(sx / sw, sy / sw)
    } else {
        Point::new(x as f64, y as f64)
    }
}

/// Cosine above which an edge's gradient counts as pointing along the ray
/// from a candidate centre.
const RADIAL_COS: f64 = 0.9;

/// Edge points whose gradient is aligned with the ray from `c`, as
/// `(distance, magnitude, position)`.
fn radial_edges(edges: &[usize], g: &Gradients, w: usize, c: Point, max_d: f64) -> Vec<(f64, f64, Point)> {
    edges
        .iter()
        .filter_map(|&i| {
            let q = Point::new((i % w) as f64, (i / w) as f64);
            let v = q.sub(c);
            let d = v.norm();
            if d > max_d || d < 1.0 {
                return None;
            }
            let cos = (v.x * g.gx[i] + v.y * g.gy[i]).abs() / (d * g.mag[i]);
            (cos >= RADIAL_COS).then_some((d, g.mag[i], q))
        })
        .collect()
}

/// Mode of radial edge distances (1 px bins, gradient weighted), refined by
/// the weighted mean distance within 1.5 px of the mode.
fn estimate_radius(near: &[(f64, f64, Point)], p: &BbParams) -> Option<f64> {
    let lo = p.r_min.floor() as usize;
    let hi = p.r_max.ceil() as usize;
    let mut hist = vec![0.0; hi + 2];
    for &(d, m, _) in near {
        let bin = d.round() as usize;
        if bin + 1 >= lo && bin <= hi + 1 {
            hist[bin.min(hi + 1)] += m;
        }
    }
    let mode = (lo..=hi).max_by(|&a, &b| hist[a].total_cmp(&hist[b]).then(b.cmp(&a)))?;
    if hist[mode] <= 0.0 {
        return None;
    }
    let (num, den) = near
        .iter()
        .filter(|(d, _, _)| (d - mode as f64).abs() <= 1.5)
        .fold((0.0, 0.0), |(n, s), (d, m, _)| (n + d * m, s + m));
    Some((num / den).clamp(p.r_min, p.r_max))
}

/// Radius from the radial edges around `center`, searched within 2 px of
/// the accumulator's best plane.
fn refine_circle(edges: &[usize], g: &Gradients, w: usize, center: Point, plane_r: f64, p: &BbParams) -> Option<(Point, f64)> {
    let window = BbParams { r_min: (plane_r - 2.0).max(p.r_min), r_max: (plane_r + 2.0).min(p.r_max), ..*p };
    let near = radial_edges(edges, g, w, center, window.r_max + 2.0);
    Some((center, estimate_radius(&near, &window)?))
}

/// True when the centre pixel equals the image maximum and all nine pixels
/// of its 3x3 neighbourhood match it, both within `tol`.
pub fn passes_uniformity(img: &GrayImage, center: Point, image_max: f64, tol: f64) -> bool {
    let (cx, cy) = (center.x.round(), center.y.round());
    if cx < 1.0 || cy < 1.0 || cx > f64::from(img.width()) - 2.0 || cy > f64::from(img.height()) - 2.0 {
        return false;
    }
    let (cx, cy) = (cx as u32, cy as u32);
    let v = img.get(cx, cy);
    if (v - image_max).abs() > tol {
        return false;
    }
    (cy - 1..=cy + 1).all(|y| (cx - 1..=cx + 1).all(|x| (img.get(x, y) - v).abs() <= tol))
}

/// Highest-scoring candidate passing the saturation + 9-pixel uniformity rule.
pub fn filter_bb(img: &GrayImage, candidates: &[Circle], p: &BbParams) -> Option<Circle> {
    let (_, max) = img.min_max();
    candidates
        .iter()
        .filter(|c| passes_uniformity(img, c.center, max, p.uniformity_tolerance))
        .max_by(|a, b| a.score.total_cmp(&b.score))
        .copied()
}

pub fn detect_bb(img: &GrayImage, p: &BbParams) -> Option<Circle> {
    filter_bb(img, &hough_circles(img, p), p)
}

/// How to pick the chest-wall edge of a CC image.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "side")]
pub enum ChestWallRule {
    /// The edge whose border strip is brighter (tissue touches the chest
    /// wall; the contour apex side is mostly background).
    #[default]
    Auto,
    /// Chest wall for right breasts; left breasts use the opposite edge.
    ByLaterality(Side),
    Fixed(Side),
}

impl ChestWallRule {
    pub fn resolve(&self, img: &GrayImage, laterality: Laterality) -> Side {
        match *self {
            ChestWallRule::Fixed(side) => side,
            ChestWallRule::ByLaterality(right) => match laterality {
                Laterality::Right => right,
                Laterality::Left => right.opposite(),
            },
            ChestWallRule::Auto => {
                let strip = (img.width() / 20).max(1);
                let mean = |xs: std::ops::Range<u32>| {
                    let mut s = 0.0;
                    for y in 0..img.height() {
                        for x in xs.clone() {
                            s += img.get(x, y);
                        }
                    }
                    s
                };
                let left = mean(0..strip);
                let right = mean(img.width() - strip..img.width());
                if right > left {
                    Side::Right
                } else {
                    Side::Left
                }
            }
        }
    }
}

/// Horizontal CC posterior nipple line from the BB to the chest-wall edge.
pub fn cc_pnl(dims: Bounds, bb: &Circle, chest_wall: Side) -> Result<Segment, BbError> {
    let c = bb.center;
    if !crate::geometry::point_in_bounds(c, dims) {
        return Err(BbError::OutsideImage(c.x, c.y));
    }
    let edge_x = match chest_wall {
        Side::Left => 0.0,
        Side::Right => f64::from(dims.width - 1),
    };
    Segment::new(c, Point::new(edge_x, c.y)).map_err(|_| BbError::OnChestWall(c.x, c.y))
}
