//! Joint image + annotation augmentation: horizontal flip and rotation about
//! the image centre with canvas expansion, so that no landmark is cropped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::ViewAnnotation;
use crate::geometry::{Bounds, GeometryError, Point};
use crate::imaging::GrayImage;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("flip probability must lie in [0, 1], got {0}")]
    FlipProbability(f64),
    #[error("max rotation must be finite and non-negative, got {0}")]
    MaxRotation(f64),
    #[error("annotation dimensions {ann:?} do not match image {img:?}")]
    DimsMismatch { img: Bounds, ann: Bounds },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    pub max_rotation_deg: f64,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip_probability: 0.5, max_rotation_deg: 15.0, rng_seed: 0 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(AugmentError::FlipProbability(self.flip_probability));
        }
        if !(self.max_rotation_deg.is_finite() && self.max_rotation_deg >= 0.0) {
            return Err(AugmentError::MaxRotation(self.max_rotation_deg));
        }
        Ok(())
    }
}

/// Seeded stream of random flips and rotations.
#[derive(Debug, Clone)]
pub struct Augmenter {
    cfg: AugmentConfig,
    rng: ChaCha8Rng,
}

impl Augmenter {
    pub fn new(cfg: AugmentConfig) -> Result<Self, AugmentError> {
        cfg.validate()?;
        Ok(Self { cfg, rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed) })
    }

    /// Draws the next (flip, angle) pair without touching any image.
    pub fn draw(&mut self) -> (bool, f64) {
        let flip = self.rng.gen_bool(self.cfg.flip_probability);
        let max = self.cfg.max_rotation_deg;
        let angle = if max > 0.0 { self.rng.gen_range(-max..=max) } else { 0.0 };
        (flip, angle)
    }

    pub fn apply(&mut self, img: &GrayImage, ann: &ViewAnnotation) -> Result<(GrayImage, ViewAnnotation), AugmentError> {
        let (flip, angle) = self.draw();
        let (img, ann) = if flip { hflip(img, ann)? } else { (img.clone(), ann.clone()) };
        if angle == 0.0 {
            return Ok((img, ann));
        }
        rotate_expand(&img, &ann, angle)
    }
}

fn check_dims(img: &GrayImage, ann: &ViewAnnotation) -> Result<(), AugmentError> {
    if img.bounds() != ann.image_dims {
        return Err(AugmentError::DimsMismatch { img: img.bounds(), ann: ann.image_dims });
    }
    Ok(())
}

/// Mirror columns; `x` becomes `(width - 1) - x` and laterality toggles.
pub fn hflip(img: &GrayImage, ann: &ViewAnnotation) -> Result<(GrayImage, ViewAnnotation), AugmentError> {
    check_dims(img, ann)?;
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, img.get(w - 1 - x, y));
        }
    }
    let last = f64::from(w - 1);
    let mut flipped = ann.map_points(ann.image_dims, |p| Point::new(last - p.x, p.y))?;
    flipped.laterality = ann.laterality.flipped();
    Ok((out, flipped))
}

/// Canvas size that holds a `w` x `h` image rotated by `angle_deg`.
pub fn expanded_canvas(w: u32, h: u32, angle_deg: f64) -> (u32, u32) {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (s, c) = (s.abs(), c.abs());
    let fit = |v: f64| ((v - 1e-9).ceil().max(1.0)) as u32;
    (fit(f64::from(w) * c + f64::from(h) * s), fit(f64::from(w) * s + f64::from(h) * c))
}

/// Rotate about the image centre by `angle_deg` (positive turns clockwise on
/// screen, since `y` points down), growing the canvas to the rotated
/// bounding box. New pixels are 0; sampling is bilinear.
pub fn rotate_expand(
    img: &GrayImage,
    ann: &ViewAnnotation,
    angle_deg: f64,
) -> Result<(GrayImage, ViewAnnotation), AugmentError> {
    check_dims(img, ann)?;
    let (w, h) = (img.width(), img.height());
    let (nw, nh) = expanded_canvas(w, h, angle_deg);
    let (s, c) = angle_deg.to_radians().sin_cos();
    let old_c = Point::new(f64::from(w - 1) / 2.0, f64::from(h - 1) / 2.0);
    let new_c = Point::new(f64::from(nw - 1) / 2.0, f64::from(nh - 1) / 2.0);

    let mut pixels = Vec::with_capacity(nw as usize * nh as usize);
    for y in 0..nh {
        for x in 0..nw {
            let dx = f64::from(x) - new_c.x;
            let dy = f64::from(y) - new_c.y;
            // inverse rotation back into the source frame
            let sx = c * dx + s * dy + old_c.x;
            let sy = -s * dx + c * dy + old_c.y;
            pixels.push(img.sample(sx, sy).unwrap_or(0.0));
        }
    }
    let out = GrayImage::new(nw, nh, pixels, img.bit_depth())
        .and_then(|i| i.with_spacing(img.spacing()))
        .expect("canvas is non-empty");

    let dims = Bounds::new(nw, nh)?;
    let (max_x, max_y) = (f64::from(nw - 1), f64::from(nh - 1));
    let rotated = ann.map_points(dims, |p| {
        let d = p.sub(old_c);
        let q = Point::new(c * d.x - s * d.y + new_c.x, s * d.x + c * d.y + new_c.y);
        // absorb rounding at exact multiples of 90 degrees
        let snap = |v: f64, hi: f64| if v < 0.0 && v > -1e-6 { 0.0 } else if v > hi && v < hi + 1e-6 { hi } else { v };
        Point::new(snap(q.x, max_x), snap(q.y, max_y))
    })?;
    Ok((out, rotated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::TagBox;
    use crate::geometry::{distance, point_in_bounds, Segment};
    use crate::view::{Laterality, View};
    use proptest::prelude::*;

    fn seg(x0: f64, y0: f64, x1: f64, y1: f64) -> Segment {
        Segment::new(Point::new(x0, y0), Point::new(x1, y1)).unwrap()
    }

    fn mlo(w: u32, h: u32, pec: Segment, pnl: Segment) -> ViewAnnotation {
        ViewAnnotation {
            view: View::Mlo,
            laterality: Laterality::Right,
            pec: Some(pec),
            pnl: Some(pnl),
            tag_box: Some(TagBox { a: Point::new(0.0, 0.0), b: Point::new(10.0, 5.0) }),
            image_dims: Bounds::new(w, h).unwrap(),
        }
    }

    fn ramp(w: u32, h: u32) -> GrayImage {
        let px = (0..w * h).map(|i| f64::from(i % 251)).collect();
        GrayImage::new(w, h, px, 8).unwrap()
    }

    #[test]
    fn hflip_mirrors_edges_and_laterality() {
        let ann = mlo(250, 250, seg(200.0, 10.0, 180.0, 240.0), seg(0.0, 100.0, 120.0, 90.0));
        let img = ramp(250, 250);
        let (fimg, fann) = hflip(&img, &ann).unwrap();
        assert_eq!(fann.pec, Some(seg(49.0, 10.0, 69.0, 240.0)));
        assert_eq!(fann.pnl.unwrap().p0(), Point::new(249.0, 100.0));
        assert_eq!(fann.laterality, Laterality::Left);
        assert_eq!(fimg.get(0, 3), img.get(249, 3));

        let (bimg, bann) = hflip(&fimg, &fann).unwrap();
        assert_eq!(bimg, img);
        assert_eq!(bann, ann);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let ann = mlo(40, 30, seg(30.0, 0.0, 0.0, 25.0), seg(35.0, 20.0, 5.0, 2.0));
        let img = ramp(40, 30);
        let (rimg, rann) = rotate_expand(&img, &ann, 0.0).unwrap();
        assert_eq!(rimg, img);
        assert_eq!(rann, ann);
    }

    #[test]
    fn quarter_turn_swaps_canvas_and_preserves_radii() {
        let ann = mlo(60, 40, seg(59.0, 0.0, 0.0, 39.0), seg(50.0, 20.0, 10.0, 5.0));
        let (rimg, rann) = rotate_expand(&ramp(60, 40), &ann, 90.0).unwrap();
        assert_eq!((rimg.width(), rimg.height()), (40, 60));
        let old_c = Point::new(29.5, 19.5);
        let new_c = Point::new(19.5, 29.5);
        let before = ann.labelled_points();
        let after = rann.labelled_points();
        for ((_, p), (_, q)) in before.iter().zip(&after) {
            assert!((distance(*p, old_c) - distance(*q, new_c)).abs() < 1e-9);
            assert!(point_in_bounds(*q, rann.image_dims));
        }
    }

    #[test]
    fn ten_degrees_keeps_corner_landmarks_strictly_inside() {
        let ann = mlo(250, 250, seg(249.0, 0.0, 0.0, 249.0), seg(0.0, 0.0, 249.0, 249.0));
        let (w, h) = expanded_canvas(250, 250, 10.0);
        // bounding-box oracle: 250 (cos 10 + sin 10), rounded up
        let side = 250.0 * (10f64.to_radians().cos() + 10f64.to_radians().sin());
        assert_eq!((w, h), (side.ceil() as u32, side.ceil() as u32));
        let (_, rann) = rotate_expand(&ramp(250, 250), &ann, 10.0).unwrap();
        for (_, p) in rann.labelled_points().into_iter().take(4) {
            assert!(p.x > 0.0 && p.y > 0.0 && p.x < f64::from(w - 1) && p.y < f64::from(h - 1), "{p:?}");
        }
    }

    #[test]
    fn rotation_pads_with_zero() {
        let img = GrayImage::filled(50, 50, 9.0);
        let ann = mlo(50, 50, seg(40.0, 0.0, 0.0, 40.0), seg(45.0, 30.0, 10.0, 20.0));
        let (rimg, _) = rotate_expand(&img, &ann, 12.0).unwrap();
        assert_eq!(rimg.get(0, 0), 0.0);
        let c = rimg.width() / 2;
        assert!((rimg.get(c, c) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn augmenter_is_seed_deterministic() {
        let cfg = AugmentConfig { flip_probability: 0.5, max_rotation_deg: 15.0, rng_seed: 99 };
        let a: Vec<_> = { let mut g = Augmenter::new(cfg).unwrap(); (0..50).map(|_| g.draw()).collect() };
        let b: Vec<_> = { let mut g = Augmenter::new(cfg).unwrap(); (0..50).map(|_| g.draw()).collect() };
        assert_eq!(a, b);
        assert!(a.iter().all(|(_, t)| t.abs() <= 15.0));
        assert!(a.iter().any(|(f, _)| *f) && a.iter().any(|(f, _)| !*f));
        assert!(Augmenter::new(AugmentConfig { flip_probability: 1.5, ..cfg }).is_err());
    }

    fn annotation() -> impl Strategy<Value = ViewAnnotation> {
        (20u32..400, 20u32..400).prop_flat_map(|(w, h)| {
            let pt = (0.0..=f64::from(w - 1), 0.0..=f64::from(h - 1));
            (pt.clone(), pt.clone(), pt.clone(), pt).prop_filter_map("distinct", move |(a, b, c, d)| {
                let pec = Segment::new(Point::new(a.0, a.1), Point::new(b.0, b.1)).ok()?;
                let pnl = Segment::new(Point::new(c.0, c.1), Point::new(d.0, d.1)).ok()?;
                Some(mlo(w, h, pec, pnl))
            })
        })
    }

    proptest! {
        #[test]
        fn rotation_is_rigid_and_contained(ann in annotation(), angle in -15.0..=15.0f64) {
            let img = GrayImage::filled(ann.image_dims.width, ann.image_dims.height, 1.0);
            let (_, r) = rotate_expand(&img, &ann, angle).unwrap();
            for (before, after) in [(ann.pec, r.pec), (ann.pnl, r.pnl)] {
                let (b, a) = (before.unwrap(), after.unwrap());
                prop_assert!((b.length() - a.length()).abs() < 1e-6);
            }
            for (_, p) in r.labelled_points() {
                prop_assert!(point_in_bounds(p, r.image_dims), "{:?} outside {:?}", p, r.image_dims);
            }
        }
    }
}
