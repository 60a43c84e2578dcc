//! Preprocessing and inference.

use mammopos_core::annotations::{EndpointVector, ViewAnnotation};
use mammopos_core::geometry::{perpendicular_distance, Bounds, Point, Segment};
use mammopos_core::imaging::{normalize, rescale_point, resample, GrayImage};

use crate::{Model, PredictorError};

/// PEC with its upper endpoint first (smaller `y`, then smaller `x`), so the
/// regression target does not depend on annotation order.
pub fn canonical_pec(pec: Segment) -> Segment {
    let (a, b) = (pec.p0(), pec.p1());
    if (b.y, b.x) < (a.y, a.x) {
        pec.reversed()
    } else {
        pec
    }
}

/// Min-max normalised and resampled to the model's square input.
pub fn prepare_image(img: &GrayImage, side: usize) -> GrayImage {
    let side = side as u32;
    resample(&normalize(img), side, side)
}

fn square(side: usize) -> Bounds {
    Bounds { width: side as u32, height: side as u32 }
}

/// Training target for an MLO annotation, in `side x side` pixel units.
pub fn target_for(ann: &ViewAnnotation, side: usize) -> Result<EndpointVector, PredictorError> {
    let v = EndpointVector::from_annotation(ann)?;
    let (pec, pnl) = v.segments()?;
    let v = EndpointVector::from_segments(canonical_pec(pec), pnl);
    Ok(v.map_points(|p| rescale_point(p, ann.image_dims, square(side))))
}

/// Orders the PNL so its first point is the endpoint farther from the PEC line.
pub fn orient_nipple(v: EndpointVector) -> EndpointVector {
    let [a, b, c, d] = v.points();
    let Ok(pec) = Segment::new(a, b) else { return v };
    if perpendicular_distance(d, pec) > perpendicular_distance(c, pec) {
        EndpointVector([a.x, a.y, b.x, b.y, d.x, d.y, c.x, c.y])
    } else {
        v
    }
}

/// Endpoints for a prepared image (already `input_size` square, in `[0, 1]`),
/// in its pixel units with the nipple first on the PNL.
pub fn forward(model: &Model, img: &GrayImage) -> Result<EndpointVector, PredictorError> {
    let side = model.arch.input_size;
    if img.width() as usize != side || img.height() as usize != side {
        return Err(PredictorError::InputShape { expected: side, got: img.pixels().len() });
    }
    let out = model.forward(img.pixels())?;
    Ok(orient_nipple(EndpointVector(out.map(|v| v * side as f64))))
}

/// PEC and PNL predicted on a native-resolution MLO, in native pixels.
pub fn predict_lines(model: &Model, img: &GrayImage) -> Result<(Segment, Segment), PredictorError> {
    let side = model.arch.input_size;
    let v = forward(model, &prepare_image(img, side))?;
    let native = v.map_points(|p: Point| rescale_point(p, square(side), img.bounds()));
    Ok(native.segments()?)
}

/// The annotation's own PEC and PNL, in its pixel units; stands in for the
/// network when testing the rest of the pipeline.
pub fn passthrough_predictor(ann: &ViewAnnotation) -> Result<EndpointVector, PredictorError> {
    Ok(EndpointVector::from_annotation(ann)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mammopos_core::annotations::AnnotationError;
    use mammopos_core::view::{Laterality, View};

    fn seg(x0: f64, y0: f64, x1: f64, y1: f64) -> Segment {
        Segment::new(Point::new(x0, y0), Point::new(x1, y1)).unwrap()
    }

    fn mlo() -> ViewAnnotation {
        ViewAnnotation {
            view: View::Mlo,
            laterality: Laterality::Left,
            pec: Some(seg(0.0, 300.0, 100.0, 0.0)),
            pnl: Some(seg(400.0, 300.0, 50.0, 150.0)),
            tag_box: None,
            image_dims: Bounds { width: 500, height: 500 },
        }
    }

    #[test]
    fn passthrough_returns_labels() {
        let v = passthrough_predictor(&mlo()).unwrap();
        assert_eq!(v.0, [0.0, 300.0, 100.0, 0.0, 400.0, 300.0, 50.0, 150.0]);
        let cc = ViewAnnotation { view: View::Cc, pec: None, ..mlo() };
        assert!(matches!(passthrough_predictor(&cc), Err(PredictorError::Annotation(AnnotationError::Missing(_)))));
    }

    #[test]
    fn targets_are_canonical_and_scaled() {
        let t = target_for(&mlo(), 250).unwrap();
        assert_eq!(t.0, [50.0, 0.0, 0.0, 150.0, 200.0, 150.0, 25.0, 75.0]);
    }

    #[test]
    fn nipple_is_farther_from_pec() {
        let v = EndpointVector([100.0, 0.0, 0.0, 300.0, 50.0, 150.0, 400.0, 300.0]);
        assert_eq!(orient_nipple(v).0[4..], [400.0, 300.0, 50.0, 150.0]);
        let already = orient_nipple(v);
        assert_eq!(orient_nipple(already), already);
    }
}
