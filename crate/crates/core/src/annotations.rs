//! LabelMe-compatible annotation documents.
//!
//! Shapes are recognised by label: `pec` and `pnl` are two-point lines,
//! `tag` is a two-point rectangle. The first `pnl` point is the nipple.
//! View and laterality live in top-level `view` / `laterality` keys, which
//! LabelMe carries through untouched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{point_in_bounds, Bounds, Point, Segment};
use crate::view::{Laterality, View};

pub const PEC_LABEL: &str = "pec";
pub const PNL_LABEL: &str = "pnl";
pub const TAG_LABEL: &str = "tag";

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("malformed annotation document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("shape `{label}`: {message}")]
    Shape { label: String, message: String },
    #[error("missing `{0}` shape")]
    Missing(&'static str),
    #[error("duplicate `{0}` shape")]
    Duplicate(&'static str),
    #[error("CC view must not carry a `pec` shape")]
    PecOnCc,
    #[error("shape `{label}`: point ({x}, {y}) outside {width}x{height} image")]
    OutOfImage { label: String, x: f64, y: f64, width: u32, height: u32 },
    #[error("missing {0}; not in the document and no hint supplied")]
    MissingTag(&'static str),
    #[error("bad image dimensions {0}x{1}")]
    Dims(u32, u32),
}

/// Axis-aligned box given by two diagonal corners, in annotation order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagBox {
    pub a: Point,
    pub b: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewAnnotation {
    pub view: View,
    pub laterality: Laterality,
    pub pec: Option<Segment>,
    pub pnl: Option<Segment>,
    pub tag_box: Option<TagBox>,
    pub image_dims: Bounds,
}

impl ViewAnnotation {
    /// Checks the structural invariants; `parse_annotation` calls this.
    pub fn validate(&self) -> Result<(), AnnotationError> {
        if self.view == View::Cc && self.pec.is_some() {
            return Err(AnnotationError::PecOnCc);
        }
        if self.pnl.is_none() {
            return Err(AnnotationError::Missing(PNL_LABEL));
        }
        if self.view == View::Mlo && self.pec.is_none() {
            return Err(AnnotationError::Missing(PEC_LABEL));
        }
        for (label, p) in self.labelled_points() {
            if !point_in_bounds(p, self.image_dims) {
                return Err(AnnotationError::OutOfImage {
                    label: label.to_owned(),
                    x: p.x,
                    y: p.y,
                    width: self.image_dims.width,
                    height: self.image_dims.height,
                });
            }
        }
        Ok(())
    }

    pub fn labelled_points(&self) -> Vec<(&'static str, Point)> {
        let mut out = Vec::new();
        if let Some(s) = self.pec {
            out.extend([(PEC_LABEL, s.p0()), (PEC_LABEL, s.p1())]);
        }
        if let Some(s) = self.pnl {
            out.extend([(PNL_LABEL, s.p0()), (PNL_LABEL, s.p1())]);
        }
        if let Some(t) = self.tag_box {
            out.extend([(TAG_LABEL, t.a), (TAG_LABEL, t.b)]);
        }
        out
    }

    /// Applies `f` to every annotated point and replaces the image extent.
    pub fn map_points(
        &self,
        dims: Bounds,
        mut f: impl FnMut(Point) -> Point,
    ) -> Result<ViewAnnotation, crate::geometry::GeometryError> {
        let mut seg = |s: Option<Segment>| s.map(|s| Segment::new(f(s.p0()), f(s.p1()))).transpose();
        let pec = seg(self.pec)?;
        let pnl = seg(self.pnl)?;
        let tag_box = self.tag_box.map(|t| TagBox { a: f(t.a), b: f(t.b) });
        Ok(ViewAnnotation { pec, pnl, tag_box, image_dims: dims, ..self.clone() })
    }
}

/// Raw LabelMe document. Unknown top-level keys are tolerated on input.
#[derive(Debug, Serialize, Deserialize)]
struct Document {
    #[serde(default = "default_version")]
    version: String,
    #[serde(default)]
    flags: serde_json::Map<String, serde_json::Value>,
    shapes: Vec<ShapeEntry>,
    #[serde(rename = "imagePath", default, skip_serializing_if = "Option::is_none")]
    image_path: Option<String>,
    #[serde(rename = "imageData", default)]
    image_data: Option<String>,
    #[serde(rename = "imageHeight")]
    image_height: u32,
    #[serde(rename = "imageWidth")]
    image_width: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    view: Option<View>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    laterality: Option<Laterality>,
}

fn default_version() -> String {
    "5.0.1".to_owned()
}

#[derive(Debug, Serialize, Deserialize)]
struct ShapeEntry {
    label: String,
    points: Vec<[f64; 2]>,
    #[serde(default)]
    group_id: Option<i64>,
    shape_type: String,
    #[serde(default)]
    flags: serde_json::Map<String, serde_json::Value>,
}

/// Diagnostics collected while parsing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    /// Labels of shapes that were skipped.
    pub ignored: Vec<String>,
}

/// Fallback view/laterality for documents that do not carry them, usually
/// taken from the file name or sidecar.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hints {
    pub view: Option<View>,
    pub laterality: Option<Laterality>,
}

pub fn parse_annotation(text: &str) -> Result<(ViewAnnotation, ParseReport), AnnotationError> {
    parse_annotation_with(text, Hints::default())
}

/// Like [`parse_annotation`]; document keys take precedence over `hints`.
pub fn parse_annotation_with(text: &str, hints: Hints) -> Result<(ViewAnnotation, ParseReport), AnnotationError> {
    let doc: Document = serde_json::from_str(text)?;
    let image_dims =
        Bounds::new(doc.image_width, doc.image_height).map_err(|_| AnnotationError::Dims(doc.image_width, doc.image_height))?;
    let view = doc.view.or(hints.view).ok_or(AnnotationError::MissingTag("view"))?;
    let laterality = doc.laterality.or(hints.laterality).ok_or(AnnotationError::MissingTag("laterality"))?;

    let mut report = ParseReport::default();
    let mut pec = None;
    let mut pnl = None;
    let mut tag_box = None;
    for shape in &doc.shapes {
        let shape_err = |message: String| AnnotationError::Shape { label: shape.label.clone(), message };
        let two_points = |kind: &str| -> Result<(Point, Point), AnnotationError> {
            if shape.shape_type != kind {
                return Err(shape_err(format!("expected shape_type `{kind}`, found `{}`", shape.shape_type)));
            }
            match shape.points.as_slice() {
                [a, b] => Ok((Point::new(a[0], a[1]), Point::new(b[0], b[1]))),
                pts => Err(shape_err(format!("expected 2 points, found {}", pts.len()))),
            }
        };
        match shape.label.as_str() {
            PEC_LABEL | PNL_LABEL => {
                let (a, b) = two_points("line")?;
                let s = Segment::new(a, b).map_err(|e| shape_err(e.to_string()))?;
                let (slot, name) = if shape.label == PEC_LABEL { (&mut pec, PEC_LABEL) } else { (&mut pnl, PNL_LABEL) };
                if slot.replace(s).is_some() {
                    return Err(AnnotationError::Duplicate(name));
                }
            }
            TAG_LABEL => {
                let (a, b) = two_points("rectangle")?;
                if !(a.is_finite() && b.is_finite()) {
                    return Err(shape_err("non-finite corner".into()));
                }
                if tag_box.replace(TagBox { a, b }).is_some() {
                    return Err(AnnotationError::Duplicate(TAG_LABEL));
                }
            }
            other => report.ignored.push(other.to_owned()),
        }
    }
    let ann = ViewAnnotation { view, laterality, pec, pnl, tag_box, image_dims };
    ann.validate()?;
    Ok((ann, report))
}

/// Deterministic pretty-printed JSON; absent shapes are omitted.
pub fn serialize_annotation(ann: &ViewAnnotation) -> String {
    let line = |label: &str, s: Segment| ShapeEntry {
        label: label.to_owned(),
        points: vec![[s.p0().x, s.p0().y], [s.p1().x, s.p1().y]],
        group_id: None,
        shape_type: "line".to_owned(),
        flags: Default::default(),
    };
    let mut shapes = Vec::new();
    if let Some(s) = ann.pec {
        shapes.push(line(PEC_LABEL, s));
    }
    if let Some(s) = ann.pnl {
        shapes.push(line(PNL_LABEL, s));
    }
    if let Some(t) = ann.tag_box {
        shapes.push(ShapeEntry {
            label: TAG_LABEL.to_owned(),
            points: vec![[t.a.x, t.a.y], [t.b.x, t.b.y]],
            group_id: None,
            shape_type: "rectangle".to_owned(),
            flags: Default::default(),
        });
    }
    let doc = Document {
        version: default_version(),
        flags: Default::default(),
        shapes,
        image_path: None,
        image_data: None,
        image_height: ann.image_dims.height,
        image_width: ann.image_dims.width,
        view: Some(ann.view),
        laterality: Some(ann.laterality),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("annotation serialises");
    out.push('\n');
    out
}

/// PEC and PNL endpoints flattened as
/// `[pec.p0.x, pec.p0.y, pec.p1.x, pec.p1.y, pnl.p0.x, pnl.p0.y, pnl.p1.x, pnl.p1.y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointVector(pub [f64; 8]);

impl EndpointVector {
    pub fn from_segments(pec: Segment, pnl: Segment) -> Self {
        let [a, b, c, d] = [pec.p0(), pec.p1(), pnl.p0(), pnl.p1()];
        Self([a.x, a.y, b.x, b.y, c.x, c.y, d.x, d.y])
    }

    /// The MLO labels of an annotation.
    pub fn from_annotation(ann: &ViewAnnotation) -> Result<Self, AnnotationError> {
        let pec = ann.pec.ok_or(AnnotationError::Missing(PEC_LABEL))?;
        let pnl = ann.pnl.ok_or(AnnotationError::Missing(PNL_LABEL))?;
        Ok(Self::from_segments(pec, pnl))
    }

    pub fn points(&self) -> [Point; 4] {
        let v = &self.0;
        [Point::new(v[0], v[1]), Point::new(v[2], v[3]), Point::new(v[4], v[5]), Point::new(v[6], v[7])]
    }

    pub fn map_points(&self, mut f: impl FnMut(Point) -> Point) -> Self {
        let [a, b, c, d] = self.points().map(&mut f);
        Self([a.x, a.y, b.x, b.y, c.x, c.y, d.x, d.y])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Segments, failing on non-finite or coincident endpoints.
    pub fn segments(&self) -> Result<(Segment, Segment), crate::geometry::GeometryError> {
        let [a, b, c, d] = self.points();
        Ok((Segment::new(a, b)?, Segment::new(c, d)?))
    }
}
