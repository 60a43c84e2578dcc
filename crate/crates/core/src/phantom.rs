//! Synthetic mammogram-like cases with exact ground truth.
//!
//! Every case is one breast: an MLO view with a bright pectoral wedge in the
//! upper chest-wall corner, a semi-elliptical breast and a saturated BB disc
//! on the nipple, plus a CC view whose BB sits `d_cc` pixels from the chest
//! wall. The ground-truth PNL on the MLO runs from the nipple perpendicular to
//! the PEC line. Cases are laid out with the chest wall on the left and
//! mirrored for right breasts.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{serialize_annotation, TagBox, ViewAnnotation};
use crate::augmentation::hflip;
use crate::bbdetect::{cc_pnl, Circle};
use crate::decision::{BreastOutcome, NoConclusionReason, Verdict};
use crate::geometry::{point_in_bounds, Bounds, GeometryError, Point, Segment};
use crate::imaging::{GrayImage, ImageError, Sidecar};
use crate::view::{Laterality, Side, View};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("infeasible phantom: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    AdequateBoth,
    MloPecShort,
    CcTissueCut,
    BbMissing,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::AdequateBoth, Scenario::MloPecShort, Scenario::CcTissueCut, Scenario::BbMissing];

    pub fn outcome(self) -> BreastOutcome {
        match self {
            Scenario::AdequateBoth => BreastOutcome::CorrectlyPositioned,
            Scenario::MloPecShort => BreastOutcome::MloInadequate,
            Scenario::CcTissueCut => BreastOutcome::CcInadequate,
            Scenario::BbMissing => BreastOutcome::NoConclusion(NoConclusionReason::NoBb),
        }
    }

    pub fn mlo_adequate(self) -> bool {
        self != Scenario::MloPecShort
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub spacing_mm_per_px: f64,
    /// `None` draws one from the seed.
    pub laterality: Option<Laterality>,
    pub bb_radius_range: (f64, f64),
    pub scenario: Scenario,
    pub noise_sigma: f64,
    /// The 1 cm rule threshold the CC geometry is built around.
    pub diff_threshold_mm: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 512,
            height: 512,
            // 0.07 mm/px detector pixels on a ~3500 px wide mammogram, scaled to 512 px
            spacing_mm_per_px: 0.07 * 3500.0 / 512.0,
            laterality: None,
            bb_radius_range: (10.0, 20.0),
            scenario: Scenario::AdequateBoth,
            noise_sigma: 0.015,
            diff_threshold_mm: 10.0,
        }
    }
}

/// Canonical (chest wall on the left) geometry of one case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomLayout {
    /// PEC line crosses the top edge here.
    pub pec_top_x: f64,
    /// PEC line crosses the chest-wall edge here.
    pub pec_wall_y: f64,
    /// Position of the PNL foot along the PEC line (0 at the top point, 1 at the wall point).
    pub foot_t: f64,
    pub d_mlo: f64,
    pub mlo_bb_radius: f64,
    pub cc_bb_radius: f64,
    pub cc_center_y: f64,
    pub d_cc: f64,
    pub cc_half_height: f64,
}

impl PhantomLayout {
    pub fn pec(&self) -> Result<Segment, GeometryError> {
        Segment::new(Point::new(self.pec_top_x, 0.0), Point::new(0.0, self.pec_wall_y))
    }

    pub fn foot(&self) -> Point {
        let t = self.foot_t;
        Point::new(self.pec_top_x * (1.0 - t), self.pec_wall_y * t)
    }

    /// Unit normal of the PEC line pointing into the breast.
    fn normal(&self) -> Point {
        let n = Point::new(self.pec_wall_y, self.pec_top_x);
        n.scale(1.0 / n.norm())
    }

    pub fn nipple(&self) -> Point {
        self.foot().add(self.normal().scale(self.d_mlo))
    }

    /// Samples a layout realising `spec.scenario`.
    pub fn sample(spec: &PhantomSpec, rng: &mut impl Rng) -> Result<Self, PhantomError> {
        let (w, h) = (f64::from(spec.width), f64::from(spec.height));
        let (r_lo, r_hi) = spec.bb_radius_range;
        if !(r_lo > 0.0 && r_lo <= r_hi) {
            return Err(PhantomError::Infeasible(format!("bad BB radius range {r_lo}..{r_hi}")));
        }
        let threshold_px = spec.diff_threshold_mm / spec.spacing_mm_per_px;
        let radius = |rng: &mut dyn rand::RngCore| if r_hi > r_lo { rng.gen_range(r_lo..=r_hi) } else { r_lo };
        for _ in 0..10_000 {
            let short = spec.scenario == Scenario::MloPecShort;
            let pec_top_x = rng.gen_range(0.22 * w..0.40 * w);
            let pec_wall_y = if short { rng.gen_range(0.20 * h..0.38 * h) } else { rng.gen_range(0.60 * h..0.92 * h) };
            let foot_t = if short { rng.gen_range(1.5..2.2) } else { rng.gen_range(0.30..0.70) };
            let d_mlo = rng.gen_range(0.38 * w..0.60 * w);
            let delta = match spec.scenario {
                Scenario::CcTissueCut => -rng.gen_range(1.6..2.5) * threshold_px,
                _ => rng.gen_range(-0.4..0.4) * threshold_px,
            };
            let layout = PhantomLayout {
                pec_top_x,
                pec_wall_y,
                foot_t,
                d_mlo,
                mlo_bb_radius: radius(rng),
                cc_bb_radius: radius(rng),
                cc_center_y: rng.gen_range(0.40 * h..0.60 * h),
                d_cc: d_mlo + delta,
                cc_half_height: rng.gen_range(0.36 * h..0.44 * h),
            };
            if layout.check(spec).is_ok() {
                return Ok(layout);
            }
        }
        Err(PhantomError::Infeasible("no layout satisfies the canvas constraints".into()))
    }

    /// Rejects layouts that would not fit on the canvas or would not realise
    /// the scenario with a clear margin.
    pub fn check(&self, spec: &PhantomSpec) -> Result<(), PhantomError> {
        let (w, h) = (f64::from(spec.width), f64::from(spec.height));
        let fail = |m: &str| Err(PhantomError::Infeasible(m.to_owned()));
        if !(self.pec_top_x > 0.0 && self.pec_top_x <= w - 1.0 && self.pec_wall_y > 0.0 && self.pec_wall_y <= h - 1.0) {
            return fail("pectoral wedge outside canvas");
        }
        let n = self.nipple();
        let r = self.mlo_bb_radius.max(self.cc_bb_radius);
        if !(n.x >= 0.35 * w && n.x + r + 20.0 <= w - 1.0 && n.y >= r + 20.0 && n.y + r + 20.0 <= h - 1.0) {
            return fail("nipple too close to the canvas edge");
        }
        let foot = self.foot();
        let bounds = Bounds { width: spec.width, height: spec.height };
        let margin = 0.06 * w;
        let adequate = foot.x >= margin && foot.y >= margin && foot.y <= h - 1.0 - margin;
        let clearly_outside = foot.x <= -margin;
        match spec.scenario {
            Scenario::MloPecShort if !clearly_outside => return fail("short PEC crossing not clearly outside"),
            Scenario::MloPecShort => {}
            _ if !(adequate && point_in_bounds(foot, bounds)) => return fail("PEC/PNL crossing too close to the edge"),
            _ => {}
        }
        if !(self.d_cc > r + 20.0 && self.d_cc + self.cc_bb_radius + 20.0 <= w - 1.0) {
            return fail("CC BB outside canvas");
        }
        if !(self.cc_center_y - self.cc_bb_radius > 10.0 && self.cc_center_y + self.cc_bb_radius < h - 11.0) {
            return fail("CC BB too close to the top or bottom");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseLabels {
    pub scenario: Scenario,
    pub laterality: Laterality,
    pub mlo_verdict: Verdict,
    pub cc_verdict: Verdict,
    pub outcome: BreastOutcome,
    pub d_mlo: f64,
    pub d_cc: f64,
    pub mlo_bb: Circle,
    /// Absent when the scenario removes the CC marker.
    pub cc_bb: Option<Circle>,
    pub chest_wall: Side,
}

#[derive(Debug, Clone)]
pub struct PhantomView {
    /// 8-bit raw samples with spacing attached.
    pub image: GrayImage,
    pub annotation: ViewAnnotation,
}

#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub spec: PhantomSpec,
    pub layout: PhantomLayout,
    pub mlo: PhantomView,
    pub cc: PhantomView,
    pub labels: CaseLabels,
}

struct Canvas {
    w: u32,
    h: u32,
    px: Vec<f64>,
}

impl Canvas {
    fn new(w: u32, h: u32, v: f64) -> Self {
        Self { w, h, px: vec![v; w as usize * h as usize] }
    }

    fn paint(&mut self, mut f: impl FnMut(f64, f64, f64) -> f64) {
        for y in 0..self.h {
            for x in 0..self.w {
                let i = y as usize * self.w as usize + x as usize;
                self.px[i] = f(f64::from(x), f64::from(y), self.px[i]);
            }
        }
    }

    fn finish(mut self, rng: &mut ChaCha8Rng, sigma: f64, bb: Option<Circle>, spacing: f64) -> Result<GrayImage, PhantomError> {
        let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
        for v in &mut self.px {
            *v = (*v + noise.sample(rng)).clamp(0.0, 0.94);
        }
        if let Some(c) = bb {
            self.paint(|x, y, v| if (x - c.center.x).hypot(y - c.center.y) <= c.radius { 1.0 } else { v });
        }
        let img = GrayImage::new(self.w, self.h, self.px, 8)?.quantized(8)?;
        Ok(img.with_spacing(Some(spacing))?)
    }
}

const BACKGROUND: f64 = 0.04;
const PECTORAL: f64 = 0.74;

fn tissue(x: f64, y: f64, depth: f64, cy: f64, h: f64) -> f64 {
    0.40 + 0.10 * (1.0 - x / depth).clamp(0.0, 1.0) + 0.03 * ((y - cy) / h * std::f64::consts::PI).cos()
}

fn inside_ellipse(x: f64, y: f64, a: f64, b: f64, cy: f64) -> bool {
    (x / a).powi(2) + ((y - cy) / b).powi(2) <= 1.0
}

/// Where the ray from `from` through `to` leaves the pixel-index box.
fn exit_point(from: Point, to: Point, dims: Bounds) -> Point {
    let d = to.sub(from);
    let (max_x, max_y) = (f64::from(dims.width - 1), f64::from(dims.height - 1));
    let mut t_exit = f64::INFINITY;
    for (p, dp, hi) in [(from.x, d.x, max_x), (from.y, d.y, max_y)] {
        if dp > 0.0 {
            t_exit = t_exit.min((hi - p) / dp);
        } else if dp < 0.0 {
            t_exit = t_exit.min(-p / dp);
        }
    }
    let q = from.add(d.scale(t_exit));
    Point::new(q.x.clamp(0.0, max_x), q.y.clamp(0.0, max_y))
}

fn case_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generates a case from `spec`, drawing the layout from its seed.
pub fn generate_case(spec: &PhantomSpec) -> Result<PhantomCase, PhantomError> {
    let mut rng = case_rng(spec.seed);
    let layout = PhantomLayout::sample(spec, &mut rng)?;
    render_case(spec, &layout, &mut rng)
}

/// Renders an explicit layout; errors when it is infeasible for `spec`.
pub fn render_case(spec: &PhantomSpec, layout: &PhantomLayout, rng: &mut ChaCha8Rng) -> Result<PhantomCase, PhantomError> {
    layout.check(spec)?;
    let laterality = spec.laterality.unwrap_or_else(|| if rng.gen_bool(0.5) { Laterality::Left } else { Laterality::Right });
    let (w, h) = (spec.width, spec.height);
    let (wf, hf) = (f64::from(w), f64::from(h));
    let dims = Bounds::new(w, h)?;

    // MLO
    let nipple = layout.nipple();
    let mlo_bb = Circle { center: nipple, radius: layout.mlo_bb_radius, score: 0.0 };
    let depth = nipple.x + layout.mlo_bb_radius + 6.0;
    let half = nipple.y.max(hf - nipple.y) + 30.0;
    let pec = layout.pec()?;
    let mut mlo = Canvas::new(w, h, BACKGROUND);
    mlo.paint(|x, y, _| {
        let in_wedge = x / layout.pec_top_x + y / layout.pec_wall_y <= 1.0;
        if in_wedge {
            PECTORAL - 0.04 * (y / layout.pec_wall_y)
        } else if inside_ellipse(x, y, depth, half, nipple.y) {
            tissue(x, y, depth, nipple.y, hf)
        } else {
            BACKGROUND
        }
    });
    let mlo_img = mlo.finish(rng, spec.noise_sigma, Some(mlo_bb), spec.spacing_mm_per_px)?;
    let foot = layout.foot();
    let pnl_end = if point_in_bounds(foot, dims) { foot } else { exit_point(nipple, foot, dims) };
    let tag = TagBox { a: Point::new(wf - 70.0, 8.0), b: Point::new(wf - 12.0, 30.0) };
    let mlo_ann = ViewAnnotation {
        view: View::Mlo,
        laterality: Laterality::Left,
        pec: Some(pec),
        pnl: Some(Segment::new(nipple, pnl_end)?),
        tag_box: Some(tag),
        image_dims: dims,
    };

    // CC
    let cc_center = Point::new(layout.d_cc, layout.cc_center_y);
    let cc_bb = Circle { center: cc_center, radius: layout.cc_bb_radius, score: 0.0 };
    let cc_depth = cc_center.x + layout.cc_bb_radius + 6.0;
    let mut cc = Canvas::new(w, h, BACKGROUND);
    cc.paint(|x, y, _| {
        if inside_ellipse(x, y, cc_depth, layout.cc_half_height, cc_center.y) {
            tissue(x, y, cc_depth, cc_center.y, hf)
        } else {
            BACKGROUND
        }
    });
    let has_cc_bb = spec.scenario != Scenario::BbMissing;
    let cc_img = cc.finish(rng, spec.noise_sigma, has_cc_bb.then_some(cc_bb), spec.spacing_mm_per_px)?;
    let cc_ann = ViewAnnotation {
        view: View::Cc,
        laterality: Laterality::Left,
        pec: None,
        pnl: Some(cc_pnl(dims, &cc_bb, Side::Left).map_err(|e| PhantomError::Infeasible(e.to_string()))?),
        tag_box: Some(tag),
        image_dims: dims,
    };

    let mut mlo_view = PhantomView { image: mlo_img, annotation: mlo_ann };
    let mut cc_view = PhantomView { image: cc_img, annotation: cc_ann };
    let mirror = |p: Point| Point::new(wf - 1.0 - p.x, p.y);
    let (mut mlo_bb, mut cc_bb) = (mlo_bb, cc_bb);
    let chest_wall = match laterality {
        Laterality::Left => Side::Left,
        Laterality::Right => {
            for v in [&mut mlo_view, &mut cc_view] {
                let (img, ann) = hflip(&v.image, &v.annotation).map_err(|e| PhantomError::Infeasible(e.to_string()))?;
                *v = PhantomView { image: img, annotation: ann };
            }
            mlo_bb.center = mirror(mlo_bb.center);
            cc_bb.center = mirror(cc_bb.center);
            Side::Right
        }
    };

    let scenario = spec.scenario;
    let labels = CaseLabels {
        scenario,
        laterality,
        mlo_verdict: if scenario.mlo_adequate() { Verdict::Adequate } else { Verdict::Inadequate },
        cc_verdict: scenario.outcome().cc_verdict(),
        outcome: scenario.outcome(),
        d_mlo: layout.d_mlo,
        d_cc: layout.d_cc,
        mlo_bb,
        cc_bb: has_cc_bb.then_some(cc_bb),
        chest_wall,
    };
    Ok(PhantomCase { spec: *spec, layout: *layout, mlo: mlo_view, cc: cc_view, labels })
}

/// Settings for the `index`-th case of a dataset: scenarios cycle in
/// [`Scenario::ALL`] order and each case gets its own seed.
pub fn dataset_spec(base: &PhantomSpec, index: usize) -> PhantomSpec {
    PhantomSpec {
        seed: base.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64 + 1),
        scenario: Scenario::ALL[index % Scenario::ALL.len()],
        ..*base
    }
}

/// Names a view file the way the study loader expects.
pub fn view_file_stem(subject: &str, laterality: Laterality, view: View, k: usize) -> String {
    format!("Mammo_{subject}_{}{}_P_{k}", laterality.code(), view.code())
}

/// One manifest row per generated case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject: String,
    pub dir: String,
    pub scenario: Scenario,
    pub laterality: Laterality,
    pub mlo_verdict: Verdict,
    pub cc_verdict: Verdict,
    pub outcome: String,
    pub d_mlo_px: f64,
    pub d_cc_px: f64,
    pub cc_bb_x: Option<f64>,
    pub cc_bb_y: Option<f64>,
    pub cc_bb_radius: Option<f64>,
    pub mlo_image: String,
    pub mlo_annotation: String,
    pub cc_image: String,
    pub cc_annotation: String,
}

pub fn outcome_code(o: BreastOutcome) -> &'static str {
    match o {
        BreastOutcome::CorrectlyPositioned => "correctly_positioned",
        BreastOutcome::CcInadequate => "cc_inadequate",
        BreastOutcome::MloInadequate => "mlo_inadequate",
        BreastOutcome::NoConclusion(_) => "no_conclusion",
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PhantomError + '_ {
    move |source| PhantomError::Io { path: path.to_owned(), source }
}

/// Writes image, annotation and sidecar files for both views of a case into
/// `dir` (created if needed).
pub fn write_case(case: &PhantomCase, subject: &str, dir: &Path) -> Result<ManifestRow, PhantomError> {
    let names = write_views(case, subject, 1, dir)?;
    let lat = case.labels.laterality;
    let l = &case.labels;
    Ok(ManifestRow {
        subject: subject.to_owned(),
        dir: dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        scenario: l.scenario,
        laterality: lat,
        mlo_verdict: l.mlo_verdict,
        cc_verdict: l.cc_verdict,
        outcome: outcome_code(l.outcome).to_owned(),
        d_mlo_px: l.d_mlo,
        d_cc_px: l.d_cc,
        cc_bb_x: l.cc_bb.map(|c| c.center.x),
        cc_bb_y: l.cc_bb.map(|c| c.center.y),
        cc_bb_radius: l.cc_bb.map(|c| c.radius),
        mlo_image: names[0].0.clone(),
        mlo_annotation: names[0].1.clone(),
        cc_image: names[1].0.clone(),
        cc_annotation: names[1].1.clone(),
    })
}

/// Writes the MLO and CC of a case as the `k`-th views of `subject`'s
/// breast; returns the `(image, annotation)` file names, MLO first.
pub fn write_views(case: &PhantomCase, subject: &str, k: usize, dir: &Path) -> Result<Vec<(String, String)>, PhantomError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let lat = case.labels.laterality;
    let mut names = Vec::new();
    for (view, v) in [(View::Mlo, &case.mlo), (View::Cc, &case.cc)] {
        let stem = view_file_stem(subject, lat, view, k);
        let png = dir.join(format!("{stem}.png"));
        let json = dir.join(format!("{stem}.json"));
        v.image.save(&png)?;
        fs::write(&json, serialize_annotation(&v.annotation)).map_err(io_err(&json))?;
        Sidecar { spacing_mm_per_px: v.image.spacing(), laterality: Some(lat), view: Some(view) }.save_for(&png)?;
        names.push((format!("{stem}.png"), format!("{stem}.json")));
    }
    Ok(names)
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const PAIRS_FILE: &str = "mlo_pairs.txt";

/// Generates `n` cases under `out`, one study directory per case, plus
/// `manifest.csv` (labels) and `mlo_pairs.txt` (image/annotation pairs of
/// the adequately positioned MLOs, for training).
pub fn write_dataset(base: &PhantomSpec, n: usize, out: &Path) -> Result<Vec<ManifestRow>, PhantomError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let case = generate_case(&dataset_spec(base, i))?;
        let subject = format!("{:04}", i + 1);
        rows.push(write_case(&case, &subject, &out.join(&subject))?);
    }
    let manifest = out.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&manifest)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(&manifest))?;
    let pairs: String = rows
        .iter()
        .filter(|r| r.mlo_verdict == Verdict::Adequate)
        .map(|r| format!("{}/{} {}/{}\n", r.dir, r.mlo_image, r.dir, r.mlo_annotation))
        .collect();
    let pairs_path = out.join(PAIRS_FILE);
    fs::write(&pairs_path, pairs).map_err(io_err(&pairs_path))?;
    Ok(rows)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, PhantomError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbdetect::passes_uniformity;
    use crate::decision::{decide_breast, BreastViews, CcInput, DecisionConfig, MloInput};
    use crate::imaging::normalize;

    fn spec(seed: u64, scenario: Scenario) -> PhantomSpec {
        PhantomSpec { seed, scenario, ..PhantomSpec::default() }
    }

    /// Runs the decision rules on the case's ground-truth geometry.
    fn decide_on_truth(case: &PhantomCase) -> BreastOutcome {
        let mlo_ann = &case.mlo.annotation;
        let m = MloInput {
            name: "mlo".into(),
            dims: mlo_ann.image_dims,
            spacing: case.mlo.image.spacing(),
            pec: mlo_ann.pec.unwrap(),
            pnl: mlo_ann.pnl.unwrap(),
            bb: Some(case.labels.mlo_bb),
        };
        let c = CcInput {
            name: "cc".into(),
            dims: case.cc.annotation.image_dims,
            spacing: case.cc.image.spacing(),
            pnl: case.labels.cc_bb.map(|bb| cc_pnl(case.cc.annotation.image_dims, &bb, case.labels.chest_wall).unwrap()),
        };
        let views = BreastViews { laterality: case.labels.laterality, mlos: vec![m], ccs: vec![c] };
        decide_breast(&views, &DecisionConfig::default()).outcome
    }

    #[test]
    fn scenarios_hold_by_construction() {
        for seed in 0..8 {
            let a = generate_case(&spec(seed, Scenario::AdequateBoth)).unwrap();
            let pec = a.mlo.annotation.pec.unwrap();
            let pnl = a.mlo.annotation.pnl.unwrap();
            let m = crate::decision::assess_mlo(pec, pnl, a.mlo.annotation.image_dims);
            assert_eq!(m.verdict, Verdict::Adequate);
            let diff_mm = (a.labels.d_cc - m.d_mlo.unwrap()).abs() * a.spec.spacing_mm_per_px;
            assert!(diff_mm < 10.0);
            assert!((m.d_mlo.unwrap() - a.labels.d_mlo).abs() < 1e-9);

            let s = generate_case(&spec(seed, Scenario::MloPecShort)).unwrap();
            let x = crate::geometry::line_intersection(s.mlo.annotation.pec.unwrap(), s.mlo.annotation.pnl.unwrap()).unwrap();
            assert!(!point_in_bounds(x, s.mlo.annotation.image_dims));
        }
    }

    #[test]
    fn same_seed_same_case() {
        let a = generate_case(&spec(42, Scenario::CcTissueCut)).unwrap();
        let b = generate_case(&spec(42, Scenario::CcTissueCut)).unwrap();
        assert_eq!(a.mlo.image, b.mlo.image);
        assert_eq!(a.cc.image, b.cc.image);
        assert_eq!(a.mlo.annotation, b.mlo.annotation);
        assert_eq!(a.labels, b.labels);
        let c = generate_case(&spec(43, Scenario::CcTissueCut)).unwrap();
        assert_ne!(a.mlo.image, c.mlo.image);
    }

    #[test]
    fn ground_truth_reproduces_labels() {
        let base = PhantomSpec { seed: 3, ..PhantomSpec::default() };
        for i in 0..1000 {
            let case = generate_case(&dataset_spec(&base, i)).unwrap();
            assert_eq!(decide_on_truth(&case), case.labels.outcome, "case {i}: {:?}", case.layout);
        }
    }

    #[test]
    fn bb_neighbourhood_is_uniform_and_maximal() {
        for seed in 0..20 {
            let case = generate_case(&spec(seed, Scenario::AdequateBoth)).unwrap();
            for (img, bb) in [(&case.mlo.image, case.labels.mlo_bb), (&case.cc.image, case.labels.cc_bb.unwrap())] {
                let n = normalize(img);
                assert!(passes_uniformity(&n, bb.center, 1.0, 0.0));
            }
        }
        let missing = generate_case(&spec(1, Scenario::BbMissing)).unwrap();
        assert!(missing.labels.cc_bb.is_none());
        assert!(missing.cc.image.min_max().1 < 255.0);
    }

    #[test]
    fn infeasible_layout_is_rejected() {
        let s = spec(0, Scenario::AdequateBoth);
        let mut rng = case_rng(0);
        let mut layout = PhantomLayout::sample(&s, &mut rng).unwrap();
        layout.pec_top_x = 900.0;
        assert!(matches!(render_case(&s, &layout, &mut rng), Err(PhantomError::Infeasible(_))));
        let tiny = PhantomSpec { width: 40, height: 40, ..s };
        assert!(matches!(generate_case(&tiny), Err(PhantomError::Infeasible(_))));
    }

    #[test]
    fn dataset_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let base = PhantomSpec { seed: 5, ..PhantomSpec::default() };
        let rows = write_dataset(&base, 4, dir.path()).unwrap();
        assert_eq!(read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap(), rows);
        let pairs = fs::read_to_string(dir.path().join(PAIRS_FILE)).unwrap();
        assert_eq!(pairs.lines().count(), 3);
        let r = &rows[0];
        let img = crate::imaging::load_image(&dir.path().join(&r.dir).join(&r.mlo_image)).unwrap();
        assert_eq!(img.spacing(), Some(base.spacing_mm_per_px));
        assert_eq!(img, generate_case(&dataset_spec(&base, 0)).unwrap().mlo.image);
    }
}
