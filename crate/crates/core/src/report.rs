//! Plain-text technologist report.
//!
//! Grammar (one item per line, breasts left then right):
//!
//! ```text
//! Report for Subject <id>
//! Thresholds and parameters
//! Threshold for perpendicular distance from BB in pixels: <t>
//! Threshold for PNL length difference: <t> <mm|px>
//! <Left|Right> Breast
//! -----
//! MLO Lengths
//! -----
//! FILENAME | PNL length | Distance from BB | Intersection
//! <file> <length|-> <distance|-> <inside|outside|none>
//! CC Lengths
//! -----
//! <file> <length|No BB detected>
//! <===== Decision =====>
//! MAX FILENAME (MLO) <file> <length>      | No correct MLO recorded
//! MAX FILENAME (CC) <file> <length>       | No correct CC recorded
//! [Decision based on the following file / MLO <file> / CC <file>
//!  Difference in PNL lengths is <d> <unit>]
//! Decision: Correctly Positioned | Decision: CC Incorrectly Positioned |
//! Decision: MLO Incorrectly Positioned | No conclusion can be made
//! [Warning: BB is <d> px from the PNL on <file>]
//! =====
//! ```
//!
//! Numbers use the shortest decimal that round-trips.

use std::fmt::Write as _;

use crate::decision::{BreastDecision, BreastOutcome, NoConclusionReason, StudyDecision};

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), num)
}

pub fn render_report(study: &StudyDecision) -> String {
    let mut out = String::new();
    let cfg = &study.config;
    let _ = writeln!(out, "Report for Subject {}", study.subject);
    out.push_str("Thresholds and parameters\n");
    let _ = writeln!(out, "Threshold for perpendicular distance from BB in pixels: {}", num(cfg.bb_distance_threshold));
    let _ = writeln!(out, "Threshold for PNL length difference: {} {}", num(cfg.diff_threshold()), cfg.diff_unit().symbol());
    for breast in &study.breasts {
        render_breast(&mut out, breast);
    }
    out
}

fn render_breast(out: &mut String, b: &BreastDecision) {
    let _ = writeln!(out, "{} Breast", b.laterality.name());
    out.push_str("-----\nMLO Lengths\n-----\n");
    out.push_str("FILENAME | PNL length | Distance from BB | Intersection\n");
    for row in &b.mlo_rows {
        let a = &row.assessment;
        let crossing = match (a.intersection, a.in_bounds) {
            (None, _) => "none",
            (Some(_), true) => "inside",
            (Some(_), false) => "outside",
        };
        let _ = writeln!(out, "{} {} {} {}", row.name, opt(a.d_mlo), opt(a.bb_distance), crossing);
    }
    out.push_str("CC Lengths\n-----\n");
    for row in &b.cc_rows {
        match row.d_cc {
            Some(d) => {
                let _ = writeln!(out, "{} {}", row.name, num(d));
            }
            None => {
                let _ = writeln!(out, "{} No BB detected", row.name);
            }
        }
    }
    out.push_str("<===== Decision =====>\n");
    match b.chosen_mlo {
        Some(i) => {
            let row = &b.mlo_rows[i];
            let _ = writeln!(out, "MAX FILENAME (MLO) {} {}", row.name, opt(row.assessment.d_mlo));
        }
        None => out.push_str("No correct MLO recorded\n"),
    }
    match b.chosen_cc {
        Some(i) => {
            let row = &b.cc_rows[i];
            let _ = writeln!(out, "MAX FILENAME (CC) {} {}", row.name, opt(row.d_cc));
        }
        None => out.push_str("No correct CC recorded\n"),
    }
    if let (Some(pair), Some(mi), Some(ci)) = (&b.pair, b.chosen_mlo, b.chosen_cc) {
        out.push_str("Decision based on the following file\n");
        let _ = writeln!(out, "MLO {}", b.mlo_rows[mi].name);
        let _ = writeln!(out, "CC {}", b.cc_rows[ci].name);
        match (pair.d_diff, &pair.diagnostic) {
            (Some(d), _) => {
                let _ = writeln!(out, "Difference in PNL lengths is {} {}", num(d), pair.unit.symbol());
            }
            (None, Some(why)) => {
                let _ = writeln!(out, "Difference in PNL lengths unavailable: {why}");
            }
            (None, None) => out.push_str("Difference in PNL lengths unavailable\n"),
        }
    }
    let verdict = match b.outcome {
        BreastOutcome::CorrectlyPositioned => "Decision: Correctly Positioned",
        BreastOutcome::CcInadequate => "Decision: CC Incorrectly Positioned",
        BreastOutcome::MloInadequate => "Decision: MLO Incorrectly Positioned",
        BreastOutcome::NoConclusion(NoConclusionReason::NoMloViews | NoConclusionReason::NoBb | NoConclusionReason::MissingSpacing) => {
            "No conclusion can be made"
        }
    };
    let _ = writeln!(out, "{verdict}");
    for row in b.flagged_mlos() {
        let _ = writeln!(out, "Warning: BB is {} px from the PNL on {}", opt(row.assessment.bb_distance), row.name);
    }
    out.push_str("=====\n");
}

/// Machine-readable companion of the text report.
pub fn to_sidecar(study: &StudyDecision) -> String {
    let mut s = serde_json::to_string_pretty(study).expect("decisions serialise");
    s.push('\n');
    s
}

pub fn from_sidecar(text: &str) -> Result<StudyDecision, serde_json::Error> {
    serde_json::from_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::{decide_study, BreastViews, CcInput, DecisionConfig, MloInput};
    use crate::geometry::{Bounds, Point, Segment};
    use crate::view::Laterality;

    fn seg(x0: f64, y0: f64, x1: f64, y1: f64) -> Segment {
        Segment::new(Point::new(x0, y0), Point::new(x1, y1)).unwrap()
    }

    fn study() -> StudyDecision {
        let dims = Bounds::new(512, 512).unwrap();
        let mlo = MloInput {
            name: "Mammo_9_LMLO_1".into(),
            dims,
            spacing: None,
            pec: seg(100.0, 0.0, 0.0, 300.0),
            pnl: seg(400.0, 300.0, 100.0, 200.0),
            bb: None,
        };
        let cc = CcInput { name: "Mammo_9_LCC_1".into(), dims, spacing: None, pnl: Some(seg(300.0, 250.0, 0.0, 250.0)) };
        let left = BreastViews { laterality: Laterality::Left, mlos: vec![mlo], ccs: vec![cc] };
        decide_study("9", &[left], &DecisionConfig::pixel(10.0)).unwrap()
    }

    #[test]
    fn render_is_pure_and_sidecar_round_trips() {
        let s = study();
        assert_eq!(render_report(&s), render_report(&s));
        let back = from_sidecar(&to_sidecar(&s)).unwrap();
        assert_eq!(back, s);
        assert_eq!(render_report(&back), render_report(&s));
    }

    #[test]
    fn numbers_are_decision_values() {
        let s = study();
        let text = render_report(&s);
        let b = &s.breasts[0];
        let d_mlo = b.mlo_rows[0].assessment.d_mlo.unwrap();
        assert!(text.contains(&format!("MAX FILENAME (MLO) Mammo_9_LMLO_1 {d_mlo}\n")));
        assert!(text.contains("MAX FILENAME (CC) Mammo_9_LCC_1 300\n"));
        let diff = b.pair.as_ref().unwrap().d_diff.unwrap();
        assert!(text.contains(&format!("Difference in PNL lengths is {diff} px\n")));
        assert!(text.starts_with("Report for Subject 9\nThresholds and parameters\n"));
        assert!(text.ends_with("=====\n"));
    }
}
