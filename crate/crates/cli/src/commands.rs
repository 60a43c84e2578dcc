//! Subcommand implementations, callable without the argument parser.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use mammopos_core::annotations::{parse_annotation, EndpointVector};
use mammopos_core::bbdetect::{detect_bb, BbParams};
use mammopos_core::decision::{assess_mlo, StudyDecision, Verdict};
use mammopos_core::eval::{
    confusion, detection_rate, endpoint_errors, format_percent, histogram_csv, pnl_length_csv, ConfusionMatrix, ErrorSummary,
};
use mammopos_core::imaging::{load_image, normalize};
use mammopos_core::phantom::{outcome_code, read_manifest, write_dataset, ManifestRow, PhantomSpec, MANIFEST_FILE};
use mammopos_core::report::{from_sidecar, render_report};
use mammopos_predictor::checkpoint::save_model;
use mammopos_predictor::predict::{forward, prepare_image, target_for};
use mammopos_predictor::train::{load_training_set, train};
use mammopos_predictor::{History, Model, TrainConfig};

use crate::config::PipelineConfig;
use crate::pipeline::{assess_study, write_report, Predictor};
use crate::study::find_studies;
use crate::CliError;

pub fn gen_phantoms(spec: &PhantomSpec, n: usize, out: &Path) -> Result<Vec<ManifestRow>, CliError> {
    let rows = write_dataset(spec, n, out)?;
    info!("wrote {} phantom cases to {}", rows.len(), out.display());
    Ok(rows)
}

/// Trains on a manifest of MLO image/annotation pairs; writes the model and
/// `<model stem>.history.csv` beside it.
pub fn train_model(manifest: &Path, cfg: &TrainConfig, model_path: &Path) -> Result<(Model, History), CliError> {
    let data = load_training_set(manifest)?;
    let (model, history) = train(&data, cfg)?;
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    save_model(&model, model_path)?;
    let hist = history_path(model_path);
    fs::write(&hist, history.to_csv()).map_err(|e| CliError::io(&hist, e))?;
    Ok((model, history))
}

pub fn history_path(model_path: &Path) -> PathBuf {
    let stem = model_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    model_path.with_file_name(format!("{stem}.history.csv"))
}

/// Assesses every study under `input` and writes one report pair per subject.
pub fn assess(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<Vec<StudyDecision>, CliError> {
    cfg.validate()?;
    let predictor = Predictor::from_config(cfg)?;
    let studies = find_studies(input)?;
    let mut decisions = Vec::with_capacity(studies.len());
    for study in &studies {
        let d = assess_study(study, cfg, &predictor)?;
        write_report(&d, out)?;
        decisions.push(d);
    }
    info!("assessed {} studies into {}", decisions.len(), out.display());
    Ok(decisions)
}

pub fn rerender(sidecar: &Path) -> Result<String, CliError> {
    let text = fs::read_to_string(sidecar).map_err(|e| CliError::io(sidecar, e))?;
    let study = from_sidecar(&text).map_err(|e| CliError::Other(format!("{}: {e}", sidecar.display())))?;
    Ok(render_report(&study))
}

/// Tolerances for counting a CC BB as found.
pub const BB_CENTER_TOLERANCE_PX: f64 = 3.0;
pub const BB_RADIUS_TOLERANCE_PX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub cases: usize,
    pub outcome_agreement: usize,
    pub mlo: ConfusionMatrix,
    pub cc: ConfusionMatrix,
    pub bb_detected: usize,
    pub bb_total: usize,
    /// Endpoint errors at model-input scale, when a model was given.
    pub endpoint_error: Option<ErrorSummary>,
}

impl EvalSummary {
    pub fn to_text(&self) -> String {
        let pct = |r: Option<f64>| r.map(format_percent).unwrap_or_else(|| "n/a".into());
        let mut s = String::new();
        let _ = writeln!(s, "cases: {}", self.cases);
        let agree = (self.cases > 0).then(|| self.outcome_agreement as f64 / self.cases as f64);
        let _ = writeln!(s, "outcome agreement: {}/{} ({}%)", self.outcome_agreement, self.cases, pct(agree));
        let _ = writeln!(s, "MLO TPR: {}%  TNR: {}%", pct(self.mlo.tpr()), pct(self.mlo.tnr()));
        let _ = writeln!(s, "CC TPR: {}%  TNR: {}%  indeterminate: {}", pct(self.cc.tpr()), pct(self.cc.tnr()), self.cc.indeterminate);
        let rate = detection_rate(self.bb_detected, self.bb_total).ok();
        let _ = writeln!(s, "BB detection: {}/{} ({}%)", self.bb_detected, self.bb_total, pct(rate));
        if let Some(e) = &self.endpoint_error {
            let _ = writeln!(s, "endpoint error px: mean {} median {} p95 {} max {}", e.mean, e.median, e.p95, e.max);
        }
        s
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Scores the reports in `reports` against a phantom dataset's labels and
/// writes metric files into `out`. With a model, also scores its endpoints
/// on the dataset's MLOs.
pub fn evaluate(
    dataset: &Path,
    reports: &Path,
    out: &Path,
    bb: &BbParams,
    model: Option<&Model>,
) -> Result<EvalSummary, CliError> {
    let rows = read_manifest(&dataset.join(MANIFEST_FILE))?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let (mut mlo_pred, mut mlo_true, mut cc_pred, mut cc_true) = (vec![], vec![], vec![], vec![]);
    let mut outcomes = String::from("subject,expected,predicted,agree\n");
    let mut agreement = 0;
    let mut bb_rows = String::from("subject,detected,center_error_px,radius_error_px\n");
    let (mut bb_detected, mut bb_total) = (0, 0);
    for r in &rows {
        let path = reports.join(format!("{}.report.json", r.subject));
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let study = from_sidecar(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        let breast = study
            .breasts
            .iter()
            .find(|b| b.laterality == r.laterality)
            .ok_or_else(|| CliError::Other(format!("{}: no {} breast", path.display(), r.laterality)))?;
        mlo_pred.push(breast.mlo_verdict());
        mlo_true.push(r.mlo_verdict);
        cc_pred.push(breast.outcome.cc_verdict());
        cc_true.push(r.cc_verdict);
        let predicted = outcome_code(breast.outcome);
        let agree = predicted == r.outcome;
        agreement += usize::from(agree);
        let _ = writeln!(outcomes, "{},{},{predicted},{agree}", r.subject, r.outcome);

        if let (Some(x), Some(y), Some(radius)) = (r.cc_bb_x, r.cc_bb_y, r.cc_bb_radius) {
            bb_total += 1;
            let img = load_image(&dataset.join(&r.dir).join(&r.cc_image)).map_err(|e| CliError::Study(e.to_string()))?;
            let found = detect_bb(&normalize(&img), bb);
            let (ce, re) = found.map_or((f64::NAN, f64::NAN), |c| ((c.center.x - x).hypot(c.center.y - y), (c.radius - radius).abs()));
            let ok = ce <= BB_CENTER_TOLERANCE_PX && re <= BB_RADIUS_TOLERANCE_PX;
            bb_detected += usize::from(ok);
            let _ = writeln!(bb_rows, "{},{ok},{ce},{re}", r.subject);
        }
    }
    let mlo = confusion(&mlo_pred, &mlo_true)?;
    let cc = confusion(&cc_pred, &cc_true)?;
    write(&out.join("mlo_confusion.csv"), &mlo.to_csv())?;
    write(&out.join("cc_confusion.csv"), &cc.to_csv())?;
    write(&out.join("outcomes.csv"), &outcomes)?;
    write(&out.join("bb_detection.csv"), &bb_rows)?;

    let endpoint_error = match model {
        Some(m) => Some(score_endpoints(m, dataset, &rows, out)?),
        None => None,
    };
    let summary = EvalSummary {
        cases: rows.len(),
        outcome_agreement: agreement,
        mlo,
        cc,
        bb_detected,
        bb_total,
        endpoint_error,
    };
    write(&out.join("summary.txt"), &summary.to_text())?;
    Ok(summary)
}

fn score_endpoints(model: &Model, dataset: &Path, rows: &[ManifestRow], out: &Path) -> Result<ErrorSummary, CliError> {
    let side = model.arch.input_size;
    let (mut preds, mut truths, mut lengths) = (Vec::new(), Vec::new(), Vec::new());
    for r in rows.iter().filter(|r| r.mlo_verdict == Verdict::Adequate) {
        let dir = dataset.join(&r.dir);
        let img = load_image(&dir.join(&r.mlo_image)).map_err(|e| CliError::Study(e.to_string()))?;
        let ann_path = dir.join(&r.mlo_annotation);
        let text = fs::read_to_string(&ann_path).map_err(|e| CliError::io(&ann_path, e))?;
        let (ann, _) = parse_annotation(&text).map_err(|e| CliError::Study(format!("{}: {e}", ann_path.display())))?;
        let pred = forward(model, &prepare_image(&img, side))?;
        let truth = target_for(&ann, side)?;
        let length = |v: &EndpointVector| -> Result<Option<f64>, CliError> {
            let (pec, pnl) = v.segments()?;
            let dims = mammopos_core::geometry::Bounds { width: side as u32, height: side as u32 };
            Ok(assess_mlo(pec, pnl, dims).d_mlo)
        };
        lengths.push((r.subject.clone(), length(&truth)?.unwrap_or(f64::NAN), length(&pred)?.unwrap_or(f64::NAN)));
        preds.push(pred);
        truths.push(truth);
    }
    let errors = endpoint_errors(&preds, &truths)?;
    write(&out.join("endpoint_errors.csv"), &errors.to_csv())?;
    write(&out.join("endpoint_histogram.csv"), &histogram_csv(&errors.all(), 1.0))?;
    write(&out.join("pnl_lengths.csv"), &pnl_length_csv(&lengths))?;
    errors.overall.ok_or_else(|| CliError::Other("no adequate MLOs to score".into()))
}
