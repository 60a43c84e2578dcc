//! The assessment pipeline for one study: load views, find BBs, predict MLO
//! lines, apply the positioning rules and write the report.

use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, warn};
use mammopos_core::annotations::{parse_annotation_with, Hints};
use mammopos_core::bbdetect::{cc_pnl, detect_bb};
use mammopos_core::decision::{decide_study, BreastViews, CcInput, MloInput, StudyDecision};
use mammopos_core::geometry::Segment;
use mammopos_core::imaging::{load_image, normalize, GrayImage};
use mammopos_core::report::{render_report, to_sidecar};
use mammopos_core::view::{Laterality, View};
use mammopos_predictor::checkpoint::load_model;
use mammopos_predictor::{passthrough_predictor, predict_lines, Model};

use crate::config::{PipelineConfig, PredictorMode};
use crate::study::{Study, ViewFile};
use crate::CliError;

pub enum Predictor {
    Passthrough,
    Trained(Box<Model>),
}

impl Predictor {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, CliError> {
        match cfg.predictor {
            PredictorMode::Passthrough => Ok(Predictor::Passthrough),
            PredictorMode::Trained => {
                let path = cfg.model.as_deref().ok_or_else(|| CliError::Config("trained mode needs a model checkpoint".into()))?;
                if !path.is_file() {
                    return Err(CliError::Config(format!("model checkpoint {} not found", path.display())));
                }
                Ok(Predictor::Trained(Box::new(load_model(path, None)?)))
            }
        }
    }

    /// PEC and PNL (nipple first) in native pixels.
    pub fn lines(&self, view: &ViewFile, img: &GrayImage) -> Result<(Segment, Segment), CliError> {
        match self {
            Predictor::Trained(model) => Ok(predict_lines(model, img)?),
            Predictor::Passthrough => {
                let path = view
                    .annotation
                    .as_deref()
                    .ok_or_else(|| CliError::Study(format!("{}: passthrough needs an annotation", view.path.display())))?;
                let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let hints = Hints { view: Some(view.view), laterality: Some(view.laterality) };
                let (ann, _) = parse_annotation_with(&text, hints).map_err(|e| CliError::Study(format!("{}: {e}", path.display())))?;
                Ok(passthrough_predictor(&ann)?.segments()?)
            }
        }
    }
}

pub fn assess_study(study: &Study, cfg: &PipelineConfig, predictor: &Predictor) -> Result<StudyDecision, CliError> {
    let mut breasts: Vec<BreastViews> = [Laterality::Left, Laterality::Right]
        .into_iter()
        .map(|laterality| BreastViews { laterality, mlos: Vec::new(), ccs: Vec::new() })
        .collect();
    for v in &study.views {
        let img = load_image(&v.path).map_err(|e| CliError::Study(e.to_string()))?;
        let norm = normalize(&img);
        let bb = detect_bb(&norm, &cfg.bb);
        debug!("{}: BB {:?}", v.name, bb);
        let breast = &mut breasts[usize::from(v.laterality == Laterality::Right)];
        match v.view {
            View::Mlo => {
                let (pec, pnl) = predictor.lines(v, &img)?;
                breast.mlos.push(MloInput { name: v.name.clone(), dims: img.bounds(), spacing: img.spacing(), pec, pnl, bb });
            }
            View::Cc => {
                let side = cfg.chest_wall.resolve(&norm, v.laterality);
                let pnl = bb.and_then(|b| match cc_pnl(img.bounds(), &b, side) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        warn!("{}: {e}", v.name);
                        None
                    }
                });
                breast.ccs.push(CcInput { name: v.name.clone(), dims: img.bounds(), spacing: img.spacing(), pnl });
            }
        }
    }
    Ok(decide_study(&study.subject, &breasts, &cfg.decision)?)
}

/// Writes `<subject>.report.txt` and `<subject>.report.json` into `out`.
pub fn write_report(decision: &StudyDecision, out: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let txt = out.join(format!("{}.report.txt", decision.subject));
    let json = out.join(format!("{}.report.json", decision.subject));
    fs::write(&txt, render_report(decision)).map_err(|e| CliError::io(&txt, e))?;
    fs::write(&json, to_sidecar(decision)).map_err(|e| CliError::io(&json, e))?;
    Ok((txt, json))
}
