//! Study directories: one directory per subject, one image per view.
//!
//! View identity comes from file names such as `Mammo_133_RMLO_P_2.png`
//! (an `L`/`R` + `MLO`/`CC` token anywhere among the `_`-separated parts);
//! a `.meta` sidecar naming `laterality` and `view` overrides the name.
//! An MLO's annotation, when present, sits beside it as `<stem>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use mammopos_core::imaging::Sidecar;
use mammopos_core::view::{Laterality, View};

use crate::CliError;

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "pgm", "pnm"];

#[derive(Debug, Clone, PartialEq)]
pub struct ViewFile {
    pub path: PathBuf,
    /// File stem, used as the view's name in reports.
    pub name: String,
    pub laterality: Laterality,
    pub view: View,
    pub annotation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub subject: String,
    pub dir: PathBuf,
    pub views: Vec<ViewFile>,
}

/// `(laterality, view)` from a token like `RMLO` or `lcc`.
pub fn parse_view_tag(stem: &str) -> Option<(Laterality, View)> {
    stem.split('_').find_map(|tok| {
        let tok = tok.to_ascii_uppercase();
        let (lat, view) = tok.split_at_checked(1)?;
        Some((lat.parse().ok()?, view.parse().ok()?))
    })
}

/// The id in `Mammo_<id>_...`.
pub fn subject_from_stem(stem: &str) -> Option<&str> {
    let mut parts = stem.split('_');
    match (parts.next(), parts.next()) {
        (Some(p), Some(id)) if p.eq_ignore_ascii_case("mammo") && !id.is_empty() => Some(id),
        _ => None,
    }
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path.extension().and_then(|e| e.to_str()).is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut paths: Vec<PathBuf> =
        fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    Ok(paths)
}

pub fn load_study(dir: &Path) -> Result<Study, CliError> {
    let mut views = Vec::new();
    for path in sorted_entries(dir)?.into_iter().filter(|p| is_image(p)) {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
        let sidecar = Sidecar::load_for(&path).map_err(|e| CliError::Study(e.to_string()))?.unwrap_or_default();
        let from_name = parse_view_tag(&name);
        let laterality = sidecar.laterality.or(from_name.map(|t| t.0));
        let view = sidecar.view.or(from_name.map(|t| t.1));
        let (Some(laterality), Some(view)) = (laterality, view) else {
            warn!("{}: no laterality/view in name or sidecar; skipped", path.display());
            continue;
        };
        let annotation = Some(path.with_extension("json")).filter(|p| p.is_file());
        views.push(ViewFile { path, name, laterality, view, annotation });
    }
    if views.is_empty() {
        return Err(CliError::Study(format!("{}: no recognizable views", dir.display())));
    }
    let subject = views
        .iter()
        .find_map(|v| subject_from_stem(&v.name).map(str::to_owned))
        .or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "unknown".into());
    Ok(Study { subject, dir: dir.to_owned(), views })
}

/// `root` itself when it holds images, otherwise each subdirectory that does.
pub fn find_studies(root: &Path) -> Result<Vec<Study>, CliError> {
    let entries = sorted_entries(root)?;
    if entries.iter().any(|p| is_image(p)) {
        return Ok(vec![load_study(root)?]);
    }
    let studies: Vec<Study> = entries
        .iter()
        .filter(|p| p.is_dir())
        .filter(|p| sorted_entries(p).map(|e| e.iter().any(|f| is_image(f))).unwrap_or(false))
        .map(|p| load_study(p))
        .collect::<Result<_, _>>()?;
    if studies.is_empty() {
        return Err(CliError::Study(format!("{}: no study directories with images", root.display())));
    }
    Ok(studies)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_from_names() {
        assert_eq!(parse_view_tag("Mammo_133_RMLO_P_1"), Some((Laterality::Right, View::Mlo)));
        assert_eq!(parse_view_tag("Mammo_133_LCC_P_2"), Some((Laterality::Left, View::Cc)));
        assert_eq!(parse_view_tag("scan_lmlo"), Some((Laterality::Left, View::Mlo)));
        assert_eq!(parse_view_tag("Mammo_133_XCC"), None);
        assert_eq!(parse_view_tag("notes"), None);
        assert_eq!(subject_from_stem("Mammo_133_RMLO_P_1"), Some("133"));
        assert_eq!(subject_from_stem("scan_1"), None);
    }

    #[test]
    fn sidecar_overrides_name_and_untagged_files_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let img = mammopos_core::GrayImage::filled(8, 8, 0.5).quantized(8).unwrap();
        img.save(&dir.path().join("Mammo_7_LMLO_P_1.png")).unwrap();
        img.save(&dir.path().join("Mammo_7_LCC_P_1.png")).unwrap();
        img.save(&dir.path().join("extra.png")).unwrap();
        fs::write(dir.path().join("Mammo_7_LCC_P_1.meta"), "laterality = R\n").unwrap();
        let s = load_study(dir.path()).unwrap();
        assert_eq!(s.subject, "7");
        let tags: Vec<_> = s.views.iter().map(|v| (v.name.as_str(), v.laterality, v.view)).collect();
        assert_eq!(
            tags,
            vec![("Mammo_7_LCC_P_1", Laterality::Right, View::Cc), ("Mammo_7_LMLO_P_1", Laterality::Left, View::Mlo)]
        );
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(load_study(empty.path()), Err(CliError::Study(_))));
        assert!(find_studies(empty.path()).is_err());
    }
}
