//! Model files: versioned JSON holding the architecture and every parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::net::{Architecture, Model, Params};
use crate::PredictorError;

pub const FORMAT: &str = "mammopos-regressor";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct File {
    format: String,
    version: u32,
    architecture: Architecture,
    params: Params,
}

fn err(path: &Path, message: impl Into<String>) -> PredictorError {
    PredictorError::Checkpoint { path: path.to_owned(), message: message.into() }
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), PredictorError> {
    let file = File { format: FORMAT.into(), version: VERSION, architecture: model.arch.clone(), params: model.params.clone() };
    let text = serde_json::to_string(&file).map_err(|e| err(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| err(path, e.to_string()))
}

/// Loads a model; with `expected`, the stored architecture must equal it.
pub fn load_model(path: &Path, expected: Option<&Architecture>) -> Result<Model, PredictorError> {
    let text = fs::read_to_string(path).map_err(|e| err(path, e.to_string()))?;
    let file: File = serde_json::from_str(&text).map_err(|e| err(path, e.to_string()))?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(err(path, format!("unsupported format {} v{}", file.format, file.version)));
    }
    if let Some(arch) = expected {
        if *arch != file.architecture {
            return Err(err(path, "architecture differs from the configured one"));
        }
    }
    Model::from_parts(file.architecture, file.params).map_err(|e| err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = Model::init(Architecture::standard(), 3).unwrap();
        save_model(&model, &path).unwrap();
        assert_eq!(load_model(&path, Some(&Architecture::standard())).unwrap(), model);
        let other = Architecture { activation: Activation::Tanh, ..Architecture::standard() };
        assert!(load_model(&path, Some(&other)).is_err());
        fs::write(&path, "{}").unwrap();
        assert!(load_model(&path, None).is_err());
    }
}
