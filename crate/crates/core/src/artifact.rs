//! Versioned JSON persistence for every artifact the pipeline produces.
//!
//! Each file is a JSON object carrying a top-level `"schema_version"`. Keys
//! are written in sorted order and floats in shortest round-trip form, so
//! saving the same value twice yields byte-identical files and loading
//! restores every `f64` exactly.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::types::{Demonstration, Scene};

pub const SCHEMA_VERSION: &str = "1";

/// A persistable value with a JSON schema.
pub trait Artifact: Serialize + DeserializeOwned {
    /// Human-readable kind used in diagnostics.
    const KIND: &'static str;

    /// Semantic checks run after a successful parse.
    fn validate(&self) -> Result<()> {
        Ok(())
    }

    /// Rewrites the raw document before typed parsing (e.g. resolving
    /// scene references relative to the file's directory).
    fn preprocess(_doc: &mut Value, _base_dir: &Path) -> Result<()> {
        Ok(())
    }
}

pub fn to_json_string<T: Artifact>(value: &T) -> Result<String> {
    let mut doc = serde_json::to_value(value)?;
    let Value::Object(map) = &mut doc else {
        return Err(Error::invalid(format!(
            "{} must serialize to an object",
            T::KIND
        )));
    };
    map.insert(
        "schema_version".into(),
        Value::String(SCHEMA_VERSION.into()),
    );
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

/// Parses an artifact; relative references resolve against `base_dir`.
pub fn from_json_str<T: Artifact>(text: &str, base_dir: &Path) -> Result<T> {
    let mut doc: Value = serde_json::from_str(text)?;
    check_version(&mut doc)?;
    T::preprocess(&mut doc, base_dir)?;
    let value: T = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        Error::Schema {
            field: if path == "." {
                T::KIND.to_string()
            } else {
                path
            },
            message: e.into_inner().to_string(),
        }
    })?;
    value.validate()?;
    Ok(value)
}

fn check_version(doc: &mut Value) -> Result<()> {
    let Value::Object(map) = doc else {
        return Err(Error::Schema {
            field: ".".into(),
            message: "top level must be a JSON object".into(),
        });
    };
    match map.remove("schema_version") {
        Some(Value::String(v)) if v == SCHEMA_VERSION => Ok(()),
        Some(Value::String(v)) => Err(Error::Version {
            found: v,
            supported: SCHEMA_VERSION.into(),
        }),
        Some(other) => Err(Error::Version {
            found: other.to_string(),
            supported: SCHEMA_VERSION.into(),
        }),
        None => Err(Error::Schema {
            field: "schema_version".into(),
            message: "missing field `schema_version`".into(),
        }),
    }
}

pub fn save_artifact<T: Artifact>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, to_json_string(value)?).map_err(|e| Error::io(path, e))
}

pub fn load_artifact<T: Artifact>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    from_json_str(&text, base)
}

impl Artifact for Scene {
    const KIND: &'static str = "scene";
}

impl Artifact for Demonstration {
    const KIND: &'static str = "demonstration";

    fn validate(&self) -> Result<()> {
        Demonstration::validate(self)
    }

    fn preprocess(doc: &mut Value, base_dir: &Path) -> Result<()> {
        let Some(Value::Array(steps)) = doc.get_mut("steps") else {
            return Ok(());
        };
        for (t, step) in steps.iter_mut().enumerate() {
            let Some(scene) = step.get_mut("scene") else {
                continue;
            };
            let Some(reference) = scene.get("ref").and_then(Value::as_str) else {
                continue;
            };
            let path = base_dir.join(reference);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let mut inner: Value = serde_json::from_str(&text).map_err(|e| Error::Schema {
                field: format!("steps[{t}].scene.ref"),
                message: e.to_string(),
            })?;
            check_version(&mut inner)?;
            *scene = inner;
        }
        Ok(())
    }
}
