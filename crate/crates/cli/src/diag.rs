//! Exit codes and machine-readable diagnostics on stderr.

use std::fmt;

use ccgen::Error;
use serde_json::json;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub field: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            kind: "config",
            field: Some(field.to_string()),
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            kind: "data",
            field: None,
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut v = json!({
            "level": "error",
            "code": self.code,
            "kind": self.kind,
            "message": self.message,
        });
        if let Some(f) = &self.field {
            v["field"] = json!(f);
        }
        v.to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::InvalidArgument(_) => (EXIT_CONFIG, "config"),
            Error::Divergence { .. } | Error::Teacher { .. } => (EXIT_RUNTIME, "runtime"),
            _ => (EXIT_DATA, "data"),
        };
        Self {
            code,
            kind,
            field: None,
            message: e.to_string(),
        }
    }
}

/// Progress line on stderr, as JSON.
pub fn info(event: &str, fields: serde_json::Value) {
    let mut v = json!({ "level": "info", "event": event });
    if let (Some(obj), Some(extra)) = (v.as_object_mut(), fields.as_object()) {
        for (k, val) in extra {
            obj.insert(k.clone(), val.clone());
        }
    }
    eprintln!("{v}");
}
