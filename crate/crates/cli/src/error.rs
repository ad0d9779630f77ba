use std::fmt;

use ladder_hsi::Error;

/// A failure with its process exit code.
///
/// Printed to stderr as one line of `key=value` fields so scripts can parse
/// it, e.g. `error kind=config exit=2 message="unknown field ..."`.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub code: i32,
    pub message: String,
    pub hint: Option<String>,
}

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING_DATA: i32 = 3;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            kind: "config",
            code: EXIT_CONFIG,
            message: msg.into(),
            hint: None,
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError {
            kind: "data",
            code: EXIT_FAILURE,
            message: msg.into(),
            hint: None,
        }
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError {
            kind: "io",
            code: EXIT_FAILURE,
            message: msg.into(),
            hint: None,
        }
    }

    /// The single stderr line.
    pub fn line(&self) -> String {
        let q = |s: &str| serde_json::to_string(s).unwrap();
        let mut s = format!(
            "error kind={} exit={} message={}",
            self.kind,
            self.code,
            q(&self.message)
        );
        if let Some(h) = &self.hint {
            s.push_str(&format!(" hint={}", q(h)));
        }
        s
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (kind, code) = match &e {
            Error::Config(_) => ("config", EXIT_CONFIG),
            Error::MissingDataset(_) => ("missing-dataset", EXIT_MISSING_DATA),
            Error::Divergence { .. } => ("divergence", EXIT_FAILURE),
            Error::Io { .. } => ("io", EXIT_FAILURE),
            Error::Format { .. } => ("format", EXIT_FAILURE),
            Error::Data(_) | Error::Dimension(_) => ("data", EXIT_FAILURE),
            _ => ("internal", EXIT_FAILURE),
        };
        let hint = matches!(e, Error::MissingDataset(_)).then(|| {
            "put the cube and ground-truth HSICUBE1 files in --data-dir (or $LADDER_DATA_DIR); \
             raw dumps can be converted with `ladder convert`"
                .to_string()
        });
        CliError {
            kind,
            code,
            message,
            hint,
        }
    }
}
