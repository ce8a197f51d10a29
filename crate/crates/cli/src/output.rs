use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qg3d_core::Error;
use serde::Serialize;

pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// An error together with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn parse(message: String) -> Self {
        Self { code: EXIT_IO, message }
    }

    pub fn config(message: String) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message,
        }
    }

    pub fn solver(message: String) -> Self {
        Self {
            code: EXIT_SOLVER,
            message,
        }
    }

    pub fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Parse(_) => EXIT_IO,
            Error::Domain(_)
            | Error::Validation(_)
            | Error::Geometry(_)
            | Error::MeasureSign(_)
            | Error::Precondition(_) => EXIT_VALIDATION,
            Error::Accuracy(_)
            | Error::Singular(_)
            | Error::Resolution(_)
            | Error::Consistency(_)
            | Error::StepSize(_) => EXIT_SOLVER,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Comma-joined CSV text with a header line; every line ends in `\n`.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.text, "{}", fields.join(","));
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// The output directory of one run.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(root).map_err(|e| Failure::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn write(&self, name: &str, text: &str) -> Result<PathBuf, Failure> {
        let path = self.root.join(name);
        std::fs::write(&path, text).map_err(|e| Failure::io(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, Failure> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Failure::parse(format!("{name}: {e}")))?;
        text.push('\n');
        self.write(name, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_keeps_17_digits() {
        assert_eq!(num(1.0 / 3.0), "3.3333333333333331e-1");
        assert_eq!(num(0.0), "0.0000000000000000e0");
        let x = 0.1 + 0.2;
        assert_eq!(num(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        let io = Error::Io {
            path: "p".into(),
            source: std::io::Error::other("x"),
        };
        assert_eq!(Failure::from(io).code, 1);
        assert_eq!(Failure::from(Error::Parse("x".into())).code, 1);
        assert_eq!(Failure::from(Error::Validation("x".into())).code, 2);
        assert_eq!(Failure::from(Error::MeasureSign("x".into())).code, 2);
        assert_eq!(Failure::from(Error::Accuracy("x".into())).code, 3);
        assert_eq!(Failure::from(Error::StepSize("x".into())).code, 3);
    }

    #[test]
    fn csv_lines_end_in_lf() {
        let mut c = Csv::new(&["a", "b"]);
        c.row(&["1".into(), "2".into()]);
        assert_eq!(c.into_string(), "a,b\n1,2\n");
    }
}
