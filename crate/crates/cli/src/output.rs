//! CSV and JSON writers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] scalewave_core::Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },
    #[error("csv output {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("json output {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    /// The run finished but its numerical outcome is a failure.
    #[error("{0}")]
    Failed(String),
}

impl AppError {
    /// 1 for invalid input, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Core(e) if !e.is_validation() => 2,
            AppError::Failed(_) => 2,
            _ => 1,
        }
    }
}

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn ensure_dir(dir: &Path) -> Result<(), AppError> {
    fs::create_dir_all(dir).map_err(|source| AppError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), AppError> {
    fs::write(path, text).map_err(|source| AppError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| AppError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), AppError> {
    let err = |source| AppError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|source| AppError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// File-name friendly form of a report name.
pub fn slug(name: &str) -> String {
    let mut s = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() || c == '.' {
            s.push(c.to_ascii_lowercase());
        } else if !s.ends_with('_') {
            s.push('_');
        }
    }
    s.trim_matches('_').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_carry_seventeen_digits() {
        let s = num(0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
        assert_eq!(num(0.0), "0.0000000000000000e0");
    }

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("I_gamma (gamma=0.5) / t<r"), "i_gamma_gamma_0.5_t_r");
    }
}
