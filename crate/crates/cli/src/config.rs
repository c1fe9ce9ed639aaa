//! Optional TOML run configuration. Every key is optional; command-line
//! flags override the file, the file overrides built-in defaults.
//!
//! ```toml
//! variant = "drhdr"
//! preset = "tiny"
//! seed = 7
//! epochs = 48
//! batch = 4
//! hw = "1060x1900"
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub variant: Option<String>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub patch: Option<usize>,
    pub max_steps: Option<u64>,
    pub val: Option<usize>,
    pub lr_scale: Option<f64>,
    pub hw: Option<String>,
    pub convention: Option<String>,
    pub deterministic: Option<bool>,
    pub count: Option<usize>,
    pub size: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// `flag`, else `file`, else `default`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Parses `HxW`, e.g. `1060x1900`.
pub fn parse_hw(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("expected HEIGHTxWIDTH, got `{s}`"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hw_is_height_first() {
        assert_eq!(parse_hw("1060x1900").unwrap(), (1060, 1900));
        assert!(parse_hw("1060").is_err());
        assert!(parse_hw("0x4").is_err());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick(None, None, 3), 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("colour = 3").is_err());
        let c: FileConfig = toml::from_str("seed = 4\nhw = \"2x2\"").unwrap();
        assert_eq!(c.seed, Some(4));
    }
}
