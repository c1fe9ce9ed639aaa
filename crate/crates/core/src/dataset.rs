//! On-disk exposure stacks.
//!
//! ```text
//! DIR/stack_0000/ldr1.png ldr2.png ldr3.png gt.pfm meta.json
//! ```
//!
//! `meta.json` carries the exposure times and, for generated data, the scene
//! seed. `gt.pfm` is optional.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{read_ldr8, read_pfm, write_ldr8, write_pfm, ExposureStack};
use crate::synth::{gen_scene, stack_seeds, SceneParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackMeta {
    pub exposure_times: [f32; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A stack together with the directory name it was loaded from.
#[derive(Clone, Debug)]
pub struct NamedStack {
    pub id: String,
    pub stack: ExposureStack,
}

pub fn write_stack(dir: &Path, stack: &ExposureStack, seed: Option<u64>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, b) in stack.ldr.iter().enumerate() {
        write_ldr8(dir.join(format!("ldr{}.png", i + 1)), b)?;
    }
    if let Some(gt) = &stack.gt {
        write_pfm(dir.join("gt.pfm"), gt)?;
    }
    let meta = StackMeta {
        exposure_times: stack.exposure_times,
        seed,
    };
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

pub fn read_stack(dir: &Path) -> Result<ExposureStack> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: StackMeta =
        serde_json::from_str(&text).map_err(|e| Error::from(e).context(meta_path.display().to_string()))?;
    let ldr = [
        read_ldr8(dir.join("ldr1.png"))?,
        read_ldr8(dir.join("ldr2.png"))?,
        read_ldr8(dir.join("ldr3.png"))?,
    ];
    let gt_path = dir.join("gt.pfm");
    let gt = if gt_path.exists() {
        Some(read_pfm(&gt_path)?)
    } else {
        None
    };
    ExposureStack::new(ldr, meta.exposure_times, gt).map_err(|e| e.context(format!("stack {}", dir.display())))
}

/// Sub-directories of `dir` that contain a `meta.json`, sorted by name.
pub fn stack_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() && p.join("meta.json").is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<NamedStack>> {
    let dirs = stack_dirs(dir)?;
    if dirs.is_empty() {
        return Err(Error::Dataset(format!("no stacks found under {}", dir.display())));
    }
    dirs.iter()
        .map(|d| {
            Ok(NamedStack {
                id: d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                stack: read_stack(d)?,
            })
        })
        .collect()
}

pub fn stack_dir_name(i: usize) -> String {
    format!("stack_{i:04}")
}

/// Generates `n` stacks in memory with seeds derived from `seed`.
pub fn generate(n: usize, base: &SceneParams, seed: u64) -> Result<Vec<NamedStack>> {
    stack_seeds(seed, n)
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let p = SceneParams {
                seed: s,
                ..base.clone()
            };
            Ok(NamedStack {
                id: stack_dir_name(i),
                stack: gen_scene(&p)?,
            })
        })
        .collect()
}

/// Generates and writes `n` stacks under `out`.
pub fn generate_to_disk(out: &Path, n: usize, base: &SceneParams, seed: u64) -> Result<()> {
    for (i, s) in stack_seeds(seed, n).into_iter().enumerate() {
        let p = SceneParams {
            seed: s,
            ..base.clone()
        };
        write_stack(&out.join(stack_dir_name(i)), &gen_scene(&p)?, Some(s))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ldr::quantize8;

    #[test]
    fn disk_round_trip_quantises_ldr_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = SceneParams {
            size: (16, 20),
            ..SceneParams::default()
        };
        generate_to_disk(dir.path(), 2, &p, 9).unwrap();
        let mem = generate(2, &p, 9).unwrap();
        let disk = load_dataset(dir.path()).unwrap();
        assert_eq!(disk.len(), 2);
        for (a, b) in mem.iter().zip(&disk) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.stack.gt, b.stack.gt);
            for i in 0..3 {
                assert_eq!(quantize8(&a.stack.ldr[i]), b.stack.ldr[i]);
            }
        }
    }

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
