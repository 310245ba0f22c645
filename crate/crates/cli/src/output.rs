//! Report envelopes and atomic file writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::FORMAT_VERSION;

#[derive(Serialize)]
pub struct Envelope<'a, C: Serialize, R: Serialize> {
    pub format_version: u32,
    pub command: &'a str,
    pub config: &'a C,
    pub result: &'a R,
}

/// Writes `bytes` to `dir/name` through a sibling temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, &target).with_context(|| format!("renaming onto {}", target.display()))?;
    Ok(target)
}

pub fn write_report<C: Serialize, R: Serialize>(
    dir: &Path,
    command: &str,
    config: &C,
    result: &R,
) -> anyhow::Result<PathBuf> {
    let env = Envelope { format_version: FORMAT_VERSION, command, config, result };
    let mut text = serde_json::to_string_pretty(&env)?;
    text.push('\n');
    write_atomic(dir, &format!("{command}.json"), text.as_bytes())
}

pub fn write_csv(dir: &Path, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> anyhow::Result<PathBuf> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    write_atomic(dir, name, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces() {
        let dir = std::env::temp_dir().join(format!("hamshade-out-{}", std::process::id()));
        let p = write_atomic(&dir, "a.txt", b"one").unwrap();
        write_atomic(&dir, "a.txt", b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        let leftovers: Vec<_> = std::fs::read_dir(&dir).unwrap().filter_map(|e| e.ok()).filter(|e| e.file_name().to_string_lossy().ends_with(".tmp")).collect();
        assert!(leftovers.is_empty());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
