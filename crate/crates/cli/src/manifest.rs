//! Run manifest: every artifact under the output directory, digested.

use canids_core::{Digest, Error};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// File name of the manifest inside the output directory.
pub const MANIFEST_NAME: &str = "manifest.txt";

/// Digests every file under `out` except the manifest itself.
///
/// Paths are relative to `out` with `/` separators and sorted, so two
/// runs that wrote the same bytes render the same manifest.
pub fn collect(out: &Path) -> Result<BTreeMap<String, Digest>, Error> {
    let mut files = BTreeMap::new();
    let mut stack = vec![out.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = relative_name(out, &path);
                if rel == MANIFEST_NAME {
                    continue;
                }
                let bytes = std::fs::read(&path)?;
                files.insert(rel, Digest::of(&bytes));
            }
        }
    }
    Ok(files)
}

fn relative_name(out: &Path, path: &Path) -> String {
    let rel: PathBuf = path
        .strip_prefix(out)
        .expect("walk stays under the output directory")
        .to_path_buf();
    let parts: Vec<String> = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    parts.join("/")
}

/// Renders the manifest document.
pub fn render(config_hash: &Digest, seed: u64, files: &BTreeMap<String, Digest>) -> String {
    let mut out = String::new();
    out.push_str("manifest v1\n");
    out.push_str(&format!("config {config_hash}\n"));
    out.push_str(&format!("seed {seed}\n"));
    out.push_str(&format!("files {}\n", files.len()));
    for (path, digest) in files {
        out.push_str(&format!("{path} {digest}\n"));
    }
    out
}

/// Digests the output directory and writes the manifest into it.
pub fn write(out: &Path, config_hash: &Digest, seed: u64) -> Result<PathBuf, Error> {
    let files = collect(out)?;
    let path = out.join(MANIFEST_NAME);
    std::fs::write(&path, render(config_hash, seed, &files))?;
    Ok(path)
}
