//! In-memory collection of output files, content hashing and the final
//! all-or-nothing write.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, String)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, content: String) {
        self.files.push((name.into(), content));
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    fn sorted(&self) -> Vec<&(String, String)> {
        let mut v: Vec<_> = self.files.iter().collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    /// Per-file blob hashes plus one hash over the whole listing.
    pub fn hashes(&self) -> (Vec<(String, String)>, String) {
        let files: Vec<(String, String)> = self
            .sorted()
            .into_iter()
            .map(|(n, c)| (n.clone(), blob_hash(c.as_bytes())))
            .collect();
        let listing: String = files.iter().map(|(n, h)| format!("{n}\0{h}\n")).collect();
        (files, blob_hash(listing.as_bytes()))
    }

    /// Writes every file next to its destination first, then renames them
    /// into place.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
        let result = (|| -> Result<()> {
            for (name, content) in self.sorted() {
                let dest = dir.join(name);
                let parent = dest.parent().unwrap_or(dir);
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
                let tmp = parent.join(format!(
                    ".{}.tmp",
                    dest.file_name().and_then(|s| s.to_str()).unwrap_or("out")
                ));
                fs::write(&tmp, content).with_context(|| format!("writing {}", tmp.display()))?;
                staged.push((tmp, dest));
            }
            Ok(())
        })();
        if let Err(e) = result {
            for (tmp, _) in &staged {
                let _ = fs::remove_file(tmp);
            }
            return Err(e);
        }
        for (tmp, dest) in staged {
            fs::rename(&tmp, &dest).with_context(|| format!("renaming into {}", dest.display()))?;
        }
        Ok(())
    }
}

/// Git-style object hash (`blob <len>\0` header) over SHA-256.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}
