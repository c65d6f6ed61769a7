use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// A model load recorded by a pipeline stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditEntry {
    pub stage: String,
    pub role: String,
    pub path: String,
    pub checksum: String,
}

/// Append-only, tab-separated log of every model a stage loads.
#[derive(Clone, Debug)]
pub struct AuditLog {
    path: PathBuf,
}

impl AuditLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        AuditLog { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&self, stage: &str, role: &str, path: &Path, checksum: &str) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(f, "load\t{stage}\t{role}\t{}\t{checksum}", path.display())?;
        Ok(())
    }

    pub fn entries(&self) -> Result<Vec<AuditEntry>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        std::fs::read_to_string(&self.path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() != 5 || f[0] != "load" {
                    return Err(Error::Format {
                        what: "audit log",
                        detail: format!("line {} is malformed", i + 1),
                    });
                }
                Ok(AuditEntry {
                    stage: f[1].into(),
                    role: f[2].into(),
                    path: f[3].into(),
                    checksum: f[4].into(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appends_and_parses() {
        let dir = tempfile::tempdir().unwrap();
        let log = AuditLog::new(dir.path().join("audit.log"));
        assert!(log.entries().unwrap().is_empty());
        log.record("distill", "teacher", Path::new("t.ckpt"), "ab").unwrap();
        log.record("finetune", "student", Path::new("s.ckpt"), "cd").unwrap();
        let e = log.entries().unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].role, "teacher");
        assert_eq!(e[1].stage, "finetune");
    }
}
