//! Collections of templates grouped by subject, and their on-disk layout
//! `subject_<id>/impression_<k>.fpt`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{encode_binary, read_template};
use crate::error::{Error, Result};
use crate::template::Template;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub global: usize,
    pub local: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    /// Impressions in their stable serialized order.
    pub impressions: Vec<Template>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    subjects: Vec<Subject>,
    dims: Dims,
}

impl Corpus {
    /// Builds a corpus, checking that every template shares one set of
    /// dimensions. An empty corpus takes `fallback` as its dimensions.
    pub fn new(subjects: Vec<Subject>, fallback: Dims) -> Result<Self> {
        let dims = subjects
            .iter()
            .flat_map(|s| s.impressions.first())
            .map(|t| Dims {
                global: t.global_dim(),
                local: t.local_dim,
            })
            .next()
            .unwrap_or(fallback);
        for s in &subjects {
            for (k, t) in s.impressions.iter().enumerate() {
                if t.global_dim() != dims.global || t.local_dim != dims.local {
                    return Err(Error::Corpus(format!(
                        "subject {} impression {k}: dims ({}, {}) differ from corpus ({}, {})",
                        s.id,
                        t.global_dim(),
                        t.local_dim,
                        dims.global,
                        dims.local
                    )));
                }
            }
        }
        Ok(Corpus { subjects, dims })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn template(&self, subject: usize, impression: usize) -> &Template {
        &self.subjects[subject].impressions[impression]
    }

    pub fn template_count(&self) -> usize {
        self.subjects.iter().map(|s| s.impressions.len()).sum()
    }

    /// Impressions per subject, or `None` when the corpus is ragged.
    pub fn impressions_per_subject(&self) -> Option<usize> {
        let first = self.subjects.first().map_or(0, |s| s.impressions.len());
        self.subjects
            .iter()
            .all(|s| s.impressions.len() == first)
            .then_some(first)
    }

    /// Iterates templates subject-major in serialized order.
    pub fn iter(&self) -> impl Iterator<Item = &Template> {
        self.subjects.iter().flat_map(|s| s.impressions.iter())
    }

    /// SHA-256 over the concatenated binary encodings, hex encoded.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for t in self.iter() {
            hasher.update(encode_binary(t));
        }
        hex(&hasher.finalize())
    }

    pub fn write_dir(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        for s in &self.subjects {
            let dir = root.join(format!("subject_{}", s.id));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (k, t) in s.impressions.iter().enumerate() {
                let path = dir.join(format!("impression_{k}.fpt"));
                fs::write(&path, encode_binary(t)).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }

    pub fn read_dir(root: &Path) -> Result<Self> {
        let mut subject_dirs = Vec::new();
        for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
            let entry = entry.map_err(|e| Error::io(root, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_prefix("subject_") {
                if entry.path().is_dir() {
                    subject_dirs.push((id.to_owned(), entry.path()));
                }
            }
        }
        subject_dirs.sort();

        let mut subjects = Vec::with_capacity(subject_dirs.len());
        for (id, dir) in subject_dirs {
            let mut files = Vec::new();
            for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let entry = entry.map_err(|e| Error::io(&dir, e))?;
                let name = entry.file_name().to_string_lossy().into_owned();
                let k = name
                    .strip_prefix("impression_")
                    .and_then(|r| r.strip_suffix(".fpt"))
                    .and_then(|k| k.parse::<usize>().ok());
                if let Some(k) = k {
                    files.push((k, entry.path()));
                }
            }
            files.sort();
            if files
                .iter()
                .enumerate()
                .any(|(expected, (k, _))| *k != expected)
            {
                return Err(Error::Corpus(format!(
                    "{}: impression indices are not contiguous from 0",
                    dir.display()
                )));
            }
            let mut impressions = Vec::with_capacity(files.len());
            for (_, path) in files {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let t = read_template(&bytes)
                    .map_err(|e| Error::Corpus(format!("{}: {e}", path.display())))?;
                impressions.push(t);
            }
            subjects.push(Subject { id, impressions });
        }
        Corpus::new(
            subjects,
            Dims {
                global: 0,
                local: 0,
            },
        )
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::{ImageSize, Minutia};

    fn tpl(id: &str, g: usize) -> Template {
        let mut global = vec![0.0; 3];
        global[g] = 1.0;
        Template::new(
            global,
            vec![Minutia::new(1.0, 2.0, 0.5, vec![1.0, 0.0])],
            ImageSize::new(10, 10),
            id,
            2,
        )
    }

    #[test]
    fn directory_round_trip_preserves_order() {
        let corpus = Corpus::new(
            vec![
                Subject {
                    id: "0000".into(),
                    impressions: vec![tpl("a", 0), tpl("b", 1)],
                },
                Subject {
                    id: "0001".into(),
                    impressions: vec![tpl("c", 2), tpl("d", 0)],
                },
            ],
            Dims {
                global: 3,
                local: 2,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        corpus.write_dir(dir.path()).unwrap();
        let back = Corpus::read_dir(dir.path()).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(back.checksum(), corpus.checksum());
        assert_eq!(back.impressions_per_subject(), Some(2));
    }

    #[test]
    fn mixed_dims_are_rejected() {
        let mut odd = tpl("x", 0);
        odd.global.push(0.0);
        let res = Corpus::new(
            vec![Subject {
                id: "0".into(),
                impressions: vec![tpl("a", 0), odd],
            }],
            Dims {
                global: 3,
                local: 2,
            },
        );
        assert!(matches!(res, Err(Error::Corpus(_))));
    }
}
