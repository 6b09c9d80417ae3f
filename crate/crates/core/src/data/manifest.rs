//! Tab-separated photo manifests.
//!
//! One record per line: `photo_id  group_id  input  target  mask`. Blank
//! lines and `#` comments are skipped; `# split: train|test` tags the file.
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, IoContext, Result};

const FIELDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhotoRecord {
    pub photo_id: String,
    pub group_id: String,
    pub input: PathBuf,
    pub target: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroupManifest {
    pub split: Split,
    records: Vec<PhotoRecord>,
}

impl GroupManifest {
    /// Sorts by photo id and rejects duplicates.
    pub fn new(split: Split, mut records: Vec<PhotoRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.photo_id.cmp(&b.photo_id));
        if let Some(w) = records.windows(2).find(|w| w[0].photo_id == w[1].photo_id) {
            return Err(Error::Invalid(format!("duplicate photo id `{}`", w[0].photo_id)));
        }
        Ok(GroupManifest { split, records })
    }

    pub fn records(&self) -> &[PhotoRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, photo_id: &str) -> Option<&PhotoRecord> {
        self.records
            .binary_search_by(|r| r.photo_id.as_str().cmp(photo_id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Records by group id, both levels in sorted order.
    pub fn groups(&self) -> BTreeMap<&str, Vec<&PhotoRecord>> {
        let mut groups: BTreeMap<&str, Vec<&PhotoRecord>> = BTreeMap::new();
        for r in &self.records {
            groups.entry(&r.group_id).or_default().push(r);
        }
        groups
    }

    /// Parses manifest text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path, source: &Path) -> Result<Self> {
        let mut split = Split::Train;
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse {
                path: source.to_path_buf(),
                line: i + 1,
                msg,
            };
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.trim_start().strip_prefix('#') {
                if let Some(tag) = comment.trim().strip_prefix("split:") {
                    split = match tag.trim() {
                        "train" => Split::Train,
                        "test" => Split::Test,
                        other => return Err(err(format!("unknown split `{other}`"))),
                    };
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != FIELDS {
                return Err(err(format!("expected {FIELDS} tab-separated fields, found {}", fields.len())));
            }
            if let Some(pos) = fields.iter().position(|f| f.trim().is_empty()) {
                return Err(err(format!("field {} is empty", pos + 1)));
            }
            if !seen.insert(fields[0].to_string()) {
                return Err(err(format!("duplicate photo id `{}`", fields[0])));
            }
            let path = |f: &str| base.join(f);
            records.push(PhotoRecord {
                photo_id: fields[0].to_string(),
                group_id: fields[1].to_string(),
                input: path(fields[2]),
                target: path(fields[3]),
                mask: path(fields[4]),
            });
        }
        Self::new(split, records)
    }

    /// Serializes with paths relative to `base` where possible.
    pub fn to_tsv(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut s = format!("# split: {}\n", self.split.name());
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                r.photo_id,
                r.group_id,
                rel(&r.input),
                rel(&r.target),
                rel(&r.mask)
            );
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        fs::write(path, self.to_tsv(base)).at(path)
    }
}

/// Reads and validates a manifest; every referenced file must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<GroupManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).at(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let manifest = GroupManifest::parse(&text, base, path)?;
    for r in manifest.records() {
        for file in [&r.input, &r.target, &r.mask] {
            if !file.is_file() {
                return Err(Error::Io {
                    path: file.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("referenced by photo `{}`", r.photo_id)),
                });
            }
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<GroupManifest> {
        GroupManifest::parse(text, Path::new("/data"), Path::new("m.tsv"))
    }

    #[test]
    fn empty_file() {
        let m = parse("").unwrap();
        assert!(m.is_empty());
        assert!(m.groups().is_empty());
    }

    #[test]
    fn shared_group() {
        let m = parse("b\tg\tb.png\tbt.png\tbm.png\n# note\n\na\tg\ta.png\tat.png\tam.png\n").unwrap();
        let groups = m.groups();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups["g"].len(), 2);
        assert_eq!(m.records()[0].photo_id, "a");
        assert_eq!(m.records()[0].input, PathBuf::from("/data/a.png"));
        assert_eq!(m.get("b").unwrap().mask, PathBuf::from("/data/bm.png"));
    }

    #[test]
    fn arity_error_names_line() {
        let err = parse("a\tg\ta\tb\tc\nx\tg\tx.png\tt.png\n").unwrap_err();
        match &err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(*line, 2);
                assert!(msg.contains("expected 5") && msg.contains("found 4"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("m.tsv:2"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = parse("a\tg\t1\t2\t3\na\th\t4\t5\t6\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn split_tag() {
        assert_eq!(parse("# split: test\n").unwrap().split, Split::Test);
        assert!(parse("# split: val\n").is_err());
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["a.png", "at.png", "am.png", "b.png", "bt.png", "bm.png"] {
            fs::write(dir.path().join(name), b"x").unwrap();
        }
        let path = dir.path().join("m.tsv");
        fs::write(&path, "# split: test\nb\tg2\tb.png\tbt.png\tbm.png\na\tg1\ta.png\tat.png\tam.png\n").unwrap();
        let first = load_manifest(&path).unwrap();
        first.save(&path).unwrap();
        let second = load_manifest(&path).unwrap();
        assert_eq!(first, second);
        assert_eq!(second.split, Split::Test);
        fs::remove_file(dir.path().join("bm.png")).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Io { .. })));
    }
}
