use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub motion_path: PathBuf,
    pub embedding_path: PathBuf,
    pub caption: String,
}

/// Tab-separated dataset index: `motion_path<TAB>embedding_path<TAB>caption`.
/// An optional `#split=<tag>` line names the split. Relative paths resolve
/// against the manifest's directory when loaded from disk.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub split: Option<String>,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (lineno, line) in text.lines().enumerate() {
            if let Some(tag) = line.strip_prefix("#split=") {
                m.split = Some(tag.trim().to_string());
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(motion), Some(emb), Some(caption)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Format(format!("manifest line {}: expected 3 tab-separated fields", lineno + 1)));
            };
            m.records.push(ManifestRecord {
                motion_path: motion.into(),
                embedding_path: emb.into(),
                caption: caption.to_string(),
            });
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(s) = &self.split {
            out.push_str(&format!("#split={s}\n"));
        }
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                r.motion_path.display(),
                r.embedding_path.display(),
                r.caption
            ));
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut m = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for r in &mut m.records {
            if r.motion_path.is_relative() {
                r.motion_path = base.join(&r.motion_path);
            }
            if r.embedding_path.is_relative() {
                r.embedding_path = base.join(&r.embedding_path);
            }
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_split_and_tabs_in_caption() {
        let text = "#split=train\na.mtnf\ta.emb\twalk forward\nb.mtnf\tb.emb\twave\tboth hands\n";
        let m = Manifest::parse(text).unwrap();
        assert_eq!(m.split.as_deref(), Some("train"));
        assert_eq!(m.records[1].caption, "wave\tboth hands");
        assert_eq!(m.to_text(), text);
        assert!(Manifest::parse("only\ttwo\n").is_err());
    }
}
