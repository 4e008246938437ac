use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("cannot read label file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("label file line {line}: expected `contract_id<TAB>category`")]
    Malformed { line: usize },
}

/// Contract id to category, from a `contract_id<TAB>category` file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Labels {
    pub categories: BTreeMap<String, String>,
}

impl Labels {
    pub fn category(&self, id: &str) -> Option<&str> {
        self.categories.get(id).map(String::as_str)
    }

    /// Gambling and game DApps both count.
    pub fn is_gambling(&self, id: &str) -> bool {
        self.category(id).is_some_and(|c| {
            let c = c.to_ascii_lowercase();
            c == "gambling" || c == "game"
        })
    }

    pub fn gambling_accounts(&self) -> impl Iterator<Item = &str> {
        self.categories
            .keys()
            .filter(|k| self.is_gambling(k))
            .map(String::as_str)
    }
}

/// Blank lines and lines starting with `#` are skipped.
pub fn parse_labels(text: &str) -> Result<Labels, LabelError> {
    let mut categories = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, cat) = line
            .split_once('\t')
            .ok_or(LabelError::Malformed { line: i + 1 })?;
        let (id, cat) = (id.trim(), cat.trim());
        if id.is_empty() || cat.is_empty() {
            return Err(LabelError::Malformed { line: i + 1 });
        }
        categories.insert(id.to_string(), cat.to_string());
    }
    Ok(Labels { categories })
}

pub fn read_labels(path: &Path) -> Result<Labels, LabelError> {
    let text = std::fs::read_to_string(path).map_err(|source| LabelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_labels(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_gates() {
        let l = parse_labels("# c\ndice\tgambling\n\ntoken\tdefi\nplay\tGame\r\n").unwrap();
        assert!(l.is_gambling("dice"));
        assert!(l.is_gambling("play"));
        assert!(!l.is_gambling("token"));
        assert!(!l.is_gambling("unknown"));
        assert_eq!(l.gambling_accounts().collect::<Vec<_>>(), ["dice", "play"]);
    }

    #[test]
    fn rejects_missing_tab() {
        assert!(matches!(
            parse_labels("dice gambling"),
            Err(LabelError::Malformed { line: 1 })
        ));
    }
}
