use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub label: String,
    /// Pre-segmented text, tokens separated by spaces.
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct labels in lexicographic order.
    pub fn labels(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.text.as_str())
    }

    /// Parses `label<TAB>text` lines. CR before LF is stripped and blank
    /// lines are skipped; duplicates are kept.
    pub fn parse_tsv(input: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, raw) in input.split('\n').enumerate() {
            let line_no = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() {
                continue;
            }
            let (label, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(line_no, "missing TAB between label and text"))?;
            let label = label.trim();
            let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
            if label.is_empty() {
                return Err(Error::parse(line_no, "empty label"));
            }
            if text.is_empty() {
                return Err(Error::parse(line_no, "empty text"));
            }
            records.push(Record {
                label: label.to_string(),
                text,
            });
        }
        Ok(Self { records })
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            writeln!(out, "{}\t{}", r.label, r.text)?;
        }
        Ok(())
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path.as_ref())?;
    Dataset::parse_tsv(&text)
}
