//! Plain-text configuration: `[section]` headers followed by `key = value`
//! lines. `#` starts a comment. Keys before the first header belong to the
//! unnamed section `""`.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("[{}] {key}: cannot parse `{v}`", self.name))),
        }
    }
}

pub fn parse_sections(text: &str) -> Result<Vec<Section>> {
    let mut out: Vec<Section> = vec![Section::default()];
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", lineno + 1)))?;
            out.push(Section { name: name.trim().to_string(), entries: Vec::new() });
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        out.last_mut().unwrap().entries.push((k.trim().to_string(), v.trim().to_string()));
    }
    if out[0].entries.is_empty() {
        out.remove(0);
    }
    Ok(out)
}

pub fn read_sections(path: &Path) -> Result<Vec<Section>> {
    let text = std::fs::read_to_string(path)?;
    parse_sections(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
}
