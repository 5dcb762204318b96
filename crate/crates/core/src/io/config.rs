use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// `key = value` lines under optional `[section]` headers, flattened to
/// `section.key`. Blank lines and lines starting with `#` are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut section = String::new();
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| err("unterminated section header".into()))?.trim();
            if name.is_empty() || !name.chars().all(is_key_char) {
                return Err(err(format!("bad section name `{name}`")));
            }
            section = name.to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || !k.chars().all(is_key_char) {
            return Err(err(format!("bad key `{k}`")));
        }
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        if out.iter().any(|(seen, _)| *seen == key) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        out.push((key, v.to_string()));
    }
    Ok(out)
}

fn is_key_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

/// Render `section.key` pairs in the parser's format, grouped by section in first-seen order.
pub fn render_config(pairs: &[(String, String)]) -> String {
    let mut sections: Vec<(&str, Vec<(&str, &str)>)> = Vec::new();
    for (key, value) in pairs {
        let (section, k) = key.rsplit_once('.').unwrap_or(("", key));
        match sections.iter_mut().find(|(s, _)| *s == section) {
            Some((_, v)) => v.push((k, value)),
            None => sections.push((section, vec![(k, value)])),
        }
    }
    let mut out = String::new();
    for (section, entries) in sections {
        if !section.is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("[{section}]\n"));
        }
        for (k, v) in entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
    }
    out
}

/// Settings consumed key by key; leftover keys are an error.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new(pairs: Vec<(String, String)>) -> Self {
        Settings {
            values: pairs.into_iter().collect(),
        }
    }

    /// Replace or add `key=value` entries; later entries win.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(())
    }

    /// Parse and consume `key` into `slot` when present.
    pub fn take<T>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = self.values.remove(key) {
            *slot = v
                .parse()
                .map_err(|e| Error::Config(format!("{key} = {v}: {e}")))?;
        }
        Ok(())
    }

    /// Comma-separated list variant of [`Settings::take`].
    pub fn take_list<T>(&mut self, key: &str, slot: &mut Vec<T>) -> Result<()>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = self.values.remove(key) {
            *slot = v
                .split(',')
                .map(|s| s.trim().parse().map_err(|e| Error::Config(format!("{key} = {v}: {e}"))))
                .collect::<Result<_>>()?;
        }
        Ok(())
    }

    /// Fails on any key never consumed.
    pub fn finish(self) -> Result<()> {
        match self.values.keys().next() {
            None => Ok(()),
            Some(k) => Err(Error::Config(format!("unknown key `{k}`"))),
        }
    }
}
