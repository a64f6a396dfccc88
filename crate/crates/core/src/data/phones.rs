use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::data::fields;
use crate::error::{Diagnostic, Error, Result};

/// Ordered phone inventory; a symbol's position is its canonical index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneSet {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl PhoneSet {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("bad phone symbol {s:?} at index {i}")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate phone symbol {s:?}")));
            }
        }
        Ok(Self { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Parses a phone set file: one symbol per line, line number = index.
    pub fn parse_str(text: &str, file: &Path) -> Result<Self> {
        let mut diags = Vec::new();
        let mut symbols = Vec::new();
        let mut seen = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [sym] => {
                    if let Some(prev) = seen.insert(sym.to_string(), line_no) {
                        diags.push(Diagnostic::at_line(
                            file,
                            line_no,
                            format!("duplicate phone {sym:?} (first on line {prev})"),
                        ));
                    }
                    symbols.push(sym.to_string());
                }
                [] => diags.push(Diagnostic::at_line(file, line_no, "empty phone symbol")),
                _ => diags.push(Diagnostic::at_line(
                    file,
                    line_no,
                    format!("expected one symbol, found {}", parts.len()),
                )),
            }
        }
        if !diags.is_empty() {
            return Err(Error::Invalid(diags));
        }
        Self::new(symbols)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.symbols {
            out.push_str(s);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Total map from senone index to phone index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SenonePhoneMap {
    phone_of: Vec<usize>,
}

impl SenonePhoneMap {
    pub fn new(phone_of: Vec<usize>, phones: &PhoneSet) -> Result<Self> {
        if let Some((s, &p)) = phone_of.iter().enumerate().find(|(_, &p)| p >= phones.len()) {
            return Err(Error::InvalidArgument(format!(
                "senone {s} maps to phone index {p}, phone set has {}",
                phones.len()
            )));
        }
        Ok(Self { phone_of })
    }

    /// One senone per phone, in phone order.
    pub fn identity(phones: &PhoneSet) -> Self {
        Self {
            phone_of: (0..phones.len()).collect(),
        }
    }

    pub fn n_senones(&self) -> usize {
        self.phone_of.len()
    }

    pub fn phone_of(&self, senone: usize) -> usize {
        self.phone_of[senone]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.phone_of
    }

    /// Parses `senone_index phone` lines; the indices must cover `[0, S)` exactly once.
    pub fn parse_str(text: &str, phones: &PhoneSet, file: &Path) -> Result<Self> {
        let mut diags = Vec::new();
        let mut entries: Vec<(usize, usize, usize)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let parts = fields(line);
            match parts.as_slice() {
                [] => continue,
                [idx, sym] => {
                    let Ok(idx) = idx.parse::<usize>() else {
                        diags.push(Diagnostic::at_line(file, line_no, format!("bad senone index {idx:?}")));
                        continue;
                    };
                    let Some(p) = phones.index_of(sym) else {
                        diags.push(Diagnostic::at_line(file, line_no, format!("unknown phone {sym:?}")));
                        continue;
                    };
                    entries.push((idx, p, line_no));
                }
                _ => diags.push(Diagnostic::at_line(
                    file,
                    line_no,
                    "expected `senone_index phone`",
                )),
            }
        }
        let n = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
        let mut phone_of: Vec<Option<(usize, usize)>> = vec![None; n];
        for (idx, p, line_no) in entries {
            if let Some((_, prev)) = phone_of[idx] {
                diags.push(Diagnostic::at_line(
                    file,
                    line_no,
                    format!("senone {idx} already mapped on line {prev}"),
                ));
            } else {
                phone_of[idx] = Some((p, line_no));
            }
        }
        for (s, e) in phone_of.iter().enumerate() {
            if e.is_none() {
                diags.push(Diagnostic::new(file, None, format!("senone {s} is not mapped (map must be total)")));
            }
        }
        if !diags.is_empty() {
            return Err(Error::Invalid(diags));
        }
        Ok(Self {
            phone_of: phone_of.into_iter().map(|e| e.unwrap().0).collect(),
        })
    }

    pub fn read(path: &Path, phones: &PhoneSet) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, phones, path)
    }

    pub fn to_text(&self, phones: &PhoneSet) -> String {
        let mut out = String::new();
        for (s, &p) in self.phone_of.iter().enumerate() {
            out.push_str(&format!("{s} {}\n", phones.symbol(p).unwrap_or("?")));
        }
        out
    }

    pub fn write(&self, path: &Path, phones: &PhoneSet) -> Result<()> {
        fs::write(path, self.to_text(phones)).map_err(|e| Error::io(path, e))
    }
}
