//! Shared pieces of the model file formats: a line-oriented text header
//! followed by little-endian `f64` arrays.

use std::iter::Peekable;

use crate::corpus::{Category, LabelSet};
use crate::error::{Error, Result};

/// Escapes tabs, newlines and backslashes so a value fits on one header line.
pub(crate) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub(crate) fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next()? {
            '\\' => '\\',
            't' => '\t',
            'n' => '\n',
            'r' => '\r',
            _ => return None,
        });
    }
    Some(out)
}

pub(crate) fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Splits a file into its text header (up to and including the `end` line)
/// and the binary payload.
pub(crate) fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    const END: &[u8] = b"\nend\n";
    let pos = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::checkpoint("header", "missing `end` line"))?;
    let header = std::str::from_utf8(&bytes[..pos + 1]).map_err(|_| Error::checkpoint("header", "not UTF-8"))?;
    Ok((header, &bytes[pos + END.len()..]))
}

/// Reads `f64`s from a byte payload in order.
pub(crate) struct PayloadReader<'a> {
    bytes: &'a [u8],
}

impl<'a> PayloadReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes }
    }

    pub(crate) fn take(&mut self, n: usize, section: &str) -> Result<Vec<f64>> {
        let need = n
            .checked_mul(8)
            .ok_or_else(|| Error::checkpoint(section, "array too large"))?;
        if self.bytes.len() < need {
            return Err(Error::checkpoint(
                section,
                format!("truncated: need {need} bytes, {} remain", self.bytes.len()),
            ));
        }
        let (head, rest) = self.bytes.split_at(need);
        self.bytes = rest;
        let values: Vec<f64> = head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::checkpoint(section, "non-finite value"));
        }
        Ok(values)
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(Error::checkpoint("arrays", format!("{} trailing bytes", self.bytes.len())))
        }
    }
}

/// Parses a header value, naming the section on failure.
pub(crate) fn parse_value<T: std::str::FromStr>(value: &str, key: &str, section: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::checkpoint(section, format!("bad value `{value}` for `{key}`")))
}

/// `label<TAB>name<TAB>CATEGORY<TAB>0|1` lines.
pub(crate) fn label_lines(ls: &LabelSet) -> String {
    (0..ls.len())
        .map(|i| format!("label\t{}\t{}\t{}\n", escape(ls.name(i)), ls.category(i), u8::from(ls.is_hipaa(i))))
        .collect()
}

pub(crate) fn read_label_lines<'a>(lines: &mut Peekable<impl Iterator<Item = &'a str>>) -> Result<LabelSet> {
    let mut entries = Vec::new();
    while let Some(line) = lines.next_if(|l| l.starts_with("label\t")) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::checkpoint("labels", format!("malformed line `{line}`"));
        if f.len() != 4 {
            return Err(bad());
        }
        let name = unescape(f[1]).ok_or_else(bad)?;
        let cat: Category = f[2].parse().map_err(|_| bad())?;
        let hipaa = match f[3] {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        entries.push((name, cat, hipaa));
    }
    LabelSet::new(entries).map_err(|e| Error::checkpoint("labels", e.to_string()))
}

/// Reads a `section<TAB>N` count line followed by `N` `key<TAB>value` lines.
pub(crate) fn read_entries<'a>(
    lines: &mut Peekable<impl Iterator<Item = &'a str>>,
    section: &str,
    key: &str,
) -> Result<Vec<String>> {
    let count_line = lines
        .next()
        .ok_or_else(|| Error::checkpoint(section, "missing count"))?;
    let count: usize = match count_line.split_once('\t') {
        Some((k, v)) if k == section => parse_value(v, k, section)?,
        _ => return Err(Error::checkpoint(section, format!("expected `{section}` count, found `{count_line}`"))),
    };
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::checkpoint(section, "fewer entries than declared"))?;
        let value = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('\t'))
            .and_then(unescape)
            .ok_or_else(|| Error::checkpoint(section, format!("malformed line `{line}`")))?;
        out.push(value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escape_round_trip() {
        for s in ["", "plain", "a\tb", "back\\slash", "new\nline\r", "\\t literal"] {
            assert_eq!(unescape(&escape(s)).as_deref(), Some(s));
            assert!(!escape(s).contains(['\t', '\n']));
        }
        assert_eq!(unescape("bad\\q"), None);
        assert_eq!(unescape("dangling\\"), None);
    }

    #[test]
    fn payload_round_trip_and_truncation() {
        let mut bytes = Vec::new();
        push_f64s(&mut bytes, &[1.5, -0.0, f64::MIN_POSITIVE]);
        let mut r = PayloadReader::new(&bytes);
        assert_eq!(r.take(2, "a").unwrap(), vec![1.5, -0.0]);
        assert!(matches!(r.take(2, "b"), Err(Error::Checkpoint { section, .. }) if section == "b"));
        let mut r = PayloadReader::new(&bytes);
        r.take(1, "a").unwrap();
        assert!(r.finish().is_err());
    }
}
