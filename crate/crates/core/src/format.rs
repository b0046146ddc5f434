//! Plain-text grid formats.
//!
//! ```text
//! SOFT H W K        followed by H*W lines of K probabilities (row-major)
//! HARD H W K        followed by H lines of W integer labels
//! SP H W S          followed by H lines of W superpixel ids
//! ```
//!
//! Numbers are written with Rust's shortest round-trip representation, so
//! writing and re-reading a grid is lossless. Parsers enforce the same
//! invariants as the in-memory constructors.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::seg::{GridShape, HardSegmentation, SoftSegmentation, SuperpixelMap};

pub(crate) struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    /// Next non-blank line with its 1-based line number.
    pub(crate) fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (idx, line) in self.inner.by_ref() {
            self.last = idx + 1;
            if !line.trim().is_empty() {
                return Ok((idx + 1, line));
            }
        }
        Err(parse_err(self.last + 1, "unexpected end of input"))
    }

    pub(crate) fn expect_end(&mut self) -> Result<()> {
        for (idx, line) in self.inner.by_ref() {
            if !line.trim().is_empty() {
                return Err(parse_err(idx + 1, "trailing content"));
            }
        }
        Ok(())
    }
}

pub(crate) fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub(crate) fn parse_fields<T: FromStr>(line_no: usize, line: &str, expected: usize) -> Result<Vec<T>> {
    let fields: Vec<T> = line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<T>()
                .map_err(|_| parse_err(line_no, format!("cannot parse {tok:?}")))
        })
        .collect::<Result<_>>()?;
    if fields.len() != expected {
        return Err(parse_err(
            line_no,
            format!("expected {expected} fields, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

pub(crate) fn parse_header(lines: &mut Lines<'_>, tag: &str) -> Result<[usize; 3]> {
    let (no, line) = lines.next_line()?;
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(tag) {
        return Err(parse_err(no, format!("expected header starting with {tag}")));
    }
    let rest: Vec<&str> = tokens.collect();
    let dims = parse_fields::<usize>(no, &rest.join(" "), 3)?;
    Ok([dims[0], dims[1], dims[2]])
}

fn located(line: usize, err: Error) -> Error {
    match err {
        Error::InvalidInput(msg) => parse_err(line, msg),
        other => other,
    }
}

pub fn parse_soft(text: &str) -> Result<SoftSegmentation> {
    let mut lines = Lines::new(text);
    let [h, w, k] = parse_header(&mut lines, "SOFT")?;
    let shape = GridShape::new(h, w, k).map_err(|e| located(1, e))?;
    let mut probs = Vec::with_capacity(shape.len());
    for _ in 0..shape.pixels() {
        let (no, line) = lines.next_line()?;
        probs.extend(parse_fields::<f64>(no, line, k)?);
    }
    lines.expect_end()?;
    SoftSegmentation::new(shape, probs).map_err(|e| located(1, e))
}

pub fn write_soft(seg: &SoftSegmentation) -> String {
    let mut out = format!("SOFT {} {} {}\n", seg.height(), seg.width(), seg.classes());
    for row in seg.rows() {
        push_row(&mut out, row.iter());
    }
    out
}

pub fn parse_hard(text: &str) -> Result<HardSegmentation> {
    let mut lines = Lines::new(text);
    let [h, w, k] = parse_header(&mut lines, "HARD")?;
    let mut labels = Vec::with_capacity(h * w);
    for _ in 0..h {
        let (no, line) = lines.next_line()?;
        labels.extend(parse_fields::<u32>(no, line, w)?);
    }
    lines.expect_end()?;
    HardSegmentation::new(h, w, k, labels).map_err(|e| located(1, e))
}

pub fn write_hard(seg: &HardSegmentation) -> String {
    let mut out = format!("HARD {} {} {}\n", seg.height(), seg.width(), seg.classes());
    for row in seg.labels().chunks_exact(seg.width()) {
        push_row(&mut out, row.iter());
    }
    out
}

pub fn parse_superpixels(text: &str) -> Result<SuperpixelMap> {
    let mut lines = Lines::new(text);
    let [h, w, s] = parse_header(&mut lines, "SP")?;
    let mut ids = Vec::with_capacity(h * w);
    for _ in 0..h {
        let (no, line) = lines.next_line()?;
        ids.extend(parse_fields::<u32>(no, line, w)?);
    }
    lines.expect_end()?;
    let map = SuperpixelMap::new(h, w, ids).map_err(|e| located(1, e))?;
    if map.count() != s {
        return Err(parse_err(
            1,
            format!("header declares {s} superpixels, found {}", map.count()),
        ));
    }
    Ok(map)
}

pub fn write_superpixels(map: &SuperpixelMap) -> String {
    let mut out = format!("SP {} {} {}\n", map.height(), map.width(), map.count());
    for row in map.ids().chunks_exact(map.width()) {
        push_row(&mut out, row.iter());
    }
    out
}

fn push_row<T: std::fmt::Display>(out: &mut String, values: impl Iterator<Item = T>) {
    let row: Vec<String> = values.map(|v| v.to_string()).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hard_grid_parses() {
        let text = "HARD 2 3 4\n0 1 2\n3 3 0\n";
        let seg = parse_hard(text).unwrap();
        assert_eq!(seg.labels(), &[0, 1, 2, 3, 3, 0]);
        assert_eq!(write_hard(&seg), text);
    }

    #[test]
    fn parsers_reject_violated_invariants() {
        assert!(parse_hard("HARD 1 2 2\n0 2\n").is_err());
        assert!(parse_hard("HARD 1 2 2\n0\n").is_err());
        assert!(parse_soft("SOFT 1 1 2\n0.7 0.7\n").is_err());
        assert!(parse_soft("SOFT 1 1 2\n0.5 0.5\n0.5 0.5\n").is_err());
        assert!(parse_soft("HARD 1 1 2\n0\n").is_err());
        assert!(parse_superpixels("SP 1 3 3\n0 2 2\n").is_err());
        assert!(parse_superpixels("SP 1 3 3\n0 1 1\n").is_err());
        assert!(parse_superpixels("SP 1 3 2\n0 1 1\n").is_ok());
    }

    #[test]
    fn error_reports_line_number() {
        match parse_soft("SOFT 2 1 2\n0.5 0.5\n0.5 x\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn soft_round_trip_is_bit_exact(raw in prop::collection::vec(0.001f64..1.0, 2 * 3 * 4)) {
            let mut probs = raw.clone();
            for row in probs.chunks_exact_mut(4) {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= s);
            }
            let seg = SoftSegmentation::new(GridShape::new(2, 3, 4).unwrap(), probs).unwrap();
            let back = parse_soft(&write_soft(&seg)).unwrap();
            prop_assert_eq!(back, seg);
        }
    }
}
