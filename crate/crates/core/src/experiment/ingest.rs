//! Weight-stack and decision-record files.
//!
//! A stack file is line-oriented text:
//!
//! ```text
//! obslab-stack 1
//! layers 2
//! shape 10 100
//! shape 100 110
//! init 1
//! layer 0
//! <10 lines of 100 whitespace-separated f64 values>
//! layer 1
//! <100 lines of 110 values>
//! init 0
//! <same shape as layer 0>
//! init 1
//! <same shape as layer 1>
//! ```
//!
//! Rows are written in row-major order, one matrix row per line, with values
//! printed at round-trip precision. `init 0` in the header means the file
//! has no init snapshot section. Blank lines and lines starting with `#` are
//! ignored.
//!
//! Decision records are JSON lines `{"state": [..], "logits": [..], "action": k}`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::measures::{DecisionRecord, WeightStack};

const MAGIC: &str = "obslab-stack";
const VERSION: u32 = 1;

struct Lines<'a> {
    path: String,
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &str, text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Lines { path: path.to_string(), inner: it.peekable(), last: 0 }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Ingest { path: self.path.clone(), line, message: message.into() }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((n, l)) => {
                self.last = n;
                Ok((n, l))
            }
            None => Err(self.err(self.last + 1, format!("unexpected end of file, expected {what}"))),
        }
    }

    fn keyword(&mut self, key: &str, args: usize) -> Result<(usize, Vec<usize>)> {
        let (n, l) = self.next(key)?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(n, format!("expected `{key}`, found `{l}`")));
        }
        let vals = parts
            .map(|p| p.parse::<usize>().map_err(|_| self.err(n, format!("`{p}` is not a non-negative integer"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != args {
            return Err(self.err(n, format!("`{key}` takes {args} integer argument(s), got {}", vals.len())));
        }
        Ok((n, vals))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Mat> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (n, l) = self.next(&format!("row {r}"))?;
            let before = data.len();
            for tok in l.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| self.err(n, format!("`{tok}` is not a number")))?;
                if !v.is_finite() {
                    return Err(self.err(n, format!("non-finite value `{tok}`")));
                }
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(self.err(n, format!("row {r} has {} values, expected {cols}", data.len() - before)));
            }
        }
        Mat::from_row_slice(rows, cols, &data)
    }
}

pub fn parse_stack(text: &str, path: &str) -> Result<WeightStack> {
    let mut lines = Lines::new(path, text);
    let (n, l) = lines.next("header")?;
    let mut head = l.split_whitespace();
    if head.next() != Some(MAGIC) {
        return Err(lines.err(n, format!("missing `{MAGIC}` header")));
    }
    match head.next().map(str::parse::<u32>) {
        Some(Ok(VERSION)) => {}
        _ => return Err(lines.err(n, format!("unsupported stack format version, expected {VERSION}"))),
    }
    let (n, count) = lines.keyword("layers", 1)?;
    let count = count[0];
    if count == 0 {
        return Err(lines.err(n, "stack must have at least one layer"));
    }
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, s) = lines.keyword("shape", 2)?;
        if s[0] == 0 || s[1] == 0 {
            return Err(lines.err(n, "layer shapes must be positive"));
        }
        if let Some(&(_, prev_cols)) = shapes.last() {
            if prev_cols != s[0] {
                return Err(lines.err(n, format!("shape {}x{} does not follow a layer with {prev_cols} columns", s[0], s[1])));
            }
        }
        shapes.push((s[0], s[1]));
    }
    let (n, has_init) = lines.keyword("init", 1)?;
    if has_init[0] > 1 {
        return Err(lines.err(n, "init flag must be 0 or 1"));
    }
    let read_section = |lines: &mut Lines, key: &str| -> Result<Vec<Mat>> {
        let mut out = Vec::with_capacity(count);
        for (i, &(r, c)) in shapes.iter().enumerate() {
            let (n, idx) = lines.keyword(key, 1)?;
            if idx[0] != i {
                return Err(lines.err(n, format!("expected `{key} {i}`, found `{key} {}`", idx[0])));
            }
            out.push(lines.matrix(r, c)?);
        }
        Ok(out)
    };
    let layers = read_section(&mut lines, "layer")?;
    let init = if has_init[0] == 1 { Some(read_section(&mut lines, "init")?) } else { None };
    if let Some((n, l)) = lines.inner.next() {
        return Err(lines.err(n, format!("trailing content `{l}`")));
    }
    WeightStack::new(layers, init).map_err(|e| lines.err(1, e.to_string()))
}

pub fn read_stack(path: &Path) -> Result<WeightStack> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Ingest {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    parse_stack(&text, &path.display().to_string())
}

fn push_matrix(out: &mut String, m: &Mat) {
    for i in 0..m.rows() {
        let row: Vec<String> = (0..m.cols()).map(|j| format!("{:?}", m.get(i, j))).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

pub fn format_stack(stack: &WeightStack) -> String {
    let mut out = format!("{MAGIC} {VERSION}\nlayers {}\n", stack.depth());
    for l in stack.layers() {
        let _ = writeln!(out, "shape {} {}", l.rows(), l.cols());
    }
    let _ = writeln!(out, "init {}", stack.init().is_some() as u8);
    for (i, l) in stack.layers().iter().enumerate() {
        let _ = writeln!(out, "layer {i}");
        push_matrix(&mut out, l);
    }
    if let Some(init) = stack.init() {
        for (i, l) in init.iter().enumerate() {
            let _ = writeln!(out, "init {i}");
            push_matrix(&mut out, l);
        }
    }
    out
}

pub fn write_stack(stack: &WeightStack, path: &Path) -> Result<()> {
    std::fs::write(path, format_stack(stack)).map_err(|e| Error::io(path, e))
}

pub fn parse_decision_records(text: &str, path: &str) -> Result<Vec<DecisionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Ingest { path: path.to_string(), line: i + 1, message };
        let rec: DecisionRecord = serde_json::from_str(line).map_err(|e| err(format!("record {}: {e}", out.len())))?;
        rec.validate().map_err(|e| err(format!("record {}: {e}", out.len())))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_decision_records(path: &Path) -> Result<Vec<DecisionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Ingest {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    parse_decision_records(&text, &path.display().to_string())
}

pub fn format_decision_records(records: &[DecisionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::InvalidArgument(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_decision_records(records: &[DecisionRecord], path: &Path) -> Result<()> {
    std::fs::write(path, format_decision_records(records)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::{sample_gaussian, SeededRng};

    fn stack(with_init: bool) -> WeightStack {
        let mut rng = SeededRng::new(4);
        let layers = vec![sample_gaussian(&mut rng, 2, 3, 1.0).unwrap(), sample_gaussian(&mut rng, 3, 4, 1.0).unwrap()];
        let init = with_init.then(|| layers.iter().map(|l| l.scale(0.5)).collect());
        WeightStack::new(layers, init).unwrap()
    }

    fn line_of(err: Error) -> usize {
        match err {
            Error::Ingest { line, .. } => line,
            e => panic!("expected ingest error, got {e}"),
        }
    }

    #[test]
    fn stack_round_trip_is_exact() {
        for with_init in [false, true] {
            let s = stack(with_init);
            let back = parse_stack(&format_stack(&s), "mem").unwrap();
            assert_eq!(back.layers(), s.layers());
            assert_eq!(back.init(), s.init());
        }
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = "# weights\nobslab-stack 1\n\nlayers 1\nshape 1 2\ninit 0\nlayer 0\n1.5 -2\n";
        let s = parse_stack(text, "mem").unwrap();
        assert_eq!(s.layers()[0], Mat::from_row_slice(1, 2, &[1.5, -2.0]).unwrap());
    }

    #[test]
    fn malformed_stacks_report_lines() {
        let good = format_stack(&stack(false));
        let mut lines: Vec<&str> = good.lines().collect();
        lines[6] = "1.0 2.0";
        assert_eq!(line_of(parse_stack(&lines.join("\n"), "mem").unwrap_err()), 7);
        assert_eq!(line_of(parse_stack("obslab-stack 2\n", "mem").unwrap_err()), 1);
        assert_eq!(line_of(parse_stack("obslab-stack 1\nlayers 2\nshape 2 3\nshape 4 4\n", "mem").unwrap_err()), 4);
        let truncated = good.lines().take(8).collect::<Vec<_>>().join("\n");
        assert!(parse_stack(&truncated, "mem").is_err());
        let bad_value = good.replacen("layer 0\n", "layer 0\nnan ", 1);
        assert!(parse_stack(&bad_value, "mem").is_err());
        assert!(parse_stack(&format!("{good}extra\n"), "mem").is_err());
    }

    #[test]
    fn decision_records_round_trip_and_errors() {
        let recs = vec![
            DecisionRecord { state: vec![1.0, 0.0], logits: vec![0.2, 0.9], action: 1 },
            DecisionRecord { state: vec![0.0, 1.0], logits: vec![0.5, 0.1], action: 0 },
        ];
        let text = format_decision_records(&recs).unwrap();
        assert_eq!(parse_decision_records(&text, "mem").unwrap(), recs);
        let bad = format!("{text}{{\"state\": [1.0], \"logits\": [1.0, 2.0], \"action\": 5}}\n");
        assert_eq!(line_of(parse_decision_records(&bad, "mem").unwrap_err()), 3);
        let junk = format!("not json\n{text}");
        assert_eq!(line_of(parse_decision_records(&junk, "mem").unwrap_err()), 1);
        let extra = "{\"state\": [1.0], \"logits\": [1.0, 2.0], \"action\": 0, \"x\": 1}\n";
        assert!(parse_decision_records(extra, "mem").is_err());
    }
}
