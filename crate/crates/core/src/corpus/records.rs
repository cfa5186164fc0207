use std::io::BufRead;

use serde_json::Value;
use thiserror::Error;

use super::{CorpusError, RawSketch};

/// Field names of the newline-delimited drawing records.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordFormat {
    pub drawing_field: String,
    pub category_field: String,
}

impl Default for RecordFormat {
    fn default() -> Self {
        RecordFormat {
            drawing_field: "drawing".into(),
            category_field: "word".into(),
        }
    }
}

/// A rejected record; `line` is 1-based.
#[derive(Debug, Error)]
#[error("line {line}: {reason}")]
pub struct RecordError {
    pub line: usize,
    pub reason: String,
}

/// Parses one drawing per line. Blank lines are skipped; every other line
/// yields either a sketch or an error carrying its line number, in input order.
pub fn parse_sketch_records<R: BufRead>(
    reader: R,
    format: &RecordFormat,
) -> Vec<Result<RawSketch, RecordError>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                out.push(Err(RecordError {
                    line: line_no,
                    reason: e.to_string(),
                }));
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, format).map_err(|reason| RecordError {
            line: line_no,
            reason,
        }));
    }
    out
}

fn parse_line(line: &str, format: &RecordFormat) -> Result<RawSketch, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let category = value
        .get(&format.category_field)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("missing string field `{}`", format.category_field))?;
    let drawing = value
        .get(&format.drawing_field)
        .and_then(Value::as_array)
        .ok_or_else(|| format!("missing array field `{}`", format.drawing_field))?;

    let mut strokes = Vec::with_capacity(drawing.len());
    for (s, stroke) in drawing.iter().enumerate() {
        let arrays = stroke
            .as_array()
            .filter(|a| a.len() >= 2)
            .ok_or_else(|| format!("stroke {s}: expected [x-list, y-list]"))?;
        // raw exports carry a third timing array, which is ignored
        let xs = coords(&arrays[0]).map_err(|e| format!("stroke {s} x: {e}"))?;
        let ys = coords(&arrays[1]).map_err(|e| format!("stroke {s} y: {e}"))?;
        if xs.len() != ys.len() {
            return Err(format!(
                "stroke {s}: {} x values but {} y values",
                xs.len(),
                ys.len()
            ));
        }
        strokes.push(xs.into_iter().zip(ys).collect());
    }
    RawSketch::new(strokes, category).map_err(|e: CorpusError| e.to_string())
}

fn coords(v: &Value) -> Result<Vec<i32>, String> {
    let arr = v.as_array().ok_or("not an array")?;
    arr.iter()
        .map(|c| {
            let f = c.as_f64().ok_or("non-numeric coordinate")?;
            if !f.is_finite() || f < 0.0 || f > i32::MAX as f64 {
                return Err("coordinate out of range");
            }
            Ok(f.round() as i32)
        })
        .collect::<Result<_, _>>()
        .map_err(str::to_string)
}
