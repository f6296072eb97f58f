//! CSV and JSONL trace files.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::metrics::TraceRow;

pub const CSV_HEADER: &str = "k,stationarity,consensus_err,grad_err,hv_err,inner_err,ave_var_err,var_err,lyapunov,hessian_calls,grad_calls,wall_time_ms";

pub const COLUMNS: [&str; 12] = [
    "k",
    "stationarity",
    "consensus_err",
    "grad_err",
    "hv_err",
    "inner_err",
    "ave_var_err",
    "var_err",
    "lyapunov",
    "hessian_calls",
    "grad_calls",
    "wall_time_ms",
];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

pub fn csv_line(r: &TraceRow) -> String {
    [
        r.k.to_string(),
        fmt_float(r.stationarity),
        fmt_float(r.consensus_err),
        fmt_float(r.grad_err),
        fmt_opt(r.hv_err),
        fmt_opt(r.inner_err),
        fmt_float(r.ave_var_err),
        fmt_float(r.var_err),
        fmt_opt(r.lyapunov),
        r.hessian_calls.to_string(),
        r.grad_calls.to_string(),
        fmt_float(r.wall_time_ms),
    ]
    .join(",")
}

pub fn to_csv_string(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&csv_line(r));
        out.push('\n');
    }
    out
}

fn num(v: Option<f64>) -> Value {
    v.and_then(serde_json::Number::from_f64)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

pub fn jsonl_line(r: &TraceRow) -> String {
    let mut m = Map::new();
    m.insert("k".into(), Value::from(r.k));
    m.insert("stationarity".into(), num(Some(r.stationarity)));
    m.insert("consensus_err".into(), num(Some(r.consensus_err)));
    m.insert("grad_err".into(), num(Some(r.grad_err)));
    m.insert("hv_err".into(), num(r.hv_err));
    m.insert("inner_err".into(), num(r.inner_err));
    m.insert("ave_var_err".into(), num(Some(r.ave_var_err)));
    m.insert("var_err".into(), num(Some(r.var_err)));
    m.insert("lyapunov".into(), num(r.lyapunov));
    m.insert("hessian_calls".into(), Value::from(r.hessian_calls));
    m.insert("grad_calls".into(), Value::from(r.grad_calls));
    m.insert("wall_time_ms".into(), num(Some(r.wall_time_ms)));
    Value::Object(m).to_string()
}

pub fn to_jsonl_string(rows: &[TraceRow]) -> String {
    rows.iter().map(|r| jsonl_line(r) + "\n").collect()
}

fn nonempty(rows: &[TraceRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidParams("trace is empty".into()));
    }
    Ok(())
}

pub fn emit_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    nonempty(rows)?;
    fs::write(path, to_csv_string(rows)).map_err(|e| Error::io(path, e))
}

pub fn emit_jsonl(rows: &[TraceRow], path: &Path) -> Result<()> {
    nonempty(rows)?;
    fs::write(path, to_jsonl_string(rows)).map_err(|e| Error::io(path, e))
}

/// Header and rows of any comma-separated numeric table; empty fields are
/// `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let idx = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::ColumnMissing(name.to_string()))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }
}

pub fn parse_table(text: &str) -> Result<Table> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let header: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected {} fields, got {}", header.len(), fields.len()),
            });
        }
        let row = fields
            .iter()
            .map(|f| {
                let f = f.trim();
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                        line: idx + 1,
                        msg: format!("'{f}' is not a number"),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Parses a trace CSV written by [`emit_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<TraceRow>> {
    let first = text.lines().next().unwrap_or("");
    if first != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: "unexpected trace header".into(),
        });
    }
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let err = |msg: String| Error::Parse { line: idx + 1, msg };
        if f.len() != COLUMNS.len() {
            return Err(err(format!("expected {} fields, got {}", COLUMNS.len(), f.len())));
        }
        let float = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| err(format!("{}: '{}' is not a number", COLUMNS[i], f[i])))
        };
        let opt = |i: usize| -> Result<Option<f64>> {
            if f[i].is_empty() {
                Ok(None)
            } else {
                float(i).map(Some)
            }
        };
        let int = |i: usize| -> Result<u64> {
            f[i].parse()
                .map_err(|_| err(format!("{}: '{}' is not an integer", COLUMNS[i], f[i])))
        };
        out.push(TraceRow {
            k: int(0)? as usize,
            stationarity: float(1)?,
            consensus_err: float(2)?,
            grad_err: float(3)?,
            hv_err: opt(4)?,
            inner_err: opt(5)?,
            ave_var_err: float(6)?,
            var_err: float(7)?,
            lyapunov: opt(8)?,
            hessian_calls: int(9)?,
            grad_calls: int(10)?,
            wall_time_ms: float(11)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize) -> TraceRow {
        TraceRow {
            k,
            stationarity: 0.1 + k as f64,
            consensus_err: 1e-300,
            grad_err: 0.0,
            hv_err: Some(1.0 / 3.0),
            inner_err: None,
            ave_var_err: 2.5e10,
            var_err: std::f64::consts::PI,
            lyapunov: None,
            hessian_calls: 8 * k as u64,
            grad_calls: 24 * k as u64,
            wall_time_ms: 0.125,
        }
    }

    #[test]
    fn header_matches_columns() {
        assert_eq!(CSV_HEADER, COLUMNS.join(","));
    }

    #[test]
    fn single_row_is_two_lines() {
        let s = to_csv_string(&[row(0)]);
        assert_eq!(s.lines().count(), 2);
        assert!(s.lines().nth(1).unwrap().contains(",,"));
    }

    #[test]
    fn csv_round_trip() {
        let rows: Vec<_> = (0..5).map(row).collect();
        let s = to_csv_string(&rows);
        let back = parse_csv(&s).unwrap();
        assert_eq!(back, rows);
        assert_eq!(to_csv_string(&back), s);
    }

    #[test]
    fn jsonl_keys_and_nulls() {
        let line = jsonl_line(&row(1));
        let v: Value = serde_json::from_str(&line).unwrap();
        let obj = v.as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().cloned().collect();
        keys.sort();
        let mut want: Vec<String> = COLUMNS.iter().map(|s| s.to_string()).collect();
        want.sort();
        assert_eq!(keys, want);
        assert!(obj["lyapunov"].is_null());
        assert_eq!(obj["var_err"].as_f64(), Some(std::f64::consts::PI));
    }

    #[test]
    fn empty_trace_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_csv(&[], &dir.path().join("a.csv")).is_err());
    }
}
