use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gem::TraceRow;

const TRACE_HEADER: &str = "iteration,objective,max_delta_alpha";

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.iteration, r.objective, r.max_delta_alpha);
    }
    out
}

pub fn trace_from_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(TRACE_HEADER) {
        return Err(Error::Format("trace CSV header missing".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Format(format!("trace CSV line {}: {line:?}", i + 2));
            let mut f = line.split(',');
            let row = TraceRow {
                iteration: f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?,
                objective: f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?,
                max_delta_alpha: f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?,
            };
            if f.next().is_some() {
                return Err(bad());
            }
            Ok(row)
        })
        .collect()
}

pub fn write_trace(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    fs::write(path, trace_to_csv(rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            TraceRow { iteration: 0, objective: -12.5, max_delta_alpha: f64::INFINITY },
            TraceRow { iteration: 1, objective: -13.000000000000002, max_delta_alpha: 0.1 + 0.2 },
        ];
        let text = trace_to_csv(&rows);
        assert!(text.starts_with("iteration,objective,max_delta_alpha\n"));
        let back = trace_from_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(&rows) {
            assert_eq!(a.iteration, b.iteration);
            assert_eq!(a.objective.to_bits(), b.objective.to_bits());
            assert_eq!(a.max_delta_alpha.to_bits(), b.max_delta_alpha.to_bits());
        }
    }

    #[test]
    fn malformed_lines_are_format_errors() {
        assert!(matches!(trace_from_csv("a,b\n"), Err(Error::Format(_))));
        assert!(matches!(trace_from_csv("iteration,objective,max_delta_alpha\n1,x,2\n"), Err(Error::Format(_))));
    }
}
