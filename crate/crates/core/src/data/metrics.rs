use std::fmt::Write as _;
use std::path::Path;

use super::DataError;
use crate::training::MetricsRow;

pub const METRICS_HEADER: &str =
    "epoch,step,train_loss,train_acc,val_loss,val_acc,fisher_refreshes,fisher_failures,wall_time_s";

fn real(out: &mut String, v: f64) {
    write!(out, ",{v:.16e}").expect("writing to a String");
}

/// Writes the rows as CSV. Reals carry 17 significant digits, so the file
/// parses back to the identical values.
pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<(), DataError> {
    let mut out = String::with_capacity(METRICS_HEADER.len() + 1 + rows.len() * 160);
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        write!(out, "{},{}", r.epoch, r.step).expect("writing to a String");
        real(&mut out, r.train_loss);
        real(&mut out, r.train_acc);
        real(&mut out, r.val_loss);
        real(&mut out, r.val_acc);
        write!(out, ",{},{}", r.fisher_refreshes, r.fisher_failures).expect("writing to a String");
        real(&mut out, r.wall_time_s);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| DataError::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(DataError::Csv {
            line: 1,
            message: "missing or unexpected header".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, line)| parse_row(line).map_err(|message| DataError::Csv { line: i + 2, message }))
        .collect()
}

fn parse_row(line: &str) -> Result<MetricsRow, String> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 9 {
        return Err(format!("expected 9 fields, got {}", f.len()));
    }
    fn num<N: std::str::FromStr>(s: &str, name: &str) -> Result<N, String> {
        s.parse().map_err(|_| format!("bad {name}: {s:?}"))
    }
    Ok(MetricsRow {
        epoch: num(f[0], "epoch")?,
        step: num(f[1], "step")?,
        train_loss: num(f[2], "train_loss")?,
        train_acc: num(f[3], "train_acc")?,
        val_loss: num(f[4], "val_loss")?,
        val_acc: num(f[5], "val_acc")?,
        fisher_refreshes: num(f[6], "fisher_refreshes")?,
        fisher_failures: num(f[7], "fisher_failures")?,
        wall_time_s: num(f[8], "wall_time_s")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize) -> MetricsRow {
        let x = k as f64;
        MetricsRow {
            epoch: k,
            step: 10 * k as u64,
            train_loss: 1.0 / (x + 3.0),
            train_acc: (x / 7.0).fract(),
            val_loss: std::f64::consts::PI * x,
            val_acc: 0.1 + 1e-17 * x,
            fisher_refreshes: 3 * k as u64,
            fisher_failures: 0,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn empty_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn one_row_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&[row(1)], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 2);
        assert_eq!(read_metrics(&p).unwrap(), vec![row(1)]);
    }

    #[test]
    fn unwritable_path() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_metrics(&[], &dir.path().join("no/such/dir.csv")).is_err());
    }
}
