//! Trace CSV files.
//!
//! Floats are written in scientific notation with 17 significant digits so a
//! trace read back is bit-identical; an empty `ratio` field means the ratio
//! was undefined.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::optimizer::{Sample, TraceRow};

pub const TRACE_HEADER: [&str; 9] = [
    "iter",
    "train_loss",
    "test_loss",
    "train_err",
    "test_err",
    "excess_err",
    "excess_risk",
    "ratio",
    "norm",
];

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            fmt_f64(r.train_loss),
            fmt_f64(r.test_loss),
            fmt_f64(r.train_err),
            fmt_f64(r.test_err),
            fmt_f64(r.excess_err),
            fmt_f64(r.excess_risk),
            r.ratio.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.norm),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_file(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_trace(std::io::BufWriter::new(f), rows)
}

fn parse_f64(field: &str, name: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::Config(format!("bad {name} value {field:?}")))
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_HEADER {
        return Err(Error::Config(format!("unexpected trace header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| parse_f64(&rec[i], TRACE_HEADER[i]);
        rows.push(TraceRow {
            iter: rec[0]
                .parse()
                .map_err(|_| Error::Config(format!("bad iter value {:?}", &rec[0])))?,
            train_loss: f(1)?,
            test_loss: f(2)?,
            train_err: f(3)?,
            test_err: f(4)?,
            excess_err: f(5)?,
            excess_risk: f(6)?,
            ratio: if rec[7].is_empty() { None } else { Some(f(7)?) },
            norm: f(8)?,
        });
    }
    Ok(rows)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRow>> {
    read_trace(std::fs::File::open(path)?)
}

/// Dataset CSV with columns `x1, ..., xd, y`.
pub fn write_samples<W: Write>(out: W, samples: &[Sample]) -> Result<()> {
    let mut w = writer(out);
    let d = samples.first().map_or(2, |s| s.x.len());
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for s in samples {
        let mut rec: Vec<String> = s.x.iter().map(|v| fmt_f64(*v)).collect();
        rec.push(format!("{}", s.y as i64));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples<R: Read>(input: R) -> Result<Vec<Sample>> {
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    let header = r.headers()?.clone();
    if header.len() < 2 || &header[header.len() - 1] != "y" {
        return Err(Error::Config("dataset CSV must end with a y column".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let n = rec.len();
        let x = (0..n - 1)
            .map(|i| parse_f64(&rec[i], &header[i]))
            .collect::<Result<Vec<_>>>()?;
        let y = parse_f64(&rec[n - 1], "y")?;
        if y != 1.0 && y != -1.0 {
            return Err(Error::InvalidLabel(y));
        }
        out.push(Sample::new(x, y));
    }
    Ok(out)
}
