use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use convcal::{Error, LogitRecord, RecordReader, TemperatureGrid};

pub fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufReader::new(io::stdin().lock())));
    }
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(Box::new(BufReader::new(file)))
}

pub fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            Box::new(BufWriter::new(file))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Iterates records, tagging errors with the file name.
pub fn records(path: &Path, strict: bool) -> Result<impl Iterator<Item = Result<LogitRecord>>> {
    let name = path.display().to_string();
    let reader = RecordReader::new(open_input(path)?, strict);
    Ok(reader.map(move |r| r.with_context(|| name.clone())))
}

pub fn read_all(path: &Path, strict: bool) -> Result<Vec<LogitRecord>> {
    records(path, strict)?.collect()
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = open_output(Some(path))?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Parses `lo:hi:step`.
pub fn parse_range(text: &str) -> Result<TemperatureGrid, Error> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::Config(format!("expected lo:hi:step, got `{text}`"));
    let [lo, hi, step] = parts.as_slice() else {
        return Err(bad());
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    Ok(TemperatureGrid {
        lo: num(lo)?,
        hi: num(hi)?,
        step: num(step)?,
    })
}
