//! CSV input and output. Inputs may carry `#` comment lines.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use anyhow::{Context, Result};
use msarea_core::{PointPattern, STPoint, Window};

use crate::Invalid;

/// Affine rescaling `(x, y, t) -> (sx x, sy y, st t)` applied to inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rescale(pub [f64; 3]);

impl Rescale {
    pub fn apply(&self, p: STPoint) -> STPoint {
        STPoint::new(p.x * self.0[0], p.y * self.0[1], p.t * self.0[2])
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file))
}

/// Rows of a numeric CSV with exactly the given header, with their line numbers.
fn read_numeric(path: &Path, header: &[&str]) -> Result<Vec<(u64, Vec<f64>)>> {
    let mut rdr = reader(path)?;
    let found: Vec<String> =
        rdr.headers().map_err(|e| Invalid(format!("{}: {e}", path.display())))?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Invalid(format!(
            "{}: expected header `{}`, found `{}`",
            path.display(),
            header.join(","),
            found.join(",")
        ))
        .into());
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        let vals =
            rec.iter()
                .map(|f| {
                    f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                        Invalid(format!("{}: line {line}: `{f}` is not a finite number", path.display()))
                    })
                })
                .collect::<std::result::Result<Vec<f64>, Invalid>>()?;
        rows.push((line, vals));
    }
    Ok(rows)
}

/// Raw `x,y,t` rows with their line numbers.
pub fn read_points(path: &Path, rescale: Option<Rescale>) -> Result<Vec<(u64, STPoint)>> {
    Ok(read_numeric(path, &["x", "y", "t"])?
        .into_iter()
        .map(|(line, v)| {
            let p = STPoint::new(v[0], v[1], v[2]);
            (line, rescale.map_or(p, |r| r.apply(p)))
        })
        .collect())
}

/// A validated pattern; out-of-window and duplicate rows are reported by line.
pub fn read_pattern(path: &Path, window: &Window, rescale: Option<Rescale>) -> Result<PointPattern> {
    let rows = read_points(path, rescale)?;
    let outside: Vec<String> = rows.iter().filter(|(_, p)| !window.contains(p)).map(|(l, _)| l.to_string()).collect();
    if !outside.is_empty() {
        return Err(
            Invalid(format!("{}: points outside the window at lines {}", path.display(), outside.join(", "))).into()
        );
    }
    let lines: Vec<u64> = rows.iter().map(|r| r.0).collect();
    PointPattern::new(rows.into_iter().map(|r| r.1).collect(), window).map_err(|e| match e {
        msarea_core::Error::DuplicatePoint { first, second } => {
            Invalid(format!("{}: lines {} and {} hold the same point", path.display(), lines[first], lines[second]))
                .into()
        }
        other => other.into(),
    })
}

/// `x,y` sample locations.
pub fn read_xy(path: &Path, rescale: Option<Rescale>) -> Result<Vec<[f64; 2]>> {
    Ok(read_numeric(path, &["x", "y"])?
        .into_iter()
        .map(|(_, v)| match rescale {
            Some(r) => [v[0] * r.0[0], v[1] * r.0[1]],
            None => [v[0], v[1]],
        })
        .collect())
}

/// `t,count` series.
pub fn read_counts(path: &Path) -> Result<Vec<(f64, f64)>> {
    Ok(read_numeric(path, &["t", "count"])?.into_iter().map(|(_, v)| (v[0], v[1])).collect())
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn write_table<I>(path: Option<&Path>, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_points(path: Option<&Path>, points: &[STPoint]) -> Result<()> {
    let header = ["x", "y", "t"].map(String::from);
    write_table(path, &header, points.iter().map(|p| vec![p.x.to_string(), p.y.to_string(), p.t.to_string()]))
}

pub fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let mut text = String::new();
    File::open(path).with_context(|| format!("opening {}", path.display()))?.read_to_string(&mut text)?;
    serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())).into())
}
