use std::fmt::Write as _;
use std::path::Path;

use super::PointSet;
use crate::error::{Error, Result};
use crate::fmt_num;

/// On-disk point set encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    /// One point per line, whitespace- or comma-separated; `#` starts a comment line.
    Text,
    Csv,
    /// ASCII PLY; the vertex `x`, `y`, `z` properties are read in file order.
    PlyAscii,
}

impl PointFormat {
    /// Guesses the format from the file extension, defaulting to [`PointFormat::Text`].
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
            Some("csv") => PointFormat::Csv,
            Some("ply") => PointFormat::PlyAscii,
            _ => PointFormat::Text,
        }
    }
}

impl std::str::FromStr for PointFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" | "whitespace-text" => Ok(PointFormat::Text),
            "csv" => Ok(PointFormat::Csv),
            "ply" | "ply-ascii" => Ok(PointFormat::PlyAscii),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

pub fn load_point_set(path: &Path, format: PointFormat) -> Result<PointSet> {
    let text = std::fs::read_to_string(path)?;
    parse_point_set(&text, format)
}

pub fn parse_point_set(text: &str, format: PointFormat) -> Result<PointSet> {
    match format {
        PointFormat::Text => {
            parse_rows(text, |l| l.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect())
        }
        PointFormat::Csv => parse_rows(text, |l| l.split(',').map(str::trim).collect()),
        PointFormat::PlyAscii => parse_ply(text),
    }
}

fn parse_rows<'a, F>(text: &'a str, split: F) -> Result<PointSet>
where
    F: Fn(&'a str) -> Vec<&'a str>,
{
    let mut dim = None;
    let mut coords = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens = split(line);
        let expected = *dim.get_or_insert(tokens.len());
        if tokens.len() != expected {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {expected} columns, found {}", tokens.len()),
            });
        }
        for t in tokens {
            coords.push(parse_number(t, i + 1)?);
        }
    }
    let dim = dim.ok_or_else(|| Error::EmptyInput("no points in input".into()))?;
    PointSet::new(dim, coords)
}

fn parse_number(token: &str, line: usize) -> Result<f64> {
    token.parse::<f64>().map_err(|_| Error::Parse { line, message: format!("not a number: {token:?}") })
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

fn parse_ply(text: &str) -> Result<PointSet> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        None => return Err(Error::EmptyInput("empty PLY file".into())),
        Some((i, _)) => return Err(Error::Parse { line: i + 1, message: "missing 'ply' magic".into() }),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    loop {
        let (i, raw) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 0, message: "PLY header not terminated by end_header".into() })?;
        let mut tok = raw.split_whitespace();
        match tok.next() {
            Some("format") => {
                let kind = tok.next().unwrap_or("");
                if kind != "ascii" {
                    return Err(Error::UnsupportedFormat(format!("PLY format {kind}")));
                }
                saw_format = true;
            }
            Some("element") => {
                let name = tok.next().unwrap_or("").to_string();
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::Parse { line: i + 1, message: "bad element count".into() })?;
                elements.push(PlyElement { name, count, properties: Vec::new() });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Parse { line: i + 1, message: "property before any element".into() })?;
                // The property name is the last token for both scalar and list properties.
                let name = raw.split_whitespace().last().unwrap_or("").to_string();
                el.properties.push(name);
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => {
                return Err(Error::Parse { line: i + 1, message: format!("unknown header keyword {other:?}") })
            }
        }
    }
    if !saw_format {
        return Err(Error::Parse { line: 0, message: "PLY header has no format line".into() });
    }

    let mut coords = Vec::new();
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                lines.next();
            }
            continue;
        }
        let axes: Vec<usize> =
            ["x", "y", "z"].iter().filter_map(|a| el.properties.iter().position(|p| p == a)).collect();
        if axes.is_empty() {
            return Err(Error::Parse { line: 0, message: "vertex element has no x/y/z properties".into() });
        }
        for _ in 0..el.count {
            let (i, raw) = lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                message: "PLY body ended before all vertices were read".into(),
            })?;
            let values: Vec<&str> = raw.split_whitespace().collect();
            if values.len() < el.properties.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {} vertex values, found {}", el.properties.len(), values.len()),
                });
            }
            for &a in &axes {
                coords.push(parse_number(values[a], i + 1)?);
            }
        }
        let dim = axes.len();
        return PointSet::new(dim, coords);
    }
    Err(Error::EmptyInput("PLY file has no vertex element".into()))
}

/// Serializes a point set; numbers use 17 significant digits.
pub fn format_point_set(points: &PointSet, format: PointFormat) -> String {
    let mut out = String::new();
    let sep = match format {
        PointFormat::Csv => ",",
        _ => " ",
    };
    if format == PointFormat::PlyAscii {
        let names = ["x", "y", "z"];
        let _ = writeln!(out, "ply\nformat ascii 1.0\nelement vertex {}", points.len());
        for name in names.iter().take(points.dim().min(3)) {
            let _ = writeln!(out, "property double {name}");
        }
        out.push_str("end_header\n");
    }
    for p in points.iter() {
        let row: Vec<String> = p.iter().map(|&c| fmt_num(c)).collect();
        out.push_str(&row.join(sep));
        out.push('\n');
    }
    out
}

pub fn save_point_set(path: &Path, points: &PointSet, format: PointFormat) -> Result<()> {
    if format == PointFormat::PlyAscii && points.dim() > 3 {
        return Err(Error::UnsupportedFormat(format!("PLY output needs D <= 3, got {}", points.dim())));
    }
    std::fs::write(path, format_point_set(points, format))?;
    Ok(())
}
