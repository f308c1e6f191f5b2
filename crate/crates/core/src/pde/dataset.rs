//! Reference datasets on disk: framed binary or CSV with a JSON header line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Field, Grid, PdeSpec};
use crate::io::{read_framed, write_framed, FormatError, FORMAT_VERSION};

const MAGIC: &[u8; 4] = b"CPDS";

/// A reference field together with the problem that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: PdeSpec,
    pub field: Field,
    pub solver: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: PdeSpec,
    grid: Grid,
    solver: String,
    companion: bool,
}

impl Dataset {
    fn header(&self) -> Header {
        Header {
            version: FORMAT_VERSION,
            spec: self.spec,
            grid: self.field.grid,
            solver: self.solver.clone(),
            companion: self.field.companion.is_some(),
        }
    }

    fn from_parts(h: Header, mut values: Vec<f64>) -> Result<Self, FormatError> {
        let n = h.grid.n_total();
        let expected = if h.companion { 2 * n } else { n };
        if values.len() != expected {
            return Err(FormatError::Malformed(format!(
                "expected {expected} values, found {}",
                values.len()
            )));
        }
        let companion = h.companion.then(|| values.split_off(n));
        let mut field = Field::new(h.grid, values).map_err(|e| FormatError::Malformed(e.to_string()))?;
        field.companion = companion;
        Ok(Dataset {
            spec: h.spec,
            field,
            solver: h.solver,
        })
    }
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), FormatError> {
    let mut payload = data.field.values.clone();
    if let Some(c) = &data.field.companion {
        payload.extend_from_slice(c);
    }
    write_framed(BufWriter::new(File::create(path)?), MAGIC, &data.header(), &payload)
}

pub fn read_dataset(path: &Path) -> Result<Dataset, FormatError> {
    let (h, values): (Header, Vec<f64>) = read_framed(BufReader::new(File::open(path)?), MAGIC)?;
    Dataset::from_parts(h, values)
}

/// One row per grid point, `t,x[,y],u[,u_t]`, preceded by `# <json header>`.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {}", serde_json::to_string(&data.header())?)?;
    let g = &data.field.grid;
    let mut cols = vec!["t", "x"];
    if g.dims == 2 {
        cols.push("y");
    }
    cols.push("u");
    if data.field.companion.is_some() {
        cols.push("u_t");
    }
    writeln!(w, "{}", cols.join(","))?;
    let n = g.n_space();
    for k in 0..g.nt {
        for s in 0..n {
            let (x, y) = g.space_coords(s);
            let i = k * n + s;
            write!(w, "{},{}", g.t(k), x)?;
            if g.dims == 2 {
                write!(w, ",{y}")?;
            }
            write!(w, ",{}", data.field.values[i])?;
            if let Some(c) = &data.field.companion {
                write!(w, ",{}", c[i])?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset, FormatError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let mut next = || -> Result<String, FormatError> {
        lines
            .next()
            .ok_or_else(|| FormatError::Malformed("unexpected end of file".into()))?
            .map_err(FormatError::from)
    };
    let first = next()?;
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| FormatError::Malformed("missing header line".into()))?;
    let h: Header = serde_json::from_str(json)?;
    if h.version != FORMAT_VERSION {
        return Err(FormatError::Version(h.version));
    }
    next()?;
    let n = h.grid.n_total();
    let u_col = h.grid.dims + 1;
    let mut values = Vec::with_capacity(n);
    let mut companion = Vec::new();
    for row in 0..n {
        let line = next()?;
        let cells: Vec<&str> = line.split(',').collect();
        let parse = |c: usize| -> Result<f64, FormatError> {
            cells
                .get(c)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| FormatError::Malformed(format!("row {row}, column {c}")))
        };
        values.push(parse(u_col)?);
        if h.companion {
            companion.push(parse(u_col + 1)?);
        }
    }
    values.extend(companion);
    Dataset::from_parts(h, values)
}
