//! Text and binary artifact formats. Reals are written with 17 significant
//! digits so every file round-trips exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{GraphJson, Location, NeighborGraph};
use crate::model::CountDataset;
use crate::predict::{CellSummary, PredictiveDraws};

/// Magic prefix of a binary draws-by-cells matrix.
pub const CELL_MATRIX_MAGIC: &[u8; 8] = b"STGMCELL";

pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

fn csv_err(origin: &str, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(origin, io),
        other => Error::parse(origin, format!("{other:?}")),
    }
}

fn flush<W: Write>(origin: &str, w: csv::Writer<W>) -> Result<()> {
    let mut inner = w.into_inner().map_err(|e| Error::io(origin, std::io::Error::other(e.to_string())))?;
    inner.flush().map_err(|e| Error::io(origin, e))
}

fn field<T: std::str::FromStr>(origin: &str, line: u64, name: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::parse(format!("{origin}:{line}"), format!("column {name}: cannot parse {raw:?}")))
}

fn real(origin: &str, line: u64, name: &str, raw: &str) -> Result<f64> {
    let v: f64 = field(origin, line, name, raw)?;
    if !v.is_finite() {
        return Err(Error::parse(format!("{origin}:{line}"), format!("column {name}: {raw:?} is not finite")));
    }
    Ok(v)
}

fn header_index(origin: &str, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::parse(origin, format!("missing column {name:?}")))
}

/// `x_1, x_2, ...` columns in order; errors when the numbering has gaps.
fn numbered_columns(origin: &str, headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = Vec::new();
    for (col, h) in headers.iter().enumerate() {
        if let Some(rest) = h.strip_prefix(prefix) {
            let k: usize = rest
                .parse()
                .map_err(|_| Error::parse(origin, format!("bad column name {h:?}")))?;
            found.push((k, col));
        }
    }
    found.sort();
    for (expect, (k, _)) in found.iter().enumerate() {
        if *k != expect + 1 {
            return Err(Error::parse(origin, format!("columns {prefix}1.. are not numbered consecutively")));
        }
    }
    Ok(found.into_iter().map(|(_, c)| c).collect())
}

/// Long-format dataset: `t, location_id, count[, offset][, x_1..x_p]`, time-major.
pub fn write_dataset<W: Write>(w: W, origin: &str, data: &CountDataset, with_offset: bool) -> Result<()> {
    let mut out = csv_writer(w);
    let p = data.n_covariates();
    let mut header = vec!["t".to_string(), "location_id".to_string(), "count".to_string()];
    if with_offset {
        header.push("offset".into());
    }
    header.extend((1..=p).map(|j| format!("x_{j}")));
    out.write_record(&header).map_err(|e| csv_err(origin, e))?;
    for t in 0..data.n_times() {
        for i in 0..data.n_locations() {
            let mut row = vec![(t + 1).to_string(), (i + 1).to_string(), data.y(t, i).to_string()];
            if with_offset {
                row.push(fmt_real(data.offset(t, i)));
            }
            if p > 0 {
                row.extend(data.x(t, i).iter().map(|v| fmt_real(*v)));
            }
            out.write_record(&row).map_err(|e| csv_err(origin, e))?;
        }
    }
    flush(origin, out)
}

/// Reads a long-format dataset. Rows may come in any order but must cover
/// every `(t, location)` pair of `1..=T x 1..=m` exactly once.
pub fn read_dataset<R: Read>(r: R, origin: &str) -> Result<CountDataset> {
    let mut rd = csv_reader(r);
    let headers = rd.headers().map_err(|e| csv_err(origin, e))?.clone();
    let ct = header_index(origin, &headers, "t")?;
    let cl = header_index(origin, &headers, "location_id")?;
    let cy = header_index(origin, &headers, "count")?;
    let co = headers.iter().position(|h| h == "offset");
    let cx = numbered_columns(origin, &headers, "x_")?;
    let mut rows: Vec<(usize, usize, u64, f64, Vec<f64>)> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |c: usize| rec.get(c).unwrap_or("");
        let t: usize = field(origin, line, "t", get(ct))?;
        let loc: usize = field(origin, line, "location_id", get(cl))?;
        if t == 0 || loc == 0 {
            return Err(Error::parse(format!("{origin}:{line}"), "t and location_id are 1-based"));
        }
        let y: u64 = field(origin, line, "count", get(cy))?;
        let o = match co {
            Some(c) => real(origin, line, "offset", get(c))?,
            None => 1.0,
        };
        let x = cx
            .iter()
            .enumerate()
            .map(|(j, &c)| real(origin, line, &format!("x_{}", j + 1), get(c)))
            .collect::<Result<Vec<_>>>()?;
        rows.push((t, loc, y, o, x));
    }
    if rows.is_empty() {
        return Err(Error::parse(origin, "no data rows"));
    }
    let t_len = rows.iter().map(|r| r.0).max().unwrap_or(0);
    let m = rows.iter().map(|r| r.1).max().unwrap_or(0);
    let cells = t_len
        .checked_mul(m)
        .filter(|c| *c == rows.len())
        .ok_or_else(|| Error::parse(origin, format!("{} rows do not form a complete {t_len} x {m} panel", rows.len())))?;
    let p = cx.len();
    let mut y = vec![0u64; cells];
    let mut offset = vec![1.0; cells];
    let mut x = vec![0.0; cells * p];
    let mut seen = vec![false; cells];
    for (t, loc, yy, o, xx) in rows {
        let k = (t - 1) * m + (loc - 1);
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::parse(origin, format!("duplicate row for t = {t}, location {loc}")));
        }
        y[k] = yy;
        offset[k] = o;
        x[k * p..(k + 1) * p].copy_from_slice(&xx);
    }
    CountDataset::new(t_len, m, y, co.map(|_| offset), (p > 0).then_some((p, x)))
}

pub fn write_dataset_file(path: &Path, data: &CountDataset, with_offset: bool) -> Result<()> {
    write_dataset(create(path)?, &path.display().to_string(), data, with_offset)
}

pub fn read_dataset_file(path: &Path) -> Result<CountDataset> {
    read_dataset(open(path)?, &path.display().to_string())
}

/// `id, coord_1..coord_d`.
pub fn write_locations<W: Write>(w: W, origin: &str, locs: &[Location]) -> Result<()> {
    let mut out = csv_writer(w);
    let d = locs.first().map_or(0, |l| l.coords.len());
    let mut header = vec!["id".to_string()];
    header.extend((1..=d).map(|j| format!("coord_{j}")));
    out.write_record(&header).map_err(|e| csv_err(origin, e))?;
    for l in locs {
        let mut row = vec![l.id.to_string()];
        row.extend(l.coords.iter().map(|c| fmt_real(*c)));
        out.write_record(&row).map_err(|e| csv_err(origin, e))?;
    }
    flush(origin, out)
}

pub fn read_locations<R: Read>(r: R, origin: &str) -> Result<Vec<Location>> {
    let mut rd = csv_reader(r);
    let headers = rd.headers().map_err(|e| csv_err(origin, e))?.clone();
    let ci = header_index(origin, &headers, "id")?;
    let cc = numbered_columns(origin, &headers, "coord_")?;
    if cc.is_empty() {
        return Err(Error::parse(origin, "no coord_ columns"));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id: usize = field(origin, line, "id", rec.get(ci).unwrap_or(""))?;
        let coords = cc
            .iter()
            .enumerate()
            .map(|(j, &c)| real(origin, line, &format!("coord_{}", j + 1), rec.get(c).unwrap_or("")))
            .collect::<Result<Vec<_>>>()?;
        out.push(Location { id, coords });
    }
    out.sort_by_key(|l| l.id);
    if out.iter().enumerate().any(|(k, l)| l.id != k + 1) {
        return Err(Error::parse(origin, "location ids must be exactly 1..=m"));
    }
    Ok(out)
}

pub fn write_locations_file(path: &Path, locs: &[Location]) -> Result<()> {
    write_locations(create(path)?, &path.display().to_string(), locs)
}

pub fn read_locations_file(path: &Path) -> Result<Vec<Location>> {
    read_locations(open(path)?, &path.display().to_string())
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::parse("json", e.to_string()))
}

pub fn from_json_str<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::parse(format!("{origin}:{}:{}", e.line(), e.column()), e.to_string()))
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_json_string(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json_str(&text, &path.display().to_string())
}

/// Parses and validates a graph document.
pub fn graph_from_json_str(text: &str, origin: &str) -> Result<NeighborGraph> {
    NeighborGraph::from_json(from_json_str::<GraphJson>(text, origin)?)
}

/// Scalar draws of one or more chains, one row per kept draw.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainTable {
    pub chain: Vec<usize>,
    pub c: Vec<f64>,
    pub kappa: Vec<f64>,
    pub rho: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
}

impl ChainTable {
    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    /// Number of draws per chain, in chain order.
    pub fn chain_lengths(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for (k, ch) in self.chain.iter().enumerate() {
            if k == 0 || *ch != self.chain[k - 1] {
                out.push(0);
            }
            *out.last_mut().expect("pushed above") += 1;
        }
        out
    }
}

/// `draw, chain, c, kappa, rho[, beta_1..beta_p]`; `draw` counts from 1 within each chain.
pub fn write_chain<W: Write>(w: W, origin: &str, table: &ChainTable) -> Result<()> {
    let mut out = csv_writer(w);
    let p = table.beta.first().map_or(0, Vec::len);
    let mut header: Vec<String> = ["draw", "chain", "c", "kappa", "rho"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=p).map(|j| format!("beta_{j}")));
    out.write_record(&header).map_err(|e| csv_err(origin, e))?;
    let mut draw = 0;
    for k in 0..table.len() {
        draw = if k > 0 && table.chain[k] == table.chain[k - 1] { draw + 1 } else { 1 };
        let mut row = vec![
            draw.to_string(),
            table.chain[k].to_string(),
            fmt_real(table.c[k]),
            fmt_real(table.kappa[k]),
            fmt_real(table.rho[k]),
        ];
        if p > 0 {
            row.extend(table.beta[k].iter().map(|b| fmt_real(*b)));
        }
        out.write_record(&row).map_err(|e| csv_err(origin, e))?;
    }
    flush(origin, out)
}

pub fn read_chain<R: Read>(r: R, origin: &str) -> Result<ChainTable> {
    let mut rd = csv_reader(r);
    let headers = rd.headers().map_err(|e| csv_err(origin, e))?.clone();
    let cols: Vec<usize> = ["chain", "c", "kappa", "rho"]
        .iter()
        .map(|n| header_index(origin, &headers, n))
        .collect::<Result<_>>()?;
    let cb = numbered_columns(origin, &headers, "beta_")?;
    let mut t = ChainTable::default();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |c: usize| rec.get(c).unwrap_or("");
        t.chain.push(field(origin, line, "chain", get(cols[0]))?);
        t.c.push(real(origin, line, "c", get(cols[1]))?);
        t.kappa.push(real(origin, line, "kappa", get(cols[2]))?);
        t.rho.push(real(origin, line, "rho", get(cols[3]))?);
        if !cb.is_empty() {
            t.beta.push(
                cb.iter()
                    .enumerate()
                    .map(|(j, &c)| real(origin, line, &format!("beta_{}", j + 1), get(c)))
                    .collect::<Result<_>>()?,
            );
        }
    }
    Ok(t)
}

/// Per-cell posterior means: `t, location_id, frailty_mean, fitted_mean`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrailtyTable {
    pub n_times: usize,
    pub n_locations: usize,
    pub frailty_mean: Vec<f64>,
    pub fitted_mean: Vec<f64>,
}

pub fn write_frailty<W: Write>(w: W, origin: &str, table: &FrailtyTable) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["t", "location_id", "frailty_mean", "fitted_mean"])
        .map_err(|e| csv_err(origin, e))?;
    for t in 0..table.n_times {
        for i in 0..table.n_locations {
            let k = t * table.n_locations + i;
            out.write_record([
                (t + 1).to_string(),
                (i + 1).to_string(),
                fmt_real(table.frailty_mean[k]),
                fmt_real(table.fitted_mean[k]),
            ])
            .map_err(|e| csv_err(origin, e))?;
        }
    }
    flush(origin, out)
}

pub fn read_frailty<R: Read>(r: R, origin: &str) -> Result<FrailtyTable> {
    let mut rd = csv_reader(r);
    let headers = rd.headers().map_err(|e| csv_err(origin, e))?.clone();
    let cols: Vec<usize> = ["t", "location_id", "frailty_mean", "fitted_mean"]
        .iter()
        .map(|n| header_index(origin, &headers, n))
        .collect::<Result<_>>()?;
    let mut rows: Vec<(usize, usize, f64, f64)> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |c: usize| rec.get(c).unwrap_or("");
        rows.push((
            field(origin, line, "t", get(cols[0]))?,
            field(origin, line, "location_id", get(cols[1]))?,
            real(origin, line, "frailty_mean", get(cols[2]))?,
            real(origin, line, "fitted_mean", get(cols[3]))?,
        ));
    }
    let t_len = rows.iter().map(|r| r.0).max().unwrap_or(0);
    let m = rows.iter().map(|r| r.1).max().unwrap_or(0);
    if rows.is_empty() || rows.iter().any(|r| r.0 == 0 || r.1 == 0) || t_len.checked_mul(m) != Some(rows.len()) {
        return Err(Error::parse(origin, "rows do not form a complete 1-based panel"));
    }
    let mut table = FrailtyTable {
        n_times: t_len,
        n_locations: m,
        frailty_mean: vec![f64::NAN; rows.len()],
        fitted_mean: vec![f64::NAN; rows.len()],
    };
    for (t, i, u, f) in rows {
        let k = (t - 1) * m + (i - 1);
        if !table.frailty_mean[k].is_nan() {
            return Err(Error::parse(origin, format!("duplicate row for t = {t}, location {i}")));
        }
        table.frailty_mean[k] = u;
        table.fitted_mean[k] = f;
    }
    Ok(table)
}

/// Binary matrix: magic, `u64` rows, `u64` columns, then row-major `f64`, all little-endian.
pub fn encode_cell_matrix<'a, I>(rows: I, n_rows: usize, n_cols: usize) -> Vec<u8>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut out = Vec::with_capacity(24 + 8 * n_rows * n_cols);
    out.extend_from_slice(CELL_MATRIX_MAGIC);
    out.extend_from_slice(&(n_rows as u64).to_le_bytes());
    out.extend_from_slice(&(n_cols as u64).to_le_bytes());
    for row in rows {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_cell_matrix(bytes: &[u8], origin: &str) -> Result<Vec<Vec<f64>>> {
    if bytes.len() < 24 || &bytes[..8] != CELL_MATRIX_MAGIC {
        return Err(Error::parse(origin, "not a cell matrix (bad magic or short header)"));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[k..k + 8].try_into().expect("eight bytes"));
    let (n_rows, n_cols) = (word(8), word(16));
    if n_cols == 0 && n_rows > 0 {
        return Err(Error::parse(origin, format!("{n_rows} rows of width zero")));
    }
    n_rows
        .checked_mul(n_cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(24))
        .filter(|n| *n == bytes.len() as u64)
        .ok_or_else(|| Error::parse(origin, format!("payload does not hold {n_rows} x {n_cols} reals")))?;
    let (n_rows, n_cols) = (n_rows as usize, n_cols as usize);
    let body = &bytes[24..];
    let mut out = Vec::with_capacity(n_rows);
    for r in 0..n_rows {
        let row: Vec<f64> = body[r * n_cols * 8..(r + 1) * n_cols * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("eight bytes")))
            .collect();
        out.push(row);
    }
    Ok(out)
}

pub fn write_cell_matrix_file(path: &Path, rows: &[Vec<f64>], n_cols: usize) -> Result<()> {
    if rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::InvalidData(format!("{}: ragged matrix", path.display())));
    }
    let bytes = encode_cell_matrix(rows.iter().map(Vec::as_slice), rows.len(), n_cols);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_cell_matrix_file(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cell_matrix(&bytes, &path.display().to_string())
}

/// `draw_id, t, location_id, U, y_pred`; `draw_id` counts from 1.
pub fn write_pred_draws<W: Write>(w: W, origin: &str, pred: &PredictiveDraws) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["draw_id", "t", "location_id", "U", "y_pred"])
        .map_err(|e| csv_err(origin, e))?;
    for d in &pred.draws {
        for (k, cell) in pred.cells.iter().enumerate() {
            out.write_record([
                (d.draw_id + 1).to_string(),
                cell.t.to_string(),
                cell.location.to_string(),
                fmt_real(d.u[k]),
                d.y[k].to_string(),
            ])
            .map_err(|e| csv_err(origin, e))?;
        }
    }
    flush(origin, out)
}

pub fn write_pred_summary<W: Write>(w: W, origin: &str, rows: &[CellSummary]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["t", "location_id", "u_mean", "mean", "median", "q05", "q95"])
        .map_err(|e| csv_err(origin, e))?;
    for r in rows {
        out.write_record([
            r.t.to_string(),
            r.location.to_string(),
            fmt_real(r.u_mean),
            fmt_real(r.mean),
            fmt_real(r.median),
            fmt_real(r.q05),
            fmt_real(r.q95),
        ])
        .map_err(|e| csv_err(origin, e))?;
    }
    flush(origin, out)
}

pub fn read_pred_summary<R: Read>(r: R, origin: &str) -> Result<Vec<CellSummary>> {
    let mut rd = csv_reader(r);
    let headers = rd.headers().map_err(|e| csv_err(origin, e))?.clone();
    let names = ["t", "location_id", "u_mean", "mean", "median", "q05", "q95"];
    let cols: Vec<usize> = names.iter().map(|n| header_index(origin, &headers, n)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |j: usize| rec.get(cols[j]).unwrap_or("");
        let r = |j: usize| real(origin, line, names[j], get(j));
        out.push(CellSummary {
            t: field(origin, line, "t", get(0))?,
            location: field(origin, line, "location_id", get(1))?,
            u_mean: r(2)?,
            mean: r(3)?,
            median: r(4)?,
            q05: r(5)?,
            q95: r(6)?,
        });
    }
    Ok(out)
}

/// Absolute errors per cell, labeled by configuration: `label, t, location_id, abs_error`.
pub fn write_abs_errors<W: Write>(w: W, origin: &str, rows: &[(String, usize, usize, f64)]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["label", "t", "location_id", "abs_error"])
        .map_err(|e| csv_err(origin, e))?;
    for (label, t, loc, e) in rows {
        out.write_record([label.clone(), t.to_string(), loc.to_string(), fmt_real(*e)])
            .map_err(|e| csv_err(origin, e))?;
    }
    flush(origin, out)
}

/// Withheld counts `t, location_id, count`, in any order and not necessarily a full panel.
pub fn write_holdout<W: Write>(w: W, origin: &str, rows: &[(usize, usize, u64)]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["t", "location_id", "count"]).map_err(|e| csv_err(origin, e))?;
    for (t, loc, y) in rows {
        out.write_record([t.to_string(), loc.to_string(), y.to_string()])
            .map_err(|e| csv_err(origin, e))?;
    }
    flush(origin, out)
}

pub fn read_holdout<R: Read>(r: R, origin: &str) -> Result<Vec<(usize, usize, u64)>> {
    let mut rd = csv_reader(r);
    let headers = rd.headers().map_err(|e| csv_err(origin, e))?.clone();
    let cols: Vec<usize> = ["t", "location_id", "count"]
        .iter()
        .map(|n| header_index(origin, &headers, n))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |c: usize| rec.get(c).unwrap_or("");
        out.push((
            field(origin, line, "t", get(cols[0]))?,
            field(origin, line, "location_id", get(cols[1]))?,
            field(origin, line, "count", get(cols[2]))?,
        ));
    }
    Ok(out)
}

/// Every `stride`-th draw of the scalar parameters: `draw, chain, c, kappa, rho`.
pub fn write_trace<W: Write>(w: W, origin: &str, table: &ChainTable, stride: usize) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["draw", "chain", "c", "kappa", "rho"])
        .map_err(|e| csv_err(origin, e))?;
    let stride = stride.max(1);
    let mut draw = 0;
    for k in 0..table.len() {
        draw = if k > 0 && table.chain[k] == table.chain[k - 1] { draw + 1 } else { 1 };
        if (draw - 1) % stride != 0 {
            continue;
        }
        out.write_record([
            draw.to_string(),
            table.chain[k].to_string(),
            fmt_real(table.c[k]),
            fmt_real(table.kappa[k]),
            fmt_real(table.rho[k]),
        ])
        .map_err(|e| csv_err(origin, e))?;
    }
    flush(origin, out)
}

/// Opens `path` for writing through one of the writers above.
pub fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(BufWriter<File>, &str) -> Result<()>,
{
    f(create(path)?, &path.display().to_string())
}

/// Opens `path` for reading through one of the readers above.
pub fn read_with<T, F>(path: &Path, f: F) -> Result<T>
where
    F: FnOnce(BufReader<File>, &str) -> Result<T>,
{
    f(open(path)?, &path.display().to_string())
}
