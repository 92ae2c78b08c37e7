//! Exchange formats for matrices, eigendata and measures.
//!
//! Sparse matrices are stored as triplets behind a header carrying the cell
//! count and a JSON metadata record, either as text or as little-endian binary:
//!
//! ```text
//! text:   "qemlab-matrix 1" / "n_cells <n>" / "meta <json>" / "<i> <j> <value>"...
//! binary: b"QEMM" u32 version, u64 n_cells, u64 len, <len bytes json>, u64 nnz,
//!         nnz * (u64 i, u64 j, f64 value)
//! ```

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectralTriple;
use crate::ulam::{AnnealedMatrix, GridPartition, MatrixMeta};

const TEXT_TAG: &str = "qemlab-matrix 1";
const MAGIC: &[u8; 4] = b"QEMM";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixFormat {
    Text,
    Binary,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: MatrixMeta,
    cells: Vec<usize>,
    row_weight: Vec<f64>,
}

fn io_err(e: std::io::Error) -> Error {
    Error::InvalidInput(format!("io: {e}"))
}

fn header(m: &AnnealedMatrix) -> String {
    serde_json::to_string(&Header {
        meta: m.meta.clone(),
        cells: m.cells.clone(),
        row_weight: m.row_weight.clone(),
    })
    .expect("header serialises")
}

fn rebuild(n: usize, h: Header, triplets: Vec<(usize, usize, f64)>) -> Result<AnnealedMatrix> {
    let mut rows = vec![Vec::new(); n];
    for (i, j, v) in triplets {
        if i >= n {
            return Err(Error::InvalidInput(format!("row {i} out of range for {n} cells")));
        }
        rows[i].push((j, v));
    }
    AnnealedMatrix::from_rows(rows, h.row_weight, h.cells, h.meta)
}

pub fn write_matrix<W: Write>(m: &AnnealedMatrix, format: MatrixFormat, out: &mut W) -> Result<()> {
    match format {
        MatrixFormat::Text => {
            writeln!(out, "{TEXT_TAG}").map_err(io_err)?;
            writeln!(out, "n_cells {}", m.n_cells()).map_err(io_err)?;
            writeln!(out, "meta {}", header(m)).map_err(io_err)?;
            for (i, j, v) in m.triplets() {
                writeln!(out, "{i} {j} {v}").map_err(io_err)?;
            }
        }
        MatrixFormat::Binary => {
            let h = header(m);
            let mut buf = Vec::with_capacity(32 + h.len() + 24 * m.nnz());
            buf.extend_from_slice(MAGIC);
            buf.extend_from_slice(&VERSION.to_le_bytes());
            buf.extend_from_slice(&(m.n_cells() as u64).to_le_bytes());
            buf.extend_from_slice(&(h.len() as u64).to_le_bytes());
            buf.extend_from_slice(h.as_bytes());
            buf.extend_from_slice(&(m.nnz() as u64).to_le_bytes());
            for (i, j, v) in m.triplets() {
                buf.extend_from_slice(&(i as u64).to_le_bytes());
                buf.extend_from_slice(&(j as u64).to_le_bytes());
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn read_matrix<R: Read>(input: &mut R) -> Result<AnnealedMatrix> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(io_err)?;
    if bytes.starts_with(MAGIC) {
        read_binary(&bytes)
    } else {
        read_text(&bytes)
    }
}

fn bad(msg: &str) -> Error {
    Error::InvalidInput(format!("malformed matrix file: {msg}"))
}

fn read_text(bytes: &[u8]) -> Result<AnnealedMatrix> {
    let mut lines = bytes.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| bad("truncated header"))?
            .map_err(io_err)
    };
    if next()? != TEXT_TAG {
        return Err(bad("missing tag line"));
    }
    let n: usize = next()?
        .strip_prefix("n_cells ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| bad("n_cells line"))?;
    let meta_line = next()?;
    let h: Header = meta_line
        .strip_prefix("meta ")
        .ok_or_else(|| bad("meta line"))
        .and_then(|s| serde_json::from_str(s).map_err(|e| bad(&e.to_string())))?;
    let mut triplets = Vec::new();
    for line in lines {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut field = || it.next().ok_or_else(|| bad("short triplet line"));
        let i: usize = field()?.parse().map_err(|_| bad("row index"))?;
        let j: usize = field()?.parse().map_err(|_| bad("column index"))?;
        let v: f64 = field()?.parse().map_err(|_| bad("value"))?;
        triplets.push((i, j, v));
    }
    rebuild(n, h, triplets)
}

fn read_binary(bytes: &[u8]) -> Result<AnnealedMatrix> {
    let mut pos = MAGIC.len();
    let mut take = |k: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + k).ok_or_else(|| bad("truncated"))?;
        pos += k;
        Ok(s)
    };
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let h: Header = serde_json::from_slice(take(len)?).map_err(|e| bad(&e.to_string()))?;
    let nnz = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut triplets = Vec::with_capacity(nnz.min(bytes.len() / 24));
    for _ in 0..nnz {
        let i = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let j = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let v = f64::from_le_bytes(take(8)?.try_into().unwrap());
        triplets.push((i, j, v));
    }
    rebuild(n, h, triplets)
}

/// Scalar summary of a triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleSummary {
    pub lambda: f64,
    pub lambda_left: f64,
    pub gap_ratio: f64,
    pub gap_converged: bool,
    pub right_residual: f64,
    pub left_residual: f64,
    pub pairing: f64,
    pub n_cells: usize,
}

impl From<&SpectralTriple> for TripleSummary {
    fn from(t: &SpectralTriple) -> Self {
        Self {
            lambda: t.lambda,
            lambda_left: t.lambda_left,
            gap_ratio: t.gap_ratio,
            gap_converged: t.gap_converged,
            right_residual: t.right_residual,
            left_residual: t.left_residual,
            pairing: t.pairing,
            n_cells: t.cells.len(),
        }
    }
}

pub fn triple_json(t: &SpectralTriple) -> String {
    serde_json::to_string_pretty(&TripleSummary::from(t)).expect("summary serialises")
}

/// `cell_index,center_x,center_y,right,left,qem`, one line per cell of the triple.
pub fn triple_csv(t: &SpectralTriple, grid: &GridPartition) -> String {
    let mut s = String::from("cell_index,center_x,center_y,right,left,qem\n");
    for (k, &c) in t.cells.iter().enumerate() {
        let p = grid.center(c);
        s.push_str(&format!(
            "{c},{},{},{},{},{}\n",
            p[0], p[1], t.right[k], t.left[k], t.qem[k]
        ));
    }
    s
}

/// Reads the `qem` column of a triple CSV onto a grid of `n_cells` cells.
pub fn read_qem_csv(text: &str, n_cells: usize) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| Error::InvalidInput("empty qem file".into()))?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    let ci = cols.iter().position(|c| *c == "cell_index");
    let qi = cols.iter().position(|c| *c == "qem");
    let (Some(ci), Some(qi)) = (ci, qi) else {
        return Err(Error::InvalidInput("qem file needs cell_index and qem columns".into()));
    };
    let mut out = vec![0.0; n_cells];
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parse_err = || Error::InvalidInput(format!("qem file line {}", ln + 2));
        let c: usize = f.get(ci).and_then(|s| s.trim().parse().ok()).ok_or_else(parse_err)?;
        let q: f64 = f.get(qi).and_then(|s| s.trim().parse().ok()).ok_or_else(parse_err)?;
        if c >= n_cells {
            return Err(Error::InvalidInput(format!("cell {c} outside a grid of {n_cells} cells")));
        }
        out[c] = q;
    }
    Ok(out)
}

/// `cell_index,center_x,center_y,mass` for a vector on the whole grid.
pub fn grid_vector_csv(v: &[f64], grid: &GridPartition, column: &str) -> String {
    let mut s = format!("cell_index,center_x,center_y,{column}\n");
    for (c, x) in v.iter().enumerate() {
        let p = grid.center(c);
        s.push_str(&format!("{c},{},{},{x}\n", p[0], p[1]));
    }
    s
}
