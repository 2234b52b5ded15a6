//! Matrix ingestion and result serialization: a Matrix Market reader/writer,
//! CSR construction from the pointerB/pointerE interop layout, and JSON/CSV
//! result documents. File writes go through a temp-file-and-rename so a
//! failed run never leaves a partial output behind.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SvdsError;
use crate::kernels::{CsrMatrix, DenseMatrix, MatVec};
use crate::solver::SvdsOptions;

/// Dense inputs above this element count are rejected at load.
pub const DEFAULT_DENSE_ELEMENT_LIMIT: usize = 100_000_000;

/// A loaded matrix, sparse or dense, behind one type.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixData {
    Sparse(CsrMatrix),
    Dense(DenseMatrix),
}

impl MatrixData {
    pub fn nrows(&self) -> usize {
        match self {
            MatrixData::Sparse(a) => a.nrows(),
            MatrixData::Dense(a) => a.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            MatrixData::Sparse(a) => a.ncols(),
            MatrixData::Dense(a) => a.ncols(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            MatrixData::Sparse(a) => a.nnz(),
            MatrixData::Dense(a) => a.nrows() * a.ncols(),
        }
    }

    /// Nonzero count as the flop estimator expects it: 0 signals dense.
    pub fn nnz_for_estimate(&self) -> usize {
        match self {
            MatrixData::Sparse(a) => a.nnz(),
            MatrixData::Dense(_) => 0,
        }
    }
}

impl MatVec for MatrixData {
    fn nrows(&self) -> usize {
        MatrixData::nrows(self)
    }

    fn ncols(&self) -> usize {
        MatrixData::ncols(self)
    }

    fn nnz(&self) -> usize {
        MatrixData::nnz(self)
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        match self {
            MatrixData::Sparse(a) => a.apply_into(x, y),
            MatrixData::Dense(a) => a.apply_into(x, y),
        }
    }

    fn apply_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        match self {
            MatrixData::Sparse(a) => a.apply_transpose_into(x, y),
            MatrixData::Dense(a) => a.apply_transpose_into(x, y),
        }
    }
}

// ---------------------------------------------------------------------------
// Matrix Market
// ---------------------------------------------------------------------------

struct MmHeader {
    coordinate: bool,
    symmetric: bool,
}

fn parse_err(line: usize, message: impl Into<String>) -> SvdsError {
    SvdsError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_banner(line_no: usize, line: &str) -> Result<MmHeader, SvdsError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() < 5 || !tokens[0].eq_ignore_ascii_case("%%MatrixMarket") {
        return Err(parse_err(line_no, "expected banner '%%MatrixMarket matrix <format> <field> <symmetry>'"));
    }
    if !tokens[1].eq_ignore_ascii_case("matrix") {
        return Err(parse_err(line_no, format!("unsupported object '{}'", tokens[1])));
    }
    let coordinate = if tokens[2].eq_ignore_ascii_case("coordinate") {
        true
    } else if tokens[2].eq_ignore_ascii_case("array") {
        false
    } else {
        return Err(parse_err(line_no, format!("unsupported format '{}'", tokens[2])));
    };
    if !tokens[3].eq_ignore_ascii_case("real") {
        return Err(parse_err(line_no, format!("unsupported field '{}'; only real is accepted", tokens[3])));
    }
    let symmetric = if tokens[4].eq_ignore_ascii_case("general") {
        false
    } else if tokens[4].eq_ignore_ascii_case("symmetric") {
        true
    } else {
        return Err(parse_err(line_no, format!("unsupported symmetry '{}'", tokens[4])));
    };
    Ok(MmHeader {
        coordinate,
        symmetric,
    })
}

/// Reads a Matrix Market file: coordinate files become CSR (duplicates
/// summed, symmetric storage expanded to both triangles), array files become
/// dense matrices. Uses the default dense size limit.
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<MatrixData, SvdsError> {
    read_matrix_market_with_limit(path, DEFAULT_DENSE_ELEMENT_LIMIT)
}

pub fn read_matrix_market_with_limit(
    path: impl AsRef<Path>,
    max_dense_elements: usize,
) -> Result<MatrixData, SvdsError> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (idx, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file"))
        .and_then(|(i, l)| Ok((i, l?)))?;
    let header = parse_banner(idx + 1, &first)?;

    // skip comments and blank lines up to the size line
    let (size_line_no, size_line) = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line?;
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('%') {
                    continue;
                }
                break (i + 1, line);
            }
            None => return Err(parse_err(0, "missing size line")),
        }
    };

    let dims: Vec<&str> = size_line.split_whitespace().collect();
    let want_dims = if header.coordinate { 3 } else { 2 };
    if dims.len() != want_dims {
        return Err(parse_err(size_line_no, format!("expected {want_dims} size fields")));
    }
    let m: usize = dims[0]
        .parse()
        .map_err(|_| parse_err(size_line_no, "cannot parse row count"))?;
    let n: usize = dims[1]
        .parse()
        .map_err(|_| parse_err(size_line_no, "cannot parse column count"))?;
    if m == 0 || n == 0 {
        return Err(parse_err(size_line_no, "matrix dimensions must be positive"));
    }
    if header.symmetric && m != n {
        return Err(parse_err(size_line_no, "symmetric matrices must be square"));
    }

    if header.coordinate {
        let nnz: usize = dims[2]
            .parse()
            .map_err(|_| parse_err(size_line_no, "cannot parse nonzero count"))?;
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(nnz);
        let mut seen = 0usize;
        let mut last_line = size_line_no;
        for (i, line) in lines {
            let line = line?;
            let line_no = i + 1;
            last_line = line_no;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('%') {
                continue;
            }
            if seen == nnz {
                return Err(parse_err(line_no, "more entries than declared"));
            }
            let mut tok = trimmed.split_whitespace();
            let row: usize = tok
                .next()
                .ok_or_else(|| parse_err(line_no, "missing row index"))?
                .parse()
                .map_err(|_| parse_err(line_no, "cannot parse row index"))?;
            let col: usize = tok
                .next()
                .ok_or_else(|| parse_err(line_no, "missing column index"))?
                .parse()
                .map_err(|_| parse_err(line_no, "cannot parse column index"))?;
            let val: f64 = tok
                .next()
                .ok_or_else(|| parse_err(line_no, "missing value"))?
                .parse()
                .map_err(|_| parse_err(line_no, "cannot parse value"))?;
            if tok.next().is_some() {
                return Err(parse_err(line_no, "trailing fields on entry line"));
            }
            if row < 1 || row > m || col < 1 || col > n {
                return Err(parse_err(line_no, format!("index ({row}, {col}) out of bounds")));
            }
            if !val.is_finite() {
                return Err(parse_err(line_no, "values must be finite"));
            }
            triplets.push((row - 1, col - 1, val));
            if header.symmetric && row != col {
                triplets.push((col - 1, row - 1, val));
            }
            seen += 1;
        }
        if seen != nnz {
            return Err(parse_err(last_line, format!("expected {nnz} entries, found {seen}")));
        }
        Ok(MatrixData::Sparse(CsrMatrix::from_triplets(m, n, &triplets)?))
    } else {
        if m.saturating_mul(n) > max_dense_elements {
            return Err(SvdsError::InvalidArgument(format!(
                "dense input of {m} x {n} = {} elements exceeds the limit of {max_dense_elements}",
                m.saturating_mul(n)
            )));
        }
        let expected = if header.symmetric {
            n * (n + 1) / 2
        } else {
            m * n
        };
        let mut values: Vec<f64> = Vec::with_capacity(expected);
        let mut last_line = size_line_no;
        for (i, line) in lines {
            let line = line?;
            let line_no = i + 1;
            last_line = line_no;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('%') {
                continue;
            }
            for tok in trimmed.split_whitespace() {
                if values.len() == expected {
                    return Err(parse_err(line_no, "more values than declared"));
                }
                let v: f64 = tok
                    .parse()
                    .map_err(|_| parse_err(line_no, "cannot parse value"))?;
                if !v.is_finite() {
                    return Err(parse_err(line_no, "values must be finite"));
                }
                values.push(v);
            }
        }
        if values.len() != expected {
            return Err(parse_err(
                last_line,
                format!("expected {expected} values, found {}", values.len()),
            ));
        }
        let dense = if header.symmetric {
            // stored column by column, rows j..n-1 of column j
            let mut d = DenseMatrix::zeros(n, n);
            let mut p = 0;
            for j in 0..n {
                for i in j..n {
                    d.set(i, j, values[p]);
                    d.set(j, i, values[p]);
                    p += 1;
                }
            }
            d
        } else {
            DenseMatrix::from_column_major(m, n, values)?
        };
        Ok(MatrixData::Dense(dense))
    }
}

/// Writes a matrix in Matrix Market form: coordinate/general for sparse,
/// array/general for dense. Floats use the shortest round-trip encoding.
pub fn write_matrix_market(path: impl AsRef<Path>, data: &MatrixData) -> Result<(), SvdsError> {
    let mut out = String::new();
    match data {
        MatrixData::Sparse(a) => {
            out.push_str("%%MatrixMarket matrix coordinate real general\n");
            out.push_str(&format!("{} {} {}\n", a.nrows(), a.ncols(), a.nnz()));
            for i in 0..a.nrows() {
                for p in a.row_ptr()[i]..a.row_ptr()[i + 1] {
                    out.push_str(&format!("{} {} {}\n", i + 1, a.col_idx()[p] + 1, a.values()[p]));
                }
            }
        }
        MatrixData::Dense(d) => {
            out.push_str("%%MatrixMarket matrix array real general\n");
            out.push_str(&format!("{} {}\n", d.nrows(), d.ncols()));
            for j in 0..d.ncols() {
                for i in 0..d.nrows() {
                    out.push_str(&format!("{}\n", d.get(i, j)));
                }
            }
        }
    }
    write_atomic(path.as_ref(), &out)
}

/// Converts the 1-based pointerB/pointerE layout into a canonical CSR
/// matrix. Row i owns `cols[pointerB[i]-1 .. pointerE[i]-1]`; gaps between
/// pointerE[i] and pointerB[i+1] are legal in that layout and are dropped.
pub fn from_paper_csr(
    nnz: usize,
    nrows: usize,
    ncols: usize,
    values: &[f64],
    cols: &[usize],
    pointer_b: &[usize],
    pointer_e: &[usize],
) -> Result<CsrMatrix, SvdsError> {
    if values.len() != nnz || cols.len() != nnz {
        return Err(SvdsError::InvalidArgument(format!(
            "values/cols length must equal nnz = {nnz}"
        )));
    }
    if pointer_b.len() != nrows || pointer_e.len() != nrows {
        return Err(SvdsError::InvalidArgument(format!(
            "pointerB/pointerE length must equal nrows = {nrows}"
        )));
    }
    let mut triplets = Vec::new();
    for i in 0..nrows {
        let (pb, pe) = (pointer_b[i], pointer_e[i]);
        if pe < pb {
            return Err(SvdsError::InvalidArgument(format!(
                "row {i}: pointerE = {pe} precedes pointerB = {pb}"
            )));
        }
        if pb < 1 || pe > nnz + 1 {
            return Err(SvdsError::InvalidArgument(format!(
                "row {i}: pointer range [{pb}, {pe}) leaves the storage of {nnz} entries"
            )));
        }
        for p in (pb - 1)..(pe - 1) {
            let c = cols[p];
            if c < 1 || c > ncols {
                return Err(SvdsError::InvalidArgument(format!(
                    "row {i}: column index {c} outside 1..={ncols}"
                )));
            }
            triplets.push((i, c - 1, values[p]));
        }
    }
    CsrMatrix::from_triplets(nrows, ncols, &triplets)
}

// ---------------------------------------------------------------------------
// Result documents
// ---------------------------------------------------------------------------

/// Everything one solve reports, in a serializable shape. `u_file`/`v_file`
/// point at factor matrices written next to the document and are needed to
/// re-verify triplets later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub matrix_name: String,
    pub m: usize,
    pub n: usize,
    pub nnz: usize,
    pub options: SvdsOptions,
    pub singular_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub restarts: usize,
    pub converged: bool,
    pub matvecs: usize,
    pub wall_time_seconds: f64,
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_file: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultFormat {
    Json,
    Csv,
}

/// 17 significant digits: enough to round-trip any f64 through decimal.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_result(
    doc: &ResultDocument,
    path: impl AsRef<Path>,
    format: ResultFormat,
) -> Result<(), SvdsError> {
    let contents = render_result(doc, format)?;
    write_atomic(path.as_ref(), &contents)
}

/// Serializes a document without touching the filesystem.
pub fn render_result(doc: &ResultDocument, format: ResultFormat) -> Result<String, SvdsError> {
    match format {
        ResultFormat::Json => {
            let mut s = serde_json::to_string_pretty(doc)
                .map_err(|e| SvdsError::InvalidArgument(format!("cannot encode document: {e}")))?;
            s.push('\n');
            Ok(s)
        }
        ResultFormat::Csv => {
            let mut s = String::new();
            s.push_str(&format!("# matrix_name={}\n", doc.matrix_name));
            s.push_str(&format!("# m={} n={} nnz={}\n", doc.m, doc.n, doc.nnz));
            let subspace = match doc.options.subspace {
                Some(t) => t.to_string(),
                None => "none".into(),
            };
            s.push_str(&format!(
                "# k={} tol={} subspace={} restarts_cap={} seed={} opt_threads={}\n",
                doc.options.k,
                fmt17(doc.options.tol),
                subspace,
                doc.options.restarts,
                doc.options.seed,
                doc.options.threads
            ));
            s.push_str(&format!(
                "# threads={} restarts={} converged={} matvecs={} wall_time_seconds={}\n",
                doc.threads,
                doc.restarts,
                doc.converged,
                doc.matvecs,
                fmt17(doc.wall_time_seconds)
            ));
            if let Some(u) = &doc.u_file {
                s.push_str(&format!("# u_file={u}\n"));
            }
            if let Some(v) = &doc.v_file {
                s.push_str(&format!("# v_file={v}\n"));
            }
            s.push_str("index,sigma,residual\n");
            for (i, (sig, res)) in doc
                .singular_values
                .iter()
                .zip(&doc.residuals)
                .enumerate()
            {
                s.push_str(&format!("{},{},{}\n", i + 1, fmt17(*sig), fmt17(*res)));
            }
            Ok(s)
        }
    }
}

/// Reads a result document back, accepting either format (sniffed from the
/// content).
pub fn read_result(path: impl AsRef<Path>) -> Result<ResultDocument, SvdsError> {
    let mut contents = String::new();
    File::open(path.as_ref())?.read_to_string(&mut contents)?;
    let first = contents.trim_start().chars().next();
    if first == Some('{') {
        serde_json::from_str(&contents)
            .map_err(|e| parse_err(e.line(), format!("invalid JSON document: {e}")))
    } else {
        parse_csv_document(&contents)
    }
}

fn parse_csv_document(contents: &str) -> Result<ResultDocument, SvdsError> {
    use std::collections::HashMap;
    let mut meta: HashMap<String, String> = HashMap::new();
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    let mut saw_header = false;
    for (idx, line) in contents.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            for pair in rest.split_whitespace() {
                if let Some((key, value)) = pair.split_once('=') {
                    meta.insert(key.to_string(), value.to_string());
                }
            }
            continue;
        }
        if !saw_header {
            if trimmed != "index,sigma,residual" {
                return Err(parse_err(line_no, "expected header 'index,sigma,residual'"));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(line_no, "expected 3 comma-separated fields"));
        }
        let idx = fields[0]
            .parse::<usize>()
            .map_err(|_| parse_err(line_no, "cannot parse index"))?;
        let sig = fields[1]
            .parse::<f64>()
            .map_err(|_| parse_err(line_no, "cannot parse sigma"))?;
        let res = fields[2]
            .parse::<f64>()
            .map_err(|_| parse_err(line_no, "cannot parse residual"))?;
        rows.push((idx, sig, res));
    }
    if !saw_header {
        return Err(parse_err(1, "missing CSV header"));
    }
    rows.sort_by_key(|r| r.0);

    let get = |key: &str| -> Result<&String, SvdsError> {
        meta.get(key)
            .ok_or_else(|| parse_err(1, format!("missing metadata field '{key}'")))
    };
    let parse_usize = |key: &str| -> Result<usize, SvdsError> {
        get(key)?
            .parse()
            .map_err(|_| parse_err(1, format!("cannot parse metadata field '{key}'")))
    };
    let parse_f64 = |key: &str| -> Result<f64, SvdsError> {
        get(key)?
            .parse()
            .map_err(|_| parse_err(1, format!("cannot parse metadata field '{key}'")))
    };
    let subspace = match get("subspace")?.as_str() {
        "none" => None,
        other => Some(
            other
                .parse()
                .map_err(|_| parse_err(1, "cannot parse metadata field 'subspace'"))?,
        ),
    };
    Ok(ResultDocument {
        matrix_name: get("matrix_name")?.clone(),
        m: parse_usize("m")?,
        n: parse_usize("n")?,
        nnz: parse_usize("nnz")?,
        options: SvdsOptions {
            k: parse_usize("k")?,
            tol: parse_f64("tol")?,
            subspace,
            restarts: parse_usize("restarts_cap")?,
            seed: parse_usize("seed")? as u64,
            threads: parse_usize("opt_threads")?,
        },
        singular_values: rows.iter().map(|r| r.1).collect(),
        residuals: rows.iter().map(|r| r.2).collect(),
        restarts: parse_usize("restarts")?,
        converged: get("converged")? == "true",
        matvecs: parse_usize("matvecs")?,
        wall_time_seconds: parse_f64("wall_time_seconds")?,
        threads: parse_usize("threads")?,
        u_file: meta.get("u_file").cloned(),
        v_file: meta.get("v_file").cloned(),
    })
}

/// Writes through a temp file in the destination directory and renames into
/// place, so failures cannot leave partial output.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), SvdsError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path).map_err(|e| SvdsError::Io(e.error))?;
    Ok(())
}
