//! CSV ingestion: one experiment row per line, optional single header
//! line, optional final response column tagged `y`.

use std::fmt;
use std::path::Path;

use voldesign::nalgebra::DVector;
use voldesign::DesignMatrix;

#[derive(Debug)]
pub enum LoadError {
    Io(std::io::Error),
    Csv(csv::Error),
    /// A value failed to parse as a number (1-based line and column).
    Parse {
        line: u64,
        col: usize,
        value: String,
    },
    RaggedRows {
        line: u64,
        expected: usize,
        got: usize,
    },
    NonFinite {
        line: u64,
        col: usize,
    },
    Empty,
    Shape(voldesign::Error),
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "cannot read input: {e}"),
            Self::Csv(e) => write!(f, "malformed CSV: {e}"),
            Self::Parse { line, col, value } => {
                write!(
                    f,
                    "line {line}, column {col}: cannot parse {value:?} as a number"
                )
            }
            Self::RaggedRows {
                line,
                expected,
                got,
            } => write!(
                f,
                "line {line}: expected {expected} fields, got {got} (ragged rows)"
            ),
            Self::NonFinite { line, col } => {
                write!(f, "line {line}, column {col}: non-finite entry")
            }
            Self::Empty => write!(f, "input contains no data rows"),
            Self::Shape(e) => write!(f, "invalid design matrix: {e}"),
        }
    }
}

impl std::error::Error for LoadError {}

#[derive(Debug)]
pub struct LoadedMatrix {
    pub matrix: DesignMatrix,
    pub response: Option<DVector<f64>>,
}

/// Parses a CSV design matrix. A first line whose fields do not all parse
/// as numbers is treated as a header; a header whose final column is named
/// `y` (case-insensitive) marks the response column.
pub fn load_matrix(path: &Path) -> Result<LoadedMatrix, LoadError> {
    let raw = std::fs::read(path).map_err(LoadError::Io)?;
    // Strip a UTF-8 BOM so the first header cell parses cleanly.
    let raw = raw.strip_prefix(b"\xef\xbb\xbf").unwrap_or(&raw);

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(raw);

    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;

    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(LoadError::Csv)?;
        let line = idx as u64 + 1;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if idx == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            header = Some(record.iter().map(str::to_string).collect());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(LoadError::RaggedRows {
                line,
                expected,
                got: record.len(),
            });
        }
        let mut row = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| LoadError::Parse {
                line,
                col: col + 1,
                value: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(LoadError::NonFinite { line, col: col + 1 });
            }
            row.push(v);
        }
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(LoadError::Empty);
    }
    if let Some(h) = &header {
        let expected = rows[0].len();
        if h.len() != expected {
            return Err(LoadError::RaggedRows {
                line: 1,
                expected,
                got: h.len(),
            });
        }
    }

    let has_response = header
        .as_ref()
        .and_then(|h| h.last())
        .is_some_and(|name| name.eq_ignore_ascii_case("y"));

    let (matrix_rows, response) = if has_response {
        let d = rows[0].len() - 1;
        if d == 0 {
            return Err(LoadError::Empty);
        }
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r[d]));
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| r[..d].to_vec()).collect();
        (xs, Some(y))
    } else {
        (rows, None)
    };

    let matrix = DesignMatrix::from_rows(&matrix_rows).map_err(LoadError::Shape)?;
    Ok(LoadedMatrix { matrix, response })
}
