use std::path::Path;

use super::ExperimentError;

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a UTF-8 CSV with LF line endings and a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), ExperimentError> {
    let io = |e: csv::Error| ExperimentError::Run(format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| ExperimentError::Run(format!("{}: {e}", path.display())))
}

/// Rows of a CSV as column-name lookups; fails naming the first missing
/// required column.
pub(crate) struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
    pub path: String,
}

impl Table {
    pub fn read(path: &Path, required: &[&str]) -> Result<Self, ExperimentError> {
        let err = |m: String| ExperimentError::Analysis(format!("{}: {m}", path.display()));
        let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        let headers: Vec<String> = r.headers().map_err(|e| err(e.to_string()))?.iter().map(String::from).collect();
        for col in required {
            if !headers.iter().any(|h| h == col) {
                return Err(err(format!("missing column {col:?}")));
            }
        }
        let rows = r.records().collect::<Result<Vec<_>, _>>().map_err(|e| err(e.to_string()))?;
        Ok(Self {
            headers,
            rows,
            path: path.display().to_string(),
        })
    }

    fn col(&self, name: &str) -> usize {
        self.headers.iter().position(|h| h == name).expect("checked in read")
    }

    pub fn str(&self, row: usize, name: &str) -> String {
        self.rows[row].get(self.col(name)).unwrap_or_default().to_string()
    }

    pub fn parse<T: std::str::FromStr>(&self, row: usize, name: &str) -> Result<T, ExperimentError> {
        let raw = self.str(row, name);
        raw.parse().map_err(|_| {
            ExperimentError::Analysis(format!("{}: row {}: cannot parse {name}={raw:?}", self.path, row + 1))
        })
    }
}
