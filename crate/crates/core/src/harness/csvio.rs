//! Physical data as comma-separated text with a header row.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::PhysicalData;

/// Loaded data and the number of skipped malformed rows.
#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub data: PhysicalData,
    pub skipped: usize,
}

/// Reads the named input and response columns. Rows with a missing or
/// non-numeric field are skipped and counted.
pub fn load_csv(path: &Path, x_columns: &[String], y_column: &str) -> Result<CsvLoad> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Ingestion(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, x_columns, y_column)
}

pub fn read_csv(reader: impl std::io::Read, x_columns: &[String], y_column: &str) -> Result<CsvLoad> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingestion(format!("missing column `{name}`")))
    };
    let x_idx: Vec<usize> = x_columns.iter().map(|c| column(c)).collect::<Result<_>>()?;
    let y_idx = column(y_column)?;

    let d = x_idx.len();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut skipped = 0;
    for record in rdr.records() {
        let Ok(record) = record else {
            skipped += 1;
            continue;
        };
        let field = |i: usize| record.get(i).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite());
        let row: Option<Vec<f64>> = x_idx.iter().map(|&i| field(i)).collect();
        match (row, field(y_idx)) {
            (Some(row), Some(v)) => {
                x.extend(row);
                y.push(v);
            }
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} malformed rows");
    }
    if y.is_empty() {
        return Err(Error::Ingestion("no valid rows".into()));
    }
    Ok(CsvLoad {
        data: PhysicalData::new(d, x, y)?,
        skipped,
    })
}

/// Writes data with 17 significant digits, enough to read back bit-equal.
pub fn write_csv(path: &Path, data: &PhysicalData, x_columns: &[String], y_column: &str) -> Result<()> {
    if x_columns.len() != data.d() {
        return Err(Error::Dimension {
            what: "column names",
            expected: data.d(),
            got: x_columns.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = x_columns.iter().map(String::as_str).collect();
    header.push(y_column);
    w.write_record(&header)?;
    for (x, y) in data.rows() {
        let mut rec: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
        rec.push(format!("{y:.16e}"));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
