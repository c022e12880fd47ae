use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::analysis::PlotSet;
use crate::error::{Error, Result};
use crate::model::PointCloud;

/// Reads a rectangular numeric CSV file into a cloud, one row per point.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool, delimiter: u8) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, has_header, delimiter)
}

pub fn parse_csv<R: Read>(input: R, has_header: bool, delimiter: u8) -> Result<PointCloud> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut names = None;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            column: 0,
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if has_header && names.is_none() {
            names = Some(record.iter().map(str::to_owned).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRows {
                line,
                expected,
                found: record.len(),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                column: c + 1,
                reason: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: c + 1,
                    reason: format!("non-finite value {field:?}"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    let d = width.unwrap_or(0);
    if rows == 0 || d == 0 {
        return Err(Error::InsufficientData("no numeric rows".into()));
    }
    let cloud = PointCloud::new(rows, d, data)?;
    match names {
        Some(n) => cloud.with_names(n),
        None => Ok(cloud),
    }
}

/// Two-column `x,y` CSV of a plot set with round-trip float formatting.
pub fn plot_set_csv(set: &PlotSet) -> String {
    let mut out = String::with_capacity(32 * set.len() + 4);
    out.push_str("x,y\n");
    for (x, y) in &set.pairs {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_plain_rows() {
        let c = parse_csv("1,2,3\n4,5,6\n".as_bytes(), false, b',').unwrap();
        assert_eq!((c.len(), c.dim()), (2, 3));
        assert_eq!(c.point(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn header_names_and_delimiter() {
        let c = parse_csv("a;b\n1.5;-2e-3\n".as_bytes(), true, b';').unwrap();
        assert_eq!(c.names().unwrap(), &["a".to_string(), "b".to_string()]);
        assert_eq!(c.point(0), &[1.5, -2e-3]);
    }

    #[test]
    fn reports_bad_cell_location() {
        match parse_csv("x,y\n1,2\n3,abc\n".as_bytes(), true, b',') {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reports_ragged_rows() {
        match parse_csv("1,2\n3\n".as_bytes(), false, b',') {
            Err(Error::RaggedRows { line, expected, found }) => assert_eq!((line, expected, found), (2, 2, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(parse_csv("".as_bytes(), false, b',').is_err());
        assert!(parse_csv("a,b\n".as_bytes(), true, b',').is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_csv("/nonexistent/file.csv", false, b','), Err(Error::Io { .. })));
    }
}
