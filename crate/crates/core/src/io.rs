//! Delimited tables: comma separated, mandatory header, LF line endings,
//! numbers printed with 12 significant digits.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::moment::PosteriorVariancePoint;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// `%.12g`: shortest of fixed and scientific notation, trailing zeros
/// removed.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..SIGNIFICANT_DIGITS as i32).contains(&exp) {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa.to_string());
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Rounds through the printed representation.
pub fn quantize(v: f64) -> f64 {
    fmt_num(v).parse().unwrap_or(v)
}

pub fn write_table<I>(path: &Path, header: &[&str], rows: I) -> Result<usize>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    let mut count = 0;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        writeln!(w, "{}", row.join(","))?;
        count += 1;
    }
    w.flush()?;
    Ok(count)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Reads a numeric table; blank lines are skipped.
pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path)?;
    let shown = path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: shown.clone(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header row".into()))?;
    let header: Vec<String> = head.split(',').map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(parse_err(
                i + 1,
                format!("expected {} fields, found {}", header.len(), cells.len()),
            ));
        }
        let row = cells
            .iter()
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(i + 1, format!("not a number: `{}`", c.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn require_header(table: &Table, path: &Path, want: &[&str]) -> Result<()> {
    if table.header != want {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("expected header `{}`", want.join(",")),
        });
    }
    Ok(())
}

pub const VARIANCE_HEADER: [&str; 5] = ["q", "n", "i", "j", "sigma"];

/// One row per upper-triangle element, indices one-based.
pub fn write_variance_points(path: &Path, points: &[PosteriorVariancePoint]) -> Result<usize> {
    let rows = points.iter().flat_map(|p| {
        let k = p.sigma.nrows();
        (0..k).flat_map(move |i| {
            (i..k).map(move |j| {
                vec![
                    (p.q + 1).to_string(),
                    p.n.to_string(),
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    fmt_num(p.sigma[(i, j)]),
                ]
            })
        })
    });
    write_table(path, &VARIANCE_HEADER, rows)
}

fn as_index(v: f64, path: &Path, what: &str, min: usize) -> Result<usize> {
    if v.fract() != 0.0 || v < min as f64 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: format!("{what} must be an integer ≥ {min}, got {v}"),
        });
    }
    Ok(v as usize)
}

/// Reads variance points back; every point needs all `dim(dim+1)/2`
/// elements.
pub fn read_variance_points(path: &Path, dim: usize) -> Result<Vec<PosteriorVariancePoint>> {
    let table = read_table(path)?;
    require_header(&table, path, &VARIANCE_HEADER)?;
    let mut points: Vec<(PosteriorVariancePoint, usize)> = Vec::new();
    for row in &table.rows {
        let q = as_index(row[0], path, "q", 1)? - 1;
        let n = as_index(row[1], path, "n", 0)?;
        let (i, j) = (
            as_index(row[2], path, "i", 1)? - 1,
            as_index(row[3], path, "j", 1)? - 1,
        );
        if i >= dim || j >= dim {
            return Err(Error::DimensionMismatch {
                what: "variance point element index",
                expected: dim,
                found: i.max(j) + 1,
            });
        }
        let pos = match points.iter().position(|(p, _)| p.q == q) {
            Some(pos) => pos,
            None => {
                points.push((
                    PosteriorVariancePoint {
                        q,
                        n,
                        sigma: DMatrix::from_element(dim, dim, f64::NAN),
                        seed: 0,
                    },
                    0,
                ));
                points.len() - 1
            }
        };
        let (p, filled) = &mut points[pos];
        if p.n != n {
            return Err(Error::invalid(format!(
                "point {} lists two sample sizes",
                q + 1
            )));
        }
        if p.sigma[(i, j)].is_nan() {
            *filled += 1;
        }
        p.sigma[(i, j)] = row[4];
        p.sigma[(j, i)] = row[4];
    }
    let need = dim * (dim + 1) / 2;
    if let Some((p, _)) = points.iter().find(|(_, f)| *f != need) {
        return Err(Error::invalid(format!(
            "variance point {} is missing covariance elements",
            p.q + 1
        )));
    }
    if points.is_empty() {
        return Err(Error::invalid("variance point file has no rows"));
    }
    let mut out: Vec<PosteriorVariancePoint> = points.into_iter().map(|(p, _)| p).collect();
    out.sort_by_key(|p| p.q);
    Ok(out)
}

/// Fitted conditional INB, one column per comparator arm.
pub fn write_fitted_values(path: &Path, fitted: &DMatrix<f64>, labels: &[String]) -> Result<usize> {
    let header: Vec<&str> = labels.iter().map(String::as_str).collect();
    let rows = fitted
        .row_iter()
        .map(|r| r.iter().map(|&v| fmt_num(v)).collect::<Vec<_>>());
    write_table(path, &header, rows)
}

pub fn read_fitted_values(path: &Path, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let table = read_table(path)?;
    if table.header.len() != cols {
        return Err(Error::DimensionMismatch {
            what: "fitted value columns",
            expected: cols,
            found: table.header.len(),
        });
    }
    if table.rows.len() != rows {
        return Err(Error::DimensionMismatch {
            what: "fitted value rows",
            expected: rows,
            found: table.rows.len(),
        });
    }
    Ok(DMatrix::from_fn(rows, cols, |r, c| table.rows[r][c]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(-2.5), "-2.5");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(4378.0), "4378");
        assert_eq!(fmt_num(123456789012345.0), "1.23456789012e+14");
        assert_eq!(fmt_num(1.5e-7), "1.5e-07");
        assert_eq!(fmt_num(0.0001234), "0.0001234");
        assert_eq!(fmt_num(f64::NAN), "nan");
        assert_eq!(
            quantize(quantize(std::f64::consts::PI)),
            quantize(std::f64::consts::PI)
        );
    }

    #[test]
    fn variance_points_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        let points = vec![
            PosteriorVariancePoint {
                q: 0,
                n: 10,
                sigma: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.25]),
                seed: 0,
            },
            PosteriorVariancePoint {
                q: 1,
                n: 40,
                sigma: DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 0.75]),
                seed: 0,
            },
        ];
        assert_eq!(write_variance_points(&path, &points).unwrap(), 6);
        let back = read_variance_points(&path, 2).unwrap();
        assert_eq!(back, points);
        assert!(read_variance_points(&path, 1).is_err());
        assert!(read_variance_points(&path, 3).is_err());
    }

    #[test]
    fn malformed_tables_report_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "q,n,i,j,sigma\n1,10,1,1,0.5\n2,20,1,x,0.5\n").unwrap();
        match read_variance_points(&path, 1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_variance_points(&path, 1).is_err());
        assert!(read_fitted_values(&path, 1, 2).is_ok());
        assert!(read_fitted_values(&path, 2, 2).is_err());
    }
}
