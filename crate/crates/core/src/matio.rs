//! Plain-text matrix files: a header line `rows cols` followed by the entries
//! in row-major order separated by arbitrary whitespace.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("missing `rows cols` header".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(Error::Parse(format!("bad header `{header}`")));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| Error::Parse(format!("bad dimension `{s}`: {e}")))
    };
    let rows = parse_dim(dims[0])?;
    let cols = parse_dim(dims[1])?;
    let mut values = Vec::with_capacity(rows * cols);
    for line in lines {
        for tok in line.split_whitespace() {
            let v = tok
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad value `{tok}`: {e}")))?;
            values.push(v);
        }
    }
    if values.len() != rows * cols {
        return Err(Error::Parse(format!(
            "expected {} values for a {rows}x{cols} matrix, found {}",
            rows * cols,
            values.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Shortest round-trip formatting, so reading back is bit-exact.
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:?}", m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    parse_matrix(&fs::read_to_string(path)?)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(format_matrix(m).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_documented_layout() {
        let m = parse_matrix("2 3\n1 2 3\n4 5 6\n").unwrap();
        assert_eq!(m[(1, 0)], 4.0);
        assert_eq!(m[(0, 2)], 3.0);
        let m = parse_matrix("2 2\n1 2 3\n4\n").unwrap();
        assert_eq!(m[(1, 1)], 4.0);
    }

    #[test]
    fn rejects_wrong_counts() {
        assert!(parse_matrix("2 2\n1 2 3\n").is_err());
        assert!(parse_matrix("").is_err());
        assert!(parse_matrix("2\n1 2").is_err());
        assert!(parse_matrix("1 1\nx").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(rows in 1usize..5, cols in 1usize..5, seed in proptest::collection::vec(-1e6f64..1e6, 25)) {
            let m = DMatrix::from_fn(rows, cols, |r, c| seed[r * 5 + c] / 7.0);
            let back = parse_matrix(&format_matrix(&m)).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
