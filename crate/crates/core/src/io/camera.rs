//! Camera matrices as whitespace-separated row-major floats.

use std::path::Path;

use nalgebra::{Matrix3, Matrix4};

use crate::error::{Error, Result};

fn parse_floats(text: &str, origin: &str, expected: usize) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(expected);
    let mut offset = 0usize;
    for token in text.split_whitespace() {
        // locate the token for error offsets
        let at = text[offset..].find(token).map_or(offset, |i| offset + i);
        offset = at + token.len();
        let v: f64 = token
            .parse()
            .map_err(|_| Error::parse(origin, at as u64, format!("`{token}` is not a number")))?;
        values.push(v);
    }
    if values.len() != expected {
        return Err(Error::parse(
            origin,
            text.len() as u64,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

pub fn parse_intrinsic(text: &str, origin: &str) -> Result<Matrix3<f64>> {
    Ok(Matrix3::from_row_slice(&parse_floats(text, origin, 9)?))
}

pub fn parse_extrinsic(text: &str, origin: &str) -> Result<Matrix4<f64>> {
    Ok(Matrix4::from_row_slice(&parse_floats(text, origin, 16)?))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_intrinsic(path: impl AsRef<Path>) -> Result<Matrix3<f64>> {
    let path = path.as_ref();
    parse_intrinsic(&read(path)?, &path.display().to_string())
}

pub fn read_extrinsic(path: impl AsRef<Path>) -> Result<Matrix4<f64>> {
    let path = path.as_ref();
    parse_extrinsic(&read(path)?, &path.display().to_string())
}

fn format_rows(values: impl Iterator<Item = f64>, cols: usize) -> String {
    let values: Vec<String> = values.map(|v| format!("{v:?}")).collect();
    values.chunks(cols).map(|row| row.join(" ") + "\n").collect()
}

pub fn format_intrinsic(m: &Matrix3<f64>) -> String {
    format_rows(m.transpose().iter().copied(), 3)
}

pub fn format_extrinsic(m: &Matrix4<f64>) -> String {
    format_rows(m.transpose().iter().copied(), 4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_round_trip() {
        let k = Matrix3::new(500.0, 0.0, 160.5, 0.0, 510.0, 120.25, 0.0, 0.0, 1.0);
        let text = format_intrinsic(&k);
        assert!(text.starts_with("500.0 0.0 160.5\n"));
        assert_eq!(parse_intrinsic(&text, "k").unwrap(), k);
        let mut e = Matrix4::identity();
        e[(0, 3)] = 0.1;
        e[(2, 3)] = -3.0;
        assert_eq!(parse_extrinsic(&format_extrinsic(&e), "e").unwrap(), e);
    }

    #[test]
    fn wrong_count_or_garbage() {
        assert!(parse_intrinsic("1 0 0 0 1 0 0 0", "k").is_err());
        let err = parse_intrinsic("1 0 0 0 x 0 0 0 1", "k.txt").unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 8),
            other => panic!("unexpected {other}"),
        }
    }
}
