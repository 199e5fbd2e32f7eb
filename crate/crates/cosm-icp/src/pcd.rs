//! ASCII PCD (v0.7) reading and writing.
//!
//! Only `DATA ascii` is supported; binary modes fail with a clear error.
//! Per-point fields beyond x/y/z (intensity, rgb, ...) are parsed and
//! discarded. Decimal parsing is locale-independent ('.' only) and accepts
//! scientific notation.

use crate::geometry::{Point3, PointCloud};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PcdError {
    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("line {line}: unsupported encoding '{mode}' (only 'ascii' is supported)")]
    UnsupportedEncoding { line: usize, mode: String },
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn header_err(line: usize, reason: impl Into<String>) -> PcdError {
    PcdError::MalformedHeader {
        line,
        reason: reason.into(),
    }
}

fn record_err(line: usize, reason: impl Into<String>) -> PcdError {
    PcdError::MalformedRecord {
        line,
        reason: reason.into(),
    }
}

/// Parsed PCD header. After a successful parse the data mode is always ascii.
#[derive(Debug, Clone, PartialEq)]
pub struct PcdHeader {
    pub version: String,
    pub fields: Vec<String>,
    pub sizes: Vec<usize>,
    pub types: Vec<char>,
    pub counts: Vec<usize>,
    pub width: usize,
    pub height: usize,
    pub viewpoint: [f64; 7],
    pub points: usize,
}

impl PcdHeader {
    /// Total whitespace-separated tokens per record.
    fn record_arity(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Token offsets of the x, y, z columns within a record.
    fn xyz_columns(&self) -> Option<[usize; 3]> {
        let mut cols = [usize::MAX; 3];
        let mut offset = 0;
        for (i, name) in self.fields.iter().enumerate() {
            let slot = match name.as_str() {
                "x" => Some(0),
                "y" => Some(1),
                "z" => Some(2),
                _ => None,
            };
            if let Some(s) = slot {
                cols[s] = offset;
            }
            offset += self.counts[i];
        }
        if cols.contains(&usize::MAX) {
            None
        } else {
            Some(cols)
        }
    }
}

const HEADER_KEYS: [&str; 10] = [
    "VERSION",
    "FIELDS",
    "SIZE",
    "TYPE",
    "COUNT",
    "WIDTH",
    "HEIGHT",
    "VIEWPOINT",
    "POINTS",
    "DATA",
];

/// Parses a complete ASCII PCD document into its header and cloud.
///
/// Exactly `POINTS` records are read; fewer or extra records are an error,
/// and every error names the offending 1-based line number.
pub fn parse_pcd(text: &str) -> Result<(PcdHeader, PointCloud), PcdError> {
    let mut version: Option<String> = None;
    let mut fields: Option<Vec<String>> = None;
    let mut sizes: Option<Vec<usize>> = None;
    let mut types: Option<Vec<char>> = None;
    let mut counts: Option<Vec<usize>> = None;
    let mut width: Option<usize> = None;
    let mut height: Option<usize> = None;
    let mut viewpoint: Option<[f64; 7]> = None;
    let mut points: Option<usize> = None;

    let mut lines = text.lines().enumerate();
    let data_line = loop {
        let (idx, raw) = match lines.next() {
            Some(l) => l,
            None => return Err(header_err(text.lines().count(), "missing DATA declaration")),
        };
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        if !HEADER_KEYS.contains(&key) {
            return Err(header_err(line_no, format!("unknown header key '{key}'")));
        }
        let duplicate = |name: &str| header_err(line_no, format!("duplicate header key '{name}'"));
        match key {
            "VERSION" => {
                if version.replace(rest.to_string()).is_some() {
                    return Err(duplicate(key));
                }
            }
            "FIELDS" => {
                let names: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
                if names.is_empty() {
                    return Err(header_err(line_no, "FIELDS lists no field names"));
                }
                if fields.replace(names).is_some() {
                    return Err(duplicate(key));
                }
            }
            "SIZE" => {
                let v = parse_int_list(rest, line_no, "SIZE")?;
                if sizes.replace(v).is_some() {
                    return Err(duplicate(key));
                }
            }
            "TYPE" => {
                let v: Vec<char> = rest
                    .split_whitespace()
                    .map(|t| {
                        if t.len() == 1 {
                            Ok(t.chars().next().unwrap().to_ascii_uppercase())
                        } else {
                            Err(header_err(line_no, format!("bad TYPE token '{t}'")))
                        }
                    })
                    .collect::<Result<_, _>>()?;
                if types.replace(v).is_some() {
                    return Err(duplicate(key));
                }
            }
            "COUNT" => {
                let v = parse_int_list(rest, line_no, "COUNT")?;
                if counts.replace(v).is_some() {
                    return Err(duplicate(key));
                }
            }
            "WIDTH" => {
                let v = parse_usize(rest, line_no, "WIDTH")?;
                if width.replace(v).is_some() {
                    return Err(duplicate(key));
                }
            }
            "HEIGHT" => {
                let v = parse_usize(rest, line_no, "HEIGHT")?;
                if height.replace(v).is_some() {
                    return Err(duplicate(key));
                }
            }
            "VIEWPOINT" => {
                let v: Vec<f64> = rest
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| header_err(line_no, format!("bad VIEWPOINT token '{t}'")))
                    })
                    .collect::<Result<_, _>>()?;
                let arr: [f64; 7] = v
                    .try_into()
                    .map_err(|_| header_err(line_no, "VIEWPOINT needs 7 values"))?;
                if viewpoint.replace(arr).is_some() {
                    return Err(duplicate(key));
                }
            }
            "POINTS" => {
                let v = parse_usize(rest, line_no, "POINTS")?;
                if points.replace(v).is_some() {
                    return Err(duplicate(key));
                }
            }
            "DATA" => {
                match rest {
                    "ascii" => {}
                    "binary" | "binary_compressed" => {
                        return Err(PcdError::UnsupportedEncoding {
                            line: line_no,
                            mode: rest.to_string(),
                        })
                    }
                    other => {
                        return Err(header_err(line_no, format!("unknown data mode '{other}'")))
                    }
                }
                break line_no;
            }
            _ => unreachable!(),
        }
    };

    let missing = |name: &str| header_err(data_line, format!("missing header key '{name}'"));
    let version = version.ok_or_else(|| missing("VERSION"))?;
    let fields = fields.ok_or_else(|| missing("FIELDS"))?;
    let sizes = sizes.ok_or_else(|| missing("SIZE"))?;
    let types = types.ok_or_else(|| missing("TYPE"))?;
    let counts = counts.unwrap_or_else(|| vec![1; fields.len()]);
    let width = width.ok_or_else(|| missing("WIDTH"))?;
    let height = height.ok_or_else(|| missing("HEIGHT"))?;
    let viewpoint = viewpoint.unwrap_or([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    let points = points.ok_or_else(|| missing("POINTS"))?;

    if sizes.len() != fields.len() || types.len() != fields.len() || counts.len() != fields.len() {
        return Err(header_err(
            data_line,
            "SIZE/TYPE/COUNT lengths do not match FIELDS",
        ));
    }
    if counts.contains(&0) {
        return Err(header_err(data_line, "COUNT entries must be positive"));
    }
    if width.checked_mul(height) != Some(points) {
        return Err(header_err(
            data_line,
            format!("WIDTH x HEIGHT = {width} x {height} does not equal POINTS = {points}"),
        ));
    }
    for coord in ["x", "y", "z"] {
        let idx = fields
            .iter()
            .position(|f| f == coord)
            .ok_or_else(|| header_err(data_line, format!("missing coordinate field '{coord}'")))?;
        if types[idx] != 'F' || !(sizes[idx] == 4 || sizes[idx] == 8) {
            return Err(header_err(
                data_line,
                format!("field '{coord}' must be a 4- or 8-byte float"),
            ));
        }
        if counts[idx] != 1 {
            return Err(header_err(
                data_line,
                format!("field '{coord}' must have COUNT 1"),
            ));
        }
    }

    let header = PcdHeader {
        version,
        fields,
        sizes,
        types,
        counts,
        width,
        height,
        viewpoint,
        points,
    };

    let arity = header.record_arity();
    let cols = header.xyz_columns().expect("xyz presence checked above");
    let mut cloud = PointCloud::default();
    let mut parsed = 0usize;
    let mut last_line = data_line;
    for (idx, raw) in lines {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if parsed == header.points {
            return Err(record_err(
                line_no,
                format!("unexpected data past the declared {} records", header.points),
            ));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != arity {
            return Err(record_err(
                line_no,
                format!("expected {arity} values, found {}", tokens.len()),
            ));
        }
        let mut coord = [0.0f64; 3];
        for (slot, &col) in cols.iter().enumerate() {
            let token = tokens[col];
            let value: f64 = token
                .parse()
                .map_err(|_| record_err(line_no, format!("non-numeric value '{token}'")))?;
            if !value.is_finite() {
                return Err(record_err(
                    line_no,
                    format!("non-finite coordinate '{token}'"),
                ));
            }
            coord[slot] = value;
        }
        cloud.push(Point3::new(coord[0], coord[1], coord[2]));
        parsed += 1;
    }
    if parsed != header.points {
        return Err(record_err(
            last_line + 1,
            format!("expected {} records, found {parsed}", header.points),
        ));
    }
    Ok((header, cloud))
}

/// Serializes a cloud as ASCII PCD v0.7 with FIELDS x y z.
///
/// Values are printed with 9 significant digits, which round-trips through
/// [`parse_pcd`] within 1e-6 per coordinate for data in sane ranges.
/// Panics if the cloud is empty; callers guard that precondition.
pub fn write_pcd(cloud: &PointCloud) -> String {
    assert!(!cloud.is_empty(), "cannot write an empty cloud");
    let n = cloud.len();
    let mut out = String::with_capacity(128 + 48 * n);
    out.push_str("VERSION 0.7\n");
    out.push_str("FIELDS x y z\n");
    out.push_str("SIZE 4 4 4\n");
    out.push_str("TYPE F F F\n");
    out.push_str("COUNT 1 1 1\n");
    let _ = writeln!(out, "WIDTH {n}");
    out.push_str("HEIGHT 1\n");
    out.push_str("VIEWPOINT 0 0 0 1 0 0 0\n");
    let _ = writeln!(out, "POINTS {n}");
    out.push_str("DATA ascii\n");
    for p in cloud {
        let _ = writeln!(out, "{:.8e} {:.8e} {:.8e}", p.x, p.y, p.z);
    }
    out
}

pub fn read_pcd_file(path: impl AsRef<Path>) -> Result<(PcdHeader, PointCloud), PcdError> {
    let text = std::fs::read_to_string(path)?;
    parse_pcd(&text)
}

pub fn write_pcd_file(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<(), PcdError> {
    std::fs::write(path, write_pcd(cloud))?;
    Ok(())
}

fn parse_usize(token: &str, line: usize, key: &str) -> Result<usize, PcdError> {
    token
        .parse()
        .map_err(|_| header_err(line, format!("bad {key} value '{token}'")))
}

fn parse_int_list(rest: &str, line: usize, key: &str) -> Result<Vec<usize>, PcdError> {
    rest.split_whitespace()
        .map(|t| parse_usize(t, line, key))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn minimal(points: &str, n: usize) -> String {
        format!(
            "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\n\
             WIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA ascii\n{points}"
        )
    }

    #[test]
    fn parses_single_point() {
        let (header, cloud) = parse_pcd(&minimal("0 0 0\n", 1)).unwrap();
        assert_eq!(header.points, 1);
        assert_eq!(cloud.points(), &[Point3::new(0.0, 0.0, 0.0)]);
    }

    #[test]
    fn parses_two_points_in_order() {
        let (_, cloud) = parse_pcd(&minimal("1 2 3\n4 5 6\n", 2)).unwrap();
        assert_eq!(
            cloud.points(),
            &[Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)]
        );
    }

    #[test]
    fn rejects_binary_data_mode() {
        let text = minimal("", 0).replace("DATA ascii", "DATA binary");
        match parse_pcd(&text) {
            Err(PcdError::UnsupportedEncoding { mode, line }) => {
                assert_eq!(mode, "binary");
                assert_eq!(line, 10);
            }
            other => panic!("expected UnsupportedEncoding, got {other:?}"),
        }
    }

    #[test]
    fn rejects_count_mismatch() {
        let err = parse_pcd(&minimal("0 0 0\n", 2)).unwrap_err();
        assert!(matches!(err, PcdError::MalformedRecord { .. }), "{err}");
        let err = parse_pcd(&minimal("0 0 0\n1 1 1\n", 1)).unwrap_err();
        assert!(matches!(err, PcdError::MalformedRecord { line: 12, .. }), "{err}");
    }

    #[test]
    fn rejects_width_height_points_disagreement() {
        let text = minimal("0 0 0\n", 1).replace("WIDTH 1", "WIDTH 2");
        let err = parse_pcd(&text).unwrap_err();
        assert!(matches!(err, PcdError::MalformedHeader { .. }), "{err}");
    }

    #[test]
    fn rejects_duplicate_and_unknown_keys() {
        let text = format!("VERSION 0.7\n{}", minimal("0 0 0\n", 1));
        assert!(matches!(
            parse_pcd(&text),
            Err(PcdError::MalformedHeader { line: 2, .. })
        ));
        let text = minimal("0 0 0\n", 1).replace("VIEWPOINT 0 0 0 1 0 0 0", "BOGUS 1");
        assert!(matches!(
            parse_pcd(&text),
            Err(PcdError::MalformedHeader { line: 8, .. })
        ));
    }

    #[test]
    fn rejects_non_finite_and_non_numeric_records() {
        let err = parse_pcd(&minimal("0 nan 0\n", 1)).unwrap_err();
        assert!(matches!(err, PcdError::MalformedRecord { line: 11, .. }), "{err}");
        let err = parse_pcd(&minimal("0 x 0\n", 1)).unwrap_err();
        assert!(matches!(err, PcdError::MalformedRecord { line: 11, .. }), "{err}");
    }

    #[test]
    fn extra_fields_are_parsed_and_dropped() {
        let text = "VERSION 0.7\nFIELDS x y z intensity\nSIZE 4 4 4 4\nTYPE F F F F\n\
                    COUNT 1 1 1 1\nWIDTH 1\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 1\n\
                    DATA ascii\n1 2 3 99\n";
        let (_, cloud) = parse_pcd(text).unwrap();
        assert_eq!(cloud.points(), &[Point3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn accepts_scientific_notation_and_comments() {
        let text = format!("# comment\n{}", minimal("1e-3 2.5E2 -3.25e+1\n", 1));
        let (_, cloud) = parse_pcd(&text).unwrap();
        assert_eq!(cloud.points(), &[Point3::new(1e-3, 250.0, -32.5)]);
    }

    #[test]
    fn writer_emits_exact_header_order() {
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0)]);
        let text = write_pcd(&cloud);
        let keys: Vec<&str> = text
            .lines()
            .take(10)
            .map(|l| l.split_whitespace().next().unwrap())
            .collect();
        assert_eq!(
            keys,
            ["VERSION", "FIELDS", "SIZE", "TYPE", "COUNT", "WIDTH", "HEIGHT", "VIEWPOINT",
             "POINTS", "DATA"]
        );
    }

    #[test]
    fn origin_round_trips() {
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0)]);
        let (_, reparsed) = parse_pcd(&write_pcd(&cloud)).unwrap();
        assert_eq!(reparsed, cloud);
    }

    proptest! {
        #[test]
        fn round_trip_within_tolerance(
            pts in proptest::collection::vec(
                (-100.0f64..100.0, -100.0f64..100.0, -100.0f64..100.0), 1..120)
        ) {
            let cloud = PointCloud::new(pts.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect());
            let (header, reparsed) = parse_pcd(&write_pcd(&cloud)).unwrap();
            prop_assert_eq!(header.points, cloud.len());
            prop_assert_eq!(reparsed.len(), cloud.len());
            for (a, b) in cloud.iter().zip(reparsed.iter()) {
                prop_assert!((a.x - b.x).abs() <= 1e-6);
                prop_assert!((a.y - b.y).abs() <= 1e-6);
                prop_assert!((a.z - b.z).abs() <= 1e-6);
            }
        }
    }
}
