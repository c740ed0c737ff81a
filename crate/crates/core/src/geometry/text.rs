//! Plain-text transform records:
//!
//! ```text
//! affine a11 a12 tx a21 a22 ty
//! tps d1x d1y ... d9x d9y
//! cascade
//! affine ...
//! tps ...
//! ```
//!
//! Values print in Rust's shortest round-trip form, so parsing recovers the
//! exact bits.

use super::{AffineParams, GeometricTransform, TpsParams};
use crate::error::FormatError;

fn affine_line(a: &AffineParams) -> String {
    let v = a.to_array();
    format!("affine {} {} {} {} {} {}", v[0], v[1], v[2], v[3], v[4], v[5])
}

fn tps_line(t: &TpsParams) -> String {
    let mut s = String::from("tps");
    for v in t.flat() {
        s.push(' ');
        s.push_str(&v.to_string());
    }
    s
}

pub(super) fn format_transform(t: &GeometricTransform) -> String {
    match t {
        GeometricTransform::Affine(a) => affine_line(a) + "\n",
        GeometricTransform::Tps(p) => tps_line(p) + "\n",
        GeometricTransform::Cascade(a, p) => {
            format!("cascade\n{}\n{}\n", affine_line(a), tps_line(p))
        }
    }
}

fn numbers(line: usize, rest: &[&str], want: usize) -> Result<Vec<f64>, FormatError> {
    if rest.len() != want {
        return Err(FormatError::Text {
            line,
            detail: format!("expected {want} values, found {}", rest.len()),
        });
    }
    rest.iter()
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| FormatError::Text {
                    line,
                    detail: format!("not a finite number: {s:?}"),
                })
        })
        .collect()
}

// Short-lived parse result; boxing the spline would buy nothing.
#[allow(clippy::large_enum_variant)]
enum Record {
    Affine(AffineParams),
    Tps(TpsParams),
    Cascade,
}

fn parse_line(line: usize, text: &str) -> Result<Record, FormatError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    match tokens.split_first() {
        Some((&"affine", rest)) => {
            let v = numbers(line, rest, 6)?;
            Ok(Record::Affine(AffineParams::from_array([
                v[0], v[1], v[2], v[3], v[4], v[5],
            ])))
        }
        Some((&"tps", rest)) => {
            let v = numbers(line, rest, 18)?;
            Ok(Record::Tps(TpsParams::from_flat(&v).expect("18 values")))
        }
        Some((&"cascade", [])) => Ok(Record::Cascade),
        Some((kind, _)) => Err(FormatError::Text {
            line,
            detail: format!("unknown record {kind:?}"),
        }),
        None => Err(FormatError::Text {
            line,
            detail: "empty record".into(),
        }),
    }
}

pub(super) fn parse_transform(s: &str) -> Result<GeometricTransform, FormatError> {
    let lines: Vec<(usize, &str)> = s
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let Some(&(first_no, first)) = lines.first() else {
        return Err(FormatError::Text {
            line: 1,
            detail: "no transform record".into(),
        });
    };
    let (t, used) = match parse_line(first_no, first)? {
        Record::Affine(a) => (GeometricTransform::Affine(a), 1),
        Record::Tps(p) => (GeometricTransform::Tps(p), 1),
        Record::Cascade => {
            let get = |k: usize| {
                lines.get(k).copied().ok_or(FormatError::Text {
                    line: first_no + k,
                    detail: "cascade needs an affine and a tps line".into(),
                })
            };
            let (la, ta) = get(1)?;
            let (lt, tt) = get(2)?;
            match (parse_line(la, ta)?, parse_line(lt, tt)?) {
                (Record::Affine(a), Record::Tps(p)) => (GeometricTransform::Cascade(a, p), 3),
                _ => {
                    return Err(FormatError::Text {
                        line: la,
                        detail: "cascade needs an affine line followed by a tps line".into(),
                    })
                }
            }
        }
    };
    if let Some(&(line, _)) = lines.get(used) {
        return Err(FormatError::Text {
            line,
            detail: "trailing content after transform".into(),
        });
    }
    Ok(t)
}
