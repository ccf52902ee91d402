//! IRIDAS/Resolve `.cube` 3D LUT text format.
//!
//! Recognised lines: `# comment`, `TITLE "..."`, `LUT_3D_SIZE n`,
//! `DOMAIN_MIN r g b`, `DOMAIN_MAX r g b` (`LUT_3D_INPUT_RANGE lo hi` is
//! accepted as a shorthand for both), and `n³` data lines with red varying
//! fastest. The writer always emits LF line endings and six decimals.

use std::fmt::Write as _;

use crate::error::{CubeErrorKind, Error, Result};
use crate::lut::{Lut3D, MAX_SIZE, MIN_SIZE};

fn err(line: usize, kind: CubeErrorKind) -> Error {
    Error::CubeParse { line, kind }
}

fn parse_f64(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| err(line, CubeErrorKind::NonNumeric(token.to_string())))?;
    if !v.is_finite() {
        return Err(err(line, CubeErrorKind::NonFinite));
    }
    Ok(v)
}

fn parse_triple(tokens: &[&str], line: usize) -> Result<[f64; 3]> {
    if tokens.len() != 3 {
        return Err(err(
            line,
            CubeErrorKind::WrongArity {
                expected: 3,
                found: tokens.len(),
            },
        ));
    }
    Ok([
        parse_f64(tokens[0], line)?,
        parse_f64(tokens[1], line)?,
        parse_f64(tokens[2], line)?,
    ])
}

fn is_keyword(token: &str) -> bool {
    token
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
}

/// Parses `.cube` text into a LUT. Errors carry 1-based line numbers.
pub fn parse_cube(bytes: &[u8]) -> Result<Lut3D> {
    let text = match std::str::from_utf8(bytes) {
        Ok(t) => t,
        Err(e) => {
            let line = bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count() + 1;
            return Err(err(line, CubeErrorKind::InvalidUtf8));
        }
    };

    let mut size: Option<usize> = None;
    let mut domain_min = [0.0; 3];
    let mut domain_max = [1.0; 3];
    let mut domain_line = 0;
    let mut entries: Vec<[f64; 3]> = Vec::new();
    let mut last_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        let head = tokens[0];

        if !is_keyword(head) {
            let Some(n) = size else {
                return Err(err(line, CubeErrorKind::MissingSize));
            };
            if entries.len() == n * n * n {
                return Err(err(
                    line,
                    CubeErrorKind::WrongDataCount {
                        expected: n * n * n,
                        found: n * n * n + 1,
                    },
                ));
            }
            entries.push(parse_triple(&tokens, line)?);
            continue;
        }

        if !entries.is_empty() {
            // keywords are header-only
            return Err(err(line, CubeErrorKind::UnknownKeyword(head.to_string())));
        }

        match head {
            "TITLE" => {
                let rest = trimmed["TITLE".len()..].trim();
                let quoted = rest.len() >= 2 && rest.starts_with('"') && rest.ends_with('"');
                if !quoted {
                    return Err(err(line, CubeErrorKind::BadTitle));
                }
            }
            "LUT_3D_SIZE" => {
                if size.is_some() {
                    return Err(err(line, CubeErrorKind::DuplicateSize));
                }
                if tokens.len() != 2 {
                    return Err(err(
                        line,
                        CubeErrorKind::WrongArity {
                            expected: 1,
                            found: tokens.len() - 1,
                        },
                    ));
                }
                let n: i64 = tokens[1]
                    .parse()
                    .map_err(|_| err(line, CubeErrorKind::NonNumeric(tokens[1].to_string())))?;
                if n < MIN_SIZE as i64 || n > MAX_SIZE as i64 {
                    return Err(err(line, CubeErrorKind::SizeOutOfRange(tokens[1].to_string())));
                }
                size = Some(n as usize);
            }
            "LUT_1D_SIZE" => return Err(err(line, CubeErrorKind::Unsupported1D)),
            "DOMAIN_MIN" => {
                domain_min = parse_triple(&tokens[1..], line)?;
                domain_line = line;
            }
            "DOMAIN_MAX" => {
                domain_max = parse_triple(&tokens[1..], line)?;
                domain_line = line;
            }
            "LUT_3D_INPUT_RANGE" => {
                if tokens.len() != 3 {
                    return Err(err(
                        line,
                        CubeErrorKind::WrongArity {
                            expected: 2,
                            found: tokens.len() - 1,
                        },
                    ));
                }
                let lo = parse_f64(tokens[1], line)?;
                let hi = parse_f64(tokens[2], line)?;
                domain_min = [lo; 3];
                domain_max = [hi; 3];
                domain_line = line;
            }
            other => return Err(err(line, CubeErrorKind::UnknownKeyword(other.to_string()))),
        }
    }

    let Some(n) = size else {
        return Err(err(last_line + 1, CubeErrorKind::MissingSize));
    };
    if entries.len() != n * n * n {
        return Err(err(
            last_line + 1,
            CubeErrorKind::WrongDataCount {
                expected: n * n * n,
                found: entries.len(),
            },
        ));
    }
    if (0..3).any(|c| domain_min[c] >= domain_max[c]) {
        return Err(err(domain_line, CubeErrorKind::BadDomain));
    }
    Lut3D::from_entries_with_domain(n, domain_min, domain_max, entries)
}

/// Serialises a LUT; the domain lines are written only when non-default.
pub fn write_cube(lut: &Lut3D) -> Vec<u8> {
    write_cube_titled(lut, None)
}

pub fn write_cube_titled(lut: &Lut3D, title: Option<&str>) -> Vec<u8> {
    let mut out = String::with_capacity(lut.len() * 28 + 64);
    if let Some(t) = title {
        let _ = writeln!(out, "TITLE \"{}\"", t.replace('"', "'"));
    }
    let _ = writeln!(out, "LUT_3D_SIZE {}", lut.size());
    if !lut.has_unit_domain() {
        let (lo, hi) = (lut.domain_min(), lut.domain_max());
        let _ = writeln!(out, "DOMAIN_MIN {:.6} {:.6} {:.6}", lo[0], lo[1], lo[2]);
        let _ = writeln!(out, "DOMAIN_MAX {:.6} {:.6} {:.6}", hi[0], hi[1], hi[2]);
    }
    for idx in 0..lut.len() {
        let e = lut.entry_at(idx);
        let _ = writeln!(out, "{:.6} {:.6} {:.6}", e[0], e[1], e[2]);
    }
    out.into_bytes()
}
