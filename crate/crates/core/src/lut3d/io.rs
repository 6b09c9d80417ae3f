//! `LF3D` binary bank format and `.cube` text export.
//!
//! `LF3D` is little-endian: magic `b"LF3D"`, version `u32` (= 1), `N u32`,
//! `M u32`, then `N` lattices of `M³·3` `f32` values with red varying fastest.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use super::{Lut3D, LutBank};
use crate::error::{Error, IoContext, Result};

const MAGIC: [u8; 4] = *b"LF3D";
const VERSION: u32 = 1;
const HEADER: usize = 16;

pub fn write_bank_bytes(bank: &LutBank) -> Vec<u8> {
    let m = bank.dim();
    let mut out = Vec::with_capacity(HEADER + bank.len() * m * m * m * 12);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(bank.len() as u32).to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    for lut in bank.luts() {
        for &v in lut.lattice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_bank_bytes(bytes: &[u8]) -> Result<LutBank> {
    if bytes.len() < HEADER {
        return Err(Error::Truncated {
            expected: HEADER,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let (n, m) = (word(8) as usize, word(12) as usize);
    let per_lut = m
        .checked_pow(3)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::Invalid(format!("LUT dimension {m} is too large")))?;
    let expected = per_lut
        .checked_mul(n)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER))
        .ok_or_else(|| Error::Invalid("LUT bank is too large".into()))?;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let values: Vec<f64> = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let luts = values
        .chunks_exact(per_lut.max(1))
        .take(n)
        .map(|chunk| Lut3D::from_lattice(m, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    LutBank::new(luts)
}

pub fn write_bank(path: impl AsRef<Path>, bank: &LutBank) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_bank_bytes(bank)).at(path)
}

pub fn read_bank(path: impl AsRef<Path>) -> Result<LutBank> {
    let path = path.as_ref();
    read_bank_bytes(&fs::read(path).at(path)?)
}

/// Writes `LUT_3D_SIZE M` followed by one `r g b` line per node, red
/// varying fastest. Values use the shortest `f32` text that round-trips.
pub fn write_cube<W: Write>(out: &mut W, lut: &Lut3D) -> std::io::Result<()> {
    writeln!(out, "LUT_3D_SIZE {}", lut.dim())?;
    for node in lut.lattice().chunks_exact(3) {
        writeln!(out, "{} {} {}", node[0] as f32, node[1] as f32, node[2] as f32)?;
    }
    Ok(())
}

/// Reads a 3D `.cube` file. `TITLE`, `DOMAIN_MIN`/`DOMAIN_MAX` (default
/// domain only) and `#` comments are accepted.
pub fn read_cube<R: BufRead>(input: R, source: &Path) -> Result<Lut3D> {
    let err = |line: usize, msg: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        msg,
    };
    let mut size = None;
    let mut values = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line.at(source)?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or_default();
        match head {
            "TITLE" => {}
            "LUT_3D_SIZE" => {
                let m: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(lineno, "LUT_3D_SIZE needs an integer".into()))?;
                size = Some(m);
            }
            "DOMAIN_MIN" | "DOMAIN_MAX" => {
                let want = if head == "DOMAIN_MIN" { 0.0 } else { 1.0 };
                let ok = parts.all(|s| s.parse::<f64>().map(|v| v == want).unwrap_or(false));
                if !ok {
                    return Err(err(lineno, format!("only the default {head} is supported")));
                }
            }
            "LUT_1D_SIZE" => return Err(err(lineno, "1D LUTs are not supported".into())),
            _ => {
                let nums = line
                    .split_whitespace()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| err(lineno, format!("bad sample: {e}")))?;
                if nums.len() != 3 {
                    return Err(err(lineno, format!("expected 3 values, found {}", nums.len())));
                }
                values.extend(nums);
            }
        }
    }
    let m = size.ok_or_else(|| err(0, "missing LUT_3D_SIZE".into()))?;
    Lut3D::from_lattice(m, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lut3d::identity_lut;
    use proptest::prelude::*;

    #[test]
    fn identity_bank_round_trips_bitwise() {
        let bank = LutBank::identity_init(3, 9).unwrap();
        let back = read_bank_bytes(&write_bank_bytes(&bank)).unwrap();
        for (a, b) in bank.luts().iter().zip(back.luts()) {
            let bits = |l: &Lut3D| l.lattice().iter().map(|v| (*v as f32).to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(bank, back);
    }

    #[test]
    fn truncated_file_names_both_lengths() {
        let bytes = write_bank_bytes(&LutBank::identity_init(2, 3).unwrap());
        let cut = &bytes[..bytes.len() - 7];
        match read_bank_bytes(cut) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, bytes.len());
                assert_eq!(actual, cut.len());
            }
            other => panic!("unexpected {other:?}"),
        }
        let msg = read_bank_bytes(cut).unwrap_err().to_string();
        assert!(msg.contains(&bytes.len().to_string()) && msg.contains(&cut.len().to_string()));
    }

    #[test]
    fn magic_and_version_are_checked() {
        let mut bytes = write_bank_bytes(&LutBank::identity_init(1, 2).unwrap());
        bytes[4] = 9;
        assert!(matches!(read_bank_bytes(&bytes), Err(Error::BadVersion(9))));
        bytes[0] = b'Q';
        assert!(matches!(read_bank_bytes(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn cube_export_of_identity() {
        let mut buf = Vec::new();
        write_cube(&mut buf, &identity_lut(5).unwrap()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("LUT_3D_SIZE 5"));
        assert_eq!(lines.next(), Some("0 0 0"));
        assert_eq!(lines.next(), Some("0.25 0 0"));
        assert_eq!(text.lines().count(), 1 + 125);
        assert_eq!(text.lines().last(), Some("1 1 1"));
    }

    #[test]
    fn cube_reader_accepts_headers() {
        let text = "# exported\nTITLE \"x\"\nDOMAIN_MIN 0 0 0\nDOMAIN_MAX 1 1 1\nLUT_3D_SIZE 2\n0 0 0\n1 0 0\n0 1 0\n1 1 0\n0 0 1\n1 0 1\n0 1 1\n1 1 1\n";
        let lut = read_cube(text.as_bytes(), Path::new("t.cube")).unwrap();
        assert_eq!(lut, identity_lut(2).unwrap());
        let bad = "LUT_3D_SIZE 2\n0 0\n";
        assert!(matches!(read_cube(bad.as_bytes(), Path::new("b.cube")), Err(Error::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn cube_round_trip_is_exact_in_f32(vals in proptest::collection::vec(-2.0f32..2.0, 24)) {
            let lut = Lut3D::from_lattice(2, vals.iter().map(|&v| v as f64).collect()).unwrap();
            let mut buf = Vec::new();
            write_cube(&mut buf, &lut).unwrap();
            let back = read_cube(buf.as_slice(), Path::new("p.cube")).unwrap();
            for (a, b) in back.lattice().iter().zip(&vals) {
                prop_assert_eq!(*a as f32, *b);
            }
        }
    }
}
