//! Operator files and CSV exports.
//!
//! `HSO1` layout, little-endian: the magic `HSO1`, `u32` dimension `N`,
//! `u8` flags (bit 0 self-adjoint, bit 1 PSD), then `N^2` entries in
//! row-major order, each as `f64` real part followed by `f64` imaginary part.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::approx::ApproxReport;
use crate::error::{Error, Result};
use crate::generators::SpreadingField;
use crate::hs::{CMatrix, CoefficientField, HSOperator, OperatorFlags};
use crate::tf::C64;

pub const HSO_MAGIC: &[u8; 4] = b"HSO1";
const HEADER_LEN: usize = 9;

/// Serializes `f` with its computed flags.
pub fn encode_hso(f: &HSOperator) -> Vec<u8> {
    encode_hso_with_flags(f, f.flags())
}

pub fn encode_hso_with_flags(f: &HSOperator, flags: OperatorFlags) -> Vec<u8> {
    let n = f.n();
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * n * n);
    out.extend_from_slice(HSO_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.push(flags.to_byte());
    let m = f.matrix();
    for i in 0..n {
        for j in 0..n {
            out.extend_from_slice(&m[(i, j)].re.to_le_bytes());
            out.extend_from_slice(&m[(i, j)].im.to_le_bytes());
        }
    }
    out
}

/// Parses an `HSO1` buffer. Trailing bytes are rejected.
pub fn decode_hso(bytes: &[u8]) -> Result<(HSOperator, OperatorFlags)> {
    let take = |offset: usize, len: usize| -> Result<&[u8]> {
        bytes.get(offset..offset + len).ok_or(Error::Malformed {
            offset: bytes.len().min(offset),
            reason: format!("truncated: needed {len} bytes at offset {offset}, file has {}", bytes.len()),
        })
    };
    if take(0, 4)? != HSO_MAGIC {
        return Err(Error::Malformed { offset: 0, reason: "bad magic, expected HSO1".into() });
    }
    let n = u32::from_le_bytes(take(4, 4)?.try_into().expect("4 bytes")) as usize;
    if n == 0 {
        return Err(Error::Malformed { offset: 4, reason: "dimension is zero".into() });
    }
    let flag_byte = take(8, 1)?[0];
    if flag_byte & !0b11 != 0 {
        return Err(Error::Malformed { offset: 8, reason: format!("unknown flag bits {flag_byte:#04x}") });
    }
    let payload = n
        .checked_mul(n)
        .and_then(|v| v.checked_mul(16))
        .ok_or(Error::Malformed { offset: 4, reason: format!("dimension {n} too large") })?;
    let data = take(HEADER_LEN, payload)?;
    if bytes.len() != HEADER_LEN + payload {
        return Err(Error::Malformed {
            offset: HEADER_LEN + payload,
            reason: format!("{} trailing bytes", bytes.len() - HEADER_LEN - payload),
        });
    }
    let f64_at = |k: usize| f64::from_le_bytes(data[8 * k..8 * k + 8].try_into().expect("8 bytes"));
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let k = 2 * (i * n + j);
            let (re, im) = (f64_at(k), f64_at(k + 1));
            if !re.is_finite() || !im.is_finite() {
                return Err(Error::Malformed { offset: HEADER_LEN + 8 * k, reason: "non-finite entry".into() });
            }
            m[(i, j)] = C64::new(re, im);
        }
    }
    Ok((HSOperator::from_matrix_unchecked(m), OperatorFlags::from_byte(flag_byte)))
}

pub fn write_hso(path: &Path, f: &HSOperator) -> Result<()> {
    std::fs::write(path, encode_hso(f))?;
    Ok(())
}

pub fn read_hso(path: &Path) -> Result<(HSOperator, OperatorFlags)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_hso(&bytes)
}

/// Writes then reads back `f`.
pub fn io_roundtrip(f: &HSOperator, path: &Path) -> Result<HSOperator> {
    write_hso(path, f)?;
    Ok(read_hso(path)?.0)
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Columns `x,omega,hs_norm`.
pub fn coefficient_csv(coeffs: &CoefficientField) -> String {
    let mut s = String::from("x,omega,hs_norm\n");
    for (p, v) in coeffs.lattice().points().iter().zip(coeffs.hs_norms()) {
        s.push_str(&format!("{},{},{}\n", p.x, p.omega, v));
    }
    s
}

/// Columns `x,omega,re,im` over the full grid.
pub fn spreading_csv(eta: &SpreadingField) -> String {
    let mut s = String::from("x,omega,re,im\n");
    for (z, v) in eta.iter() {
        s.push_str(&format!("{},{},{},{}\n", z.x, z.omega, v.re, v.im));
    }
    s
}

/// Columns `K,app_err,wne,sigma_tail`; `wne` is empty when not measured.
pub fn approx_report_csv(report: &ApproxReport) -> String {
    let mut s = String::from("K,app_err,wne,sigma_tail\n");
    for (i, k) in report.ks.iter().enumerate() {
        let wne = report.wne.as_ref().map(|w| w[i].to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{}\n", k, report.app_err[i], wne, report.sigma_tail[i]));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}
