//! File formats: the flat binary field format, CSV tables, canonical JSON,
//! the JSONL results ledger and minimal SVG line plots.

use std::fs::{self, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::spectral::{Field, GridSpec};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SPDEFLD\0";
pub const VERSION: u32 = 1;
/// dtype code for complex64 pairs (two little-endian f32).
pub const DTYPE_C64: u32 = 1;

/// Encode a sequence of fields on a common grid.
///
/// Header: magic, version, d, n, L, m, dtype, count (all little-endian:
/// u32 except `L` as f64). Payload: row-major complex64 pairs, one field
/// after another.
pub fn encode_fields(fields: &[Field]) -> Result<Vec<u8>> {
    let first = fields.first().ok_or_else(|| Error::Shape("no fields to encode".into()))?;
    let (grid, m) = (first.grid.clone(), first.m);
    let mut out = Vec::with_capacity(48 + fields.len() * m * grid.len() * 8);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, grid.d as u32, grid.n as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&grid.l.to_le_bytes());
    for v in [m as u32, DTYPE_C64, fields.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for f in fields {
        if f.grid != grid || f.m != m {
            return Err(Error::Shape("fields in one file must share grid and m".into()));
        }
        for z in &f.values {
            out.extend_from_slice(&(z.re as f32).to_le_bytes());
            out.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn take<const N: usize>(bytes: &[u8], pos: &mut usize) -> Result<[u8; N]> {
    let s = bytes.get(*pos..*pos + N).ok_or_else(|| Error::Shape("truncated field file".into()))?;
    *pos += N;
    Ok(s.try_into().expect("slice length"))
}

pub fn decode_fields(bytes: &[u8]) -> Result<Vec<Field>> {
    let mut pos = 0;
    if &take::<8>(bytes, &mut pos)? != MAGIC {
        return Err(Error::Shape("bad magic in field file".into()));
    }
    let u = |pos: &mut usize| -> Result<u32> { Ok(u32::from_le_bytes(take::<4>(bytes, pos)?)) };
    let version = u(&mut pos)?;
    if version != VERSION {
        return Err(Error::Shape(format!("unsupported field file version {version}")));
    }
    let d = u(&mut pos)? as usize;
    let n = u(&mut pos)? as usize;
    let l = f64::from_le_bytes(take::<8>(bytes, &mut pos)?);
    let m = u(&mut pos)? as usize;
    if u(&mut pos)? != DTYPE_C64 {
        return Err(Error::Shape("unsupported dtype".into()));
    }
    let count = u(&mut pos)? as usize;
    let grid = GridSpec::new(d, n, l)?;
    let per = m * grid.len();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut values = Vec::with_capacity(per);
        for _ in 0..per {
            let re = f32::from_le_bytes(take::<4>(bytes, &mut pos)?);
            let im = f32::from_le_bytes(take::<4>(bytes, &mut pos)?);
            values.push(Complex64::new(re as f64, im as f64));
        }
        out.push(Field::new(&grid, m, values)?);
    }
    if pos != bytes.len() {
        return Err(Error::Shape("trailing bytes in field file".into()));
    }
    Ok(out)
}

pub fn write_fields(path: &Path, fields: &[Field]) -> Result<()> {
    fs::write(path, encode_fields(fields)?)?;
    Ok(())
}

pub fn read_fields(path: &Path) -> Result<Vec<Field>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_fields(&buf)
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// RFC-4180 table with CRLF line endings.
pub fn csv_string(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = String::new();
    let line = |cells: Vec<String>| cells.iter().map(|c| csv_escape(c)).collect::<Vec<_>>().join(",") + "\r\n";
    s.push_str(&line(header.iter().map(|h| h.to_string()).collect()));
    for r in rows {
        s.push_str(&line(r.clone()));
    }
    s
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    fs::write(path, csv_string(header, rows))?;
    Ok(())
}

/// Fixed-format float for tables (shortest round-trip representation).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// Field values as CSV rows `component, index, x_0.., re, im`.
pub fn field_csv(field: &Field) -> String {
    let g = &field.grid;
    let mut header: Vec<String> = vec!["component".into(), "index".into()];
    header.extend((0..g.d).map(|i| format!("x{i}")));
    header.extend(["re".into(), "im".into()]);
    let mut rows = Vec::new();
    for c in 0..field.m {
        for (i, z) in field.component(c).iter().enumerate() {
            let mut row = vec![c.to_string(), i.to_string()];
            row.extend(g.point(i).into_iter().map(fmt_f64));
            row.push(fmt_f64(z.re));
            row.push(fmt_f64(z.im));
            rows.push(row);
        }
    }
    let h: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    csv_string(&h, &rows)
}

/// JSON with keys sorted recursively, no insignificant whitespace.
pub fn canonical_json(v: &Value) -> String {
    fn sort(v: &Value) -> Value {
        match v {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                let mut out = serde_json::Map::new();
                for k in keys {
                    out.insert(k.clone(), sort(&map[k]));
                }
                Value::Object(out)
            }
            Value::Array(a) => Value::Array(a.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    sort(v).to_string()
}

/// `sha256(canonical_json(config) + "\n" + command + "\n" + seed)` in hex.
pub fn config_hash(config: &Value, command: &str, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(canonical_json(config).as_bytes());
    h.update(b"\n");
    h.update(command.as_bytes());
    h.update(b"\n");
    h.update(seed.to_string().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_pretty_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Append one compact JSON line to `<dir>/ledger.jsonl`.
pub fn append_ledger(dir: &Path, entry: &Value) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(dir.join("ledger.jsonl"))?;
    writeln!(f, "{}", canonical_json(entry))?;
    Ok(())
}

/// A polyline plot with log-free linear axes; returns the SVG document.
pub fn svg_line_plot(title: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let pts = series.iter().flat_map(|(_, s)| s.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<text x=\"{pad}\" y=\"20\" font-size=\"12\">{}</text>\n<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n",
        xml_escape(title),
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    for (i, (name, data)) in series.iter().enumerate() {
        let c = colours[i % colours.len()];
        let path: Vec<String> = data.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        s.push_str(&format!("<polyline fill=\"none\" stroke=\"{c}\" points=\"{}\"/>\n", path.join(" ")));
        s.push_str(&format!("<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"{c}\">{}</text>\n", w - 2.0 * pad, pad + 12.0 * (i as f64 + 1.0), xml_escape(name)));
    }
    s.push_str(&format!("<text x=\"{pad}\" y=\"{}\" font-size=\"10\">x: {x0:.3e} .. {x1:.3e}, y: {y0:.3e} .. {y1:.3e}</text>\n</svg>\n", h - 10.0));
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_roundtrip_is_f32_exact() {
        let g = GridSpec::new(1, 8, 2.0).unwrap();
        let f = Field::from_fn(&g, 2, |c, x| Complex64::new(x[0] + c as f64, 0.25));
        let bytes = encode_fields(&[f.clone(), f.scaled(2.0)]).unwrap();
        let back = decode_fields(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back[0].values.iter().zip(&f.values) {
            assert_eq!(a.re, b.re as f32 as f64);
            assert_eq!(a.im, 0.25);
        }
        assert!(decode_fields(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn csv_quoting() {
        let s = csv_string(&["a", "b"], &[vec!["x,y".into(), "q\"".into()]]);
        assert_eq!(s, "a,b\r\n\"x,y\",\"q\"\"\"\r\n");
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"b":1,"a":{"y":2,"x":3}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a":{"x":3,"y":2},"b":1}"#).unwrap();
        assert_eq!(config_hash(&a, "kernels", 1), config_hash(&b, "kernels", 1));
        assert_ne!(config_hash(&a, "kernels", 1), config_hash(&a, "kernels", 2));
    }
}
