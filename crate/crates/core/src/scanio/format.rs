//! `IT2S` layout, all little-endian:
//!
//! ```text
//! magic "IT2S" | version u32 | N u32 | C u32 | Y u32
//! positions N*3 f32 | features N*C f32 | labels N u16 (0xFFFF = unlabelled)
//! ```

use std::fs;
use std::path::Path;

use super::PointScan;
use crate::error::{Error, Result};

pub const SCAN_MAGIC: &[u8; 4] = b"IT2S";
pub const SCAN_VERSION: u32 = 1;

const HEADER_LEN: usize = 20;

pub fn encode_scan(scan: &PointScan) -> Vec<u8> {
    let n = scan.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * (12 + 4 * scan.num_features + 2));
    out.extend_from_slice(SCAN_MAGIC);
    out.extend_from_slice(&SCAN_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(scan.num_features as u32).to_le_bytes());
    out.extend_from_slice(&(scan.num_classes as u32).to_le_bytes());
    for p in &scan.positions {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for f in &scan.features {
        out.extend_from_slice(&f.to_le_bytes());
    }
    for l in &scan.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated {what}: need {len} bytes, {} available",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
}

pub fn decode_scan(buf: &[u8]) -> Result<PointScan> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != SCAN_MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let version = cur.u32("version")?;
    if version != SCAN_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let n = cur.u32("point count")? as usize;
    let c = cur.u32("feature count")? as usize;
    let y_off = cur.pos as u64;
    let y = cur.u32("class count")? as usize;
    if y == 0 || y >= super::UNLABELLED as usize {
        return Err(Error::format(y_off, format!("class count {y} out of range")));
    }

    let mut positions = Vec::with_capacity(n);
    for _ in 0..n {
        let p = [cur.f32("positions")?, cur.f32("positions")?, cur.f32("positions")?];
        positions.push(p);
    }
    let mut features = Vec::with_capacity(n * c);
    for _ in 0..n * c {
        features.push(cur.f32("features")?);
    }
    let mut labels = Vec::with_capacity(n);
    let labels_off = cur.pos;
    for i in 0..n {
        let l = cur.u16("labels")?;
        if l != super::UNLABELLED && l as usize >= y {
            return Err(Error::format(
                (labels_off + 2 * i) as u64,
                format!("label {l} >= class count {y}"),
            ));
        }
        labels.push(l);
    }
    if cur.pos != buf.len() {
        return Err(Error::format(
            cur.pos as u64,
            format!("{} trailing bytes", buf.len() - cur.pos),
        ));
    }
    let scan = PointScan {
        positions,
        features,
        num_features: c,
        labels,
        num_classes: y,
    };
    if let Some(i) = scan.positions.iter().position(|p| *p == [0.0; 3]) {
        return Err(Error::format(
            (HEADER_LEN + 12 * i) as u64,
            format!("point {i} is at the sensor origin"),
        ));
    }
    Ok(scan)
}

pub fn write_scan(scan: &PointScan, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    scan.validate()?;
    fs::write(path, encode_scan(scan)).map_err(|e| Error::io(path, e))
}

pub fn read_scan(path: impl AsRef<Path>) -> Result<PointScan> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scan(&buf)
}
