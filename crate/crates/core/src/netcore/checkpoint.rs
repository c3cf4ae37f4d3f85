//! `IT2M` layout, all little-endian:
//!
//! ```text
//! magic "IT2M" | version u32 | num_classes range_in voxel_in range_hidden voxel_hidden embed_dim (u32 each)
//! tensor count u32 | per tensor: rows u32 | cols u32 | rows*cols f64
//! has_bank u8 | bank: classes u32 | components u32 | dim u32 | eps f64 | diagonal u8
//!              per class: initialized u8, then if set, per component
//!              live mean, live cov, shadow mean, shadow cov as f64 arrays
//! ```
//!
//! Tensors are the ten parameters of the range view, its input scale (1 x C),
//! then the same for the voxel view.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::model::{ModelDims, ModelState, PARAMS_PER_VIEW};
use super::tape::Tensor;
use crate::error::{Error, Result};
use crate::prototypes::{Component, CovarianceKind, GmmBank};

pub const MODEL_MAGIC: &[u8; 4] = b"IT2M";
pub const MODEL_VERSION: u32 = 1;

const TENSORS_PER_VIEW: usize = PARAMS_PER_VIEW + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelState,
    pub bank: Option<GmmBank>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s<'a>(out: &mut Vec<u8>, vals: impl IntoIterator<Item = &'a f64>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_u32(out, t.nrows());
    put_u32(out, t.ncols());
    put_f64s(out, t.iter());
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let m = &ckpt.model;
    let d = m.dims;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for v in [d.num_classes, d.range_in, d.voxel_in, d.range_hidden, d.voxel_hidden, d.embed_dim] {
        put_u32(&mut out, v);
    }
    put_u32(&mut out, 2 * TENSORS_PER_VIEW);
    for view in [&m.range, &m.voxel] {
        for p in view.params() {
            put_tensor(&mut out, p);
        }
        let scale = Tensor::from_shape_vec((1, view.input_scale.len()), view.input_scale.clone())
            .expect("row vector");
        put_tensor(&mut out, &scale);
    }
    match &ckpt.bank {
        None => out.push(0),
        Some(bank) => {
            out.push(1);
            put_u32(&mut out, bank.num_classes);
            put_u32(&mut out, bank.components);
            put_u32(&mut out, bank.dim);
            put_f64s(&mut out, [bank.eps].iter());
            out.push(u8::from(bank.covariance == CovarianceKind::Diagonal));
            for mix in &bank.classes {
                out.push(u8::from(mix.initialized));
                if !mix.initialized {
                    continue;
                }
                for (l, s) in mix.live.iter().zip(&mix.shadow) {
                    put_f64s(&mut out, l.mean.iter());
                    put_f64s(&mut out, l.cov.iter());
                    put_f64s(&mut out, s.mean.iter());
                    put_f64s(&mut out, s.cov.iter());
                }
            }
        }
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

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.saturating_mul(8), what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn tensor(&mut self, expect: (usize, usize), what: &str) -> Result<Tensor> {
        let off = self.pos as u64;
        let rows = self.u32(what)?;
        let cols = self.u32(what)?;
        if (rows, cols) != expect {
            return Err(Error::format(
                off,
                format!("{what} has shape {rows}x{cols}, expected {}x{}", expect.0, expect.1),
            ));
        }
        let data = self.f64s(rows * cols, what)?;
        Ok(Tensor::from_shape_vec((rows, cols), data).expect("shape checked"))
    }
}

fn decode_view(cur: &mut Cursor<'_>, state: &mut ModelState, range: bool) -> Result<()> {
    let view = if range { &mut state.range } else { &mut state.voxel };
    let name = if range { "range" } else { "voxel" };
    for (k, p) in view.params_mut().into_iter().enumerate() {
        *p = cur.tensor(p.dim(), &format!("{name} tensor {k}"))?;
    }
    let width = view.input_scale.len();
    view.input_scale = cur.tensor((1, width), &format!("{name} input scale"))?.into_raw_vec_and_offset().0;
    Ok(())
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let version = cur.u32("version")?;
    if version != MODEL_VERSION as usize {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let mut d = [0usize; 6];
    for v in d.iter_mut() {
        *v = cur.u32("model dims")?;
    }
    let dims = ModelDims {
        num_classes: d[0],
        range_in: d[1],
        voxel_in: d[2],
        range_hidden: d[3],
        voxel_hidden: d[4],
        embed_dim: d[5],
    };
    let mut model = ModelState::new(dims, 0).map_err(|e| Error::format(8, e.to_string()))?;
    let count_off = cur.pos as u64;
    let count = cur.u32("tensor count")?;
    if count != 2 * TENSORS_PER_VIEW {
        return Err(Error::format(count_off, format!("{count} tensors, expected {}", 2 * TENSORS_PER_VIEW)));
    }
    decode_view(&mut cur, &mut model, true)?;
    decode_view(&mut cur, &mut model, false)?;

    let flag_off = cur.pos as u64;
    let bank = match cur.u8("bank flag")? {
        0 => None,
        1 => Some(decode_bank(&mut cur)?),
        f => return Err(Error::format(flag_off, format!("bad bank flag {f}"))),
    };
    if cur.pos != buf.len() {
        return Err(Error::format(cur.pos as u64, format!("{} trailing bytes", buf.len() - cur.pos)));
    }
    Ok(Checkpoint { model, bank })
}

fn decode_bank(cur: &mut Cursor<'_>) -> Result<GmmBank> {
    let off = cur.pos as u64;
    let classes = cur.u32("bank classes")?;
    let components = cur.u32("bank components")?;
    let dim = cur.u32("bank dim")?;
    let eps = cur.f64s(1, "bank eps")?[0];
    let covariance = match cur.u8("covariance kind")? {
        0 => CovarianceKind::Full,
        _ => CovarianceKind::Diagonal,
    };
    let mut bank = GmmBank::new(classes, components, dim, eps, covariance)
        .map_err(|e| Error::format(off, e.to_string()))?;
    for mix in bank.classes.iter_mut() {
        mix.initialized = cur.u8("class flag")? != 0;
        if !mix.initialized {
            continue;
        }
        for m in 0..components {
            let mut read = |what: &str| -> Result<Component> {
                let mean = DVector::from_vec(cur.f64s(dim, what)?);
                let cov = DMatrix::from_vec(dim, dim, cur.f64s(dim * dim, what)?);
                Ok(Component { mean, cov })
            };
            mix.live[m] = read("live component")?;
            mix.shadow[m] = read("shadow component")?;
        }
    }
    Ok(bank)
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}
