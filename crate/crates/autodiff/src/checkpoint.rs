//! Binary parameter archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "CCHPCKPT"
//! version    u32      currently 1
//! kind       u32 length + UTF-8 bytes   (model kind tag)
//! metadata   u32 length + UTF-8 bytes   (free-form, e.g. JSON config)
//! step       u64      optimizer step count
//! count      u32      number of parameters
//! per parameter:
//!   name     u32 length + UTF-8 bytes
//!   ndim     u32, then ndim x u64 dims
//!   value    n x f64
//!   m        n x f64   (Adam first moment)
//!   v        n x f64   (Adam second moment)
//! ```

use std::io::{Read, Write};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::array::Array;
use crate::error::{Result, TensorError};
use crate::optim::{Parameter, ParameterStore};

pub const MAGIC: &[u8; 8] = b"CCHPCKPT";
pub const VERSION: u32 = 1;

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| TensorError::Format("invalid UTF-8 string".into()))
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for &x in xs {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

pub fn write_checkpoint<W: Write>(
    w: &mut W,
    kind: &str,
    metadata: &str,
    store: &ParameterStore,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    write_str(w, kind)?;
    write_str(w, metadata)?;
    w.write_u64::<LittleEndian>(store.step())?;
    w.write_u32::<LittleEndian>(store.len() as u32)?;
    for p in store.iter() {
        write_str(w, &p.name)?;
        let shape = p.value.shape();
        w.write_u32::<LittleEndian>(shape.len() as u32)?;
        for &d in shape {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        write_f64s(w, p.value.data())?;
        write_f64s(w, &p.first_moment)?;
        write_f64s(w, &p.second_moment)?;
    }
    Ok(())
}

/// Decoded archive: `(kind, metadata, store)`.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(String, String, ParameterStore)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Format("bad magic header".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let kind = read_str(r)?;
    let metadata = read_str(r)?;
    let step = r.read_u64::<LittleEndian>()?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_str(r)?;
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(TensorError::Format(format!("`{name}`: bad rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let n: usize = shape.iter().product();
        let value = Array::new(shape, read_f64s(r, n)?)?;
        let first_moment = read_f64s(r, n)?;
        let second_moment = read_f64s(r, n)?;
        params.push(Parameter {
            name,
            value: Arc::new(value),
            first_moment,
            second_moment,
        });
    }
    let mut store = ParameterStore::new();
    store.restore(params, step)?;
    Ok((kind, metadata, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Gradients;

    #[test]
    fn round_trip_preserves_values_and_optimizer_state() {
        let mut s = ParameterStore::new();
        let mut rng = crate::rng::stream(3, &[]);
        s.insert_glorot("w", 3, 4, &mut rng).unwrap();
        s.insert_zeros("b", &[4]).unwrap();
        let mut g = Gradients::default();
        g.insert("w", Array::full(&[3, 4], 0.25));
        s.adam_step(&g, 1e-3).unwrap();

        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "cchp", "{\"h\":3}", &s).unwrap();
        let (kind, meta, back) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(kind, "cchp");
        assert_eq!(meta, "{\"h\":3}");
        assert_eq!(back.step(), 1);
        for (a, b) in s.iter().zip(back.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
            assert_eq!(a.first_moment, b.first_moment);
            assert_eq!(a.second_moment, b.second_moment);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"NOTACKPT\x01\x00\x00\x00".to_vec();
        assert!(matches!(
            read_checkpoint(&mut buf.as_slice()),
            Err(TensorError::Format(_))
        ));
    }
}
