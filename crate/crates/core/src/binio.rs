//! Little-endian primitives for the binary artifact containers.

use std::io::{Read, Write};

use crate::error::{Error, Result};

fn ser(e: std::io::Error) -> Error {
    Error::Serialization(e.to_string())
}

pub(crate) struct BinWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinWriter<W> {
    pub(crate) fn new(inner: W) -> Self {
        BinWriter { inner }
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b).map_err(ser)
    }

    pub(crate) fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        self.bytes(s.as_bytes())
    }

    pub(crate) fn f32s(&mut self, v: &[f32]) -> Result<()> {
        self.u64(v.len() as u64)?;
        let mut buf = Vec::with_capacity(v.len() * 4);
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        self.bytes(&buf)
    }

    pub(crate) fn f64s(&mut self, v: &[f64]) -> Result<()> {
        self.u64(v.len() as u64)?;
        for &x in v {
            self.f64(x)?;
        }
        Ok(())
    }

    pub(crate) fn into_inner(self) -> W {
        self.inner
    }
}

pub(crate) struct BinReader<R: Read> {
    inner: R,
}

impl<R: Read> BinReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        BinReader { inner }
    }

    pub(crate) fn into_inner(self) -> R {
        self.inner
    }

    pub(crate) fn exact<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(ser)?;
        Ok(buf)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.exact()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.exact()?))
    }

    fn vec(&mut self, len: usize) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        (&mut self.inner)
            .take(len as u64)
            .read_to_end(&mut buf)
            .map_err(ser)?;
        if buf.len() != len {
            return Err(Error::Serialization(format!(
                "truncated input: wanted {len} bytes, got {}",
                buf.len()
            )));
        }
        Ok(buf)
    }

    pub(crate) fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.vec(len)?).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub(crate) fn f32s(&mut self) -> Result<Vec<f32>> {
        let len = self.u64()? as usize;
        let raw = self.vec(len.checked_mul(4).ok_or_else(|| Error::Serialization("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub(crate) fn f64s(&mut self) -> Result<Vec<f64>> {
        let len = self.u64()? as usize;
        let raw = self.vec(len.checked_mul(8).ok_or_else(|| Error::Serialization("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let got: [u8; 8] = self.exact()?;
        if &got != expected {
            return Err(Error::Serialization(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }
}
