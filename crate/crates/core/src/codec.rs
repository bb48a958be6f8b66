//! Little-endian binary encoding with a trailing SHA-256 checksum, shared by
//! the dataset and checkpoint formats.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHECKSUM_LEN: usize = 32;

/// Append-only payload buffer; `finish` adds the checksum trailer.
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn magic(&mut self, magic: &[u8; 4]) {
        self.buf.extend_from_slice(magic);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64_slice(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.f64(*v);
        }
    }

    pub fn bytes(&mut self, vs: &[u8]) {
        self.u64(vs.len() as u64);
        self.buf.extend_from_slice(vs);
    }

    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    pub fn into_bytes(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }

    pub fn write_to(self, path: &Path) -> Result<()> {
        std::fs::write(path, self.into_bytes())?;
        Ok(())
    }
}

/// Cursor over a checksum-verified payload.
pub struct Reader {
    data: Vec<u8>,
    pos: usize,
}

impl Reader {
    pub fn from_bytes(data: Vec<u8>) -> Result<Self> {
        if data.len() < CHECKSUM_LEN {
            return Err(Error::Format("file shorter than checksum trailer".into()));
        }
        let payload_len = data.len() - CHECKSUM_LEN;
        let digest = Sha256::digest(&data[..payload_len]);
        if digest[..] != data[payload_len..] {
            return Err(Error::ChecksumMismatch);
        }
        let mut data = data;
        data.truncate(payload_len);
        Ok(Self { data, pos: 0 })
    }

    pub fn open(path: &Path) -> Result<Self> {
        Self::from_bytes(std::fs::read(path)?)
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format("unexpected end of payload".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                got, expected
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > self.data.len() / 8 + 1 {
            return Err(Error::Format("implausible vector length".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn byte_vec(&mut self) -> Result<Vec<u8>> {
        let n = self.u64()? as usize;
        Ok(self.take(n)?.to_vec())
    }

    pub fn string(&mut self) -> Result<String> {
        String::from_utf8(self.byte_vec()?)
            .map_err(|_| Error::Format("invalid utf-8 string".into()))
    }

    pub fn done(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// SHA-256 of an f64 slice, for content digests.
pub fn digest_f64s(label: &str, chunks: &[&[f64]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    for c in chunks {
        h.update((c.len() as u64).to_le_bytes());
        for v in *c {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
