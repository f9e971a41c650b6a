//! Little-endian framing shared by the dataset and checkpoint formats:
//! `magic (4 bytes) | version (u16) | payload | crc32(payload) (u32)`.

use crate::error::FormatError;

pub(crate) struct Writer {
    buf: Vec<u8>,
    payload_start: usize,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u16) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        let payload_start = buf.len();
        Writer { buf, payload_start }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf[self.payload_start..]);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    payload_start: usize,
}

impl<'a> Reader<'a> {
    /// Validates magic and version and positions the cursor at the payload.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], version: u16) -> Result<Self, FormatError> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(FormatError::BadMagic {
                expected: *magic,
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        let mut r = Reader {
            bytes,
            pos: 4,
            payload_start: 6,
        };
        let found = u16::from_le_bytes(r.take::<2>()?);
        if found != version {
            return Err(FormatError::UnsupportedVersion {
                expected: version,
                found,
            });
        }
        Ok(r)
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: end - self.bytes.len(),
            });
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(out)
    }

    /// Fails with `Truncated` unless `n` more bytes (plus the trailing CRC) remain.
    pub fn require(&self, n: usize) -> Result<(), FormatError> {
        let have = self.bytes.len().saturating_sub(self.pos);
        let want = n.saturating_add(4);
        if have < want {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: want - have,
            });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take::<1>()?[0])
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take::<8>()?))
    }

    pub fn usize(&mut self) -> Result<usize, FormatError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| FormatError::Malformed(format!("count {v} overflows usize")))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take::<8>()?))
    }

    /// Reads the trailing CRC, compares it with the payload and checks for
    /// trailing garbage.
    pub fn finish(mut self) -> Result<(), FormatError> {
        let payload_end = self.pos;
        let stored = u32::from_le_bytes(self.take::<4>()?);
        if self.pos != self.bytes.len() {
            return Err(FormatError::Malformed(format!(
                "{} trailing bytes after checksum",
                self.bytes.len() - self.pos
            )));
        }
        let computed = crc32fast::hash(&self.bytes[self.payload_start..payload_end]);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }
        Ok(())
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}
