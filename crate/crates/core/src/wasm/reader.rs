use super::ParseError;

/// Cursor over a byte slice that tracks absolute offsets for diagnostics.
#[derive(Debug, Clone)]
pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8], base: usize) -> Self {
        Self { data, pos: 0, base }
    }

    /// Absolute offset of the next unread byte.
    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.data.len()
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn error(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Malformed {
            offset: self.offset(),
            msg: msg.into(),
        }
    }

    pub fn u8(&mut self) -> Result<u8, ParseError> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| self.error("unexpected end of input"))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8], ParseError> {
        if self.remaining() < n {
            return Err(self.error(format!(
                "truncated: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32_le(&mut self) -> Result<u32, ParseError> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64_le(&mut self) -> Result<u64, ParseError> {
        let b = self.bytes(8)?;
        let mut arr = [0u8; 8];
        arr.copy_from_slice(b);
        Ok(u64::from_le_bytes(arr))
    }

    fn uleb(&mut self, bits: u32) -> Result<u64, ParseError> {
        let start = self.offset();
        let max_bytes = bits.div_ceil(7);
        let mut result: u64 = 0;
        let mut shift = 0u32;
        for i in 0..max_bytes {
            let byte = self.u8()?;
            let payload = u64::from(byte & 0x7f);
            if i == max_bytes - 1 {
                // unused high bits of the final byte must be zero
                let used = bits - shift;
                if used < 7 && (payload >> used) != 0 {
                    return Err(ParseError::Malformed {
                        offset: start,
                        msg: format!("LEB128 overflow for u{bits}"),
                    });
                }
            }
            result |= payload << shift;
            if byte & 0x80 == 0 {
                return Ok(result);
            }
            shift += 7;
        }
        Err(ParseError::Malformed {
            offset: start,
            msg: format!("LEB128 overflow for u{bits}"),
        })
    }

    fn sleb(&mut self, bits: u32) -> Result<i64, ParseError> {
        let start = self.offset();
        let max_bytes = bits.div_ceil(7);
        let mut result: i64 = 0;
        let mut shift = 0u32;
        for i in 0..max_bytes {
            let byte = self.u8()?;
            let payload = i64::from(byte & 0x7f);
            if i == max_bytes - 1 {
                // remaining bits must be a sign extension of the value bit
                let used = bits - shift;
                if used < 7 {
                    let rest = (byte & 0x7f) >> (used - 1);
                    let all = 0x7f >> (used - 1);
                    if rest != 0 && rest != all {
                        return Err(ParseError::Malformed {
                            offset: start,
                            msg: format!("LEB128 overflow for s{bits}"),
                        });
                    }
                }
                if byte & 0x80 != 0 {
                    break;
                }
            }
            result |= payload << shift;
            shift += 7;
            if byte & 0x80 == 0 {
                if shift < 64 && (byte & 0x40) != 0 {
                    result |= -1i64 << shift;
                }
                return Ok(result);
            }
        }
        Err(ParseError::Malformed {
            offset: start,
            msg: format!("LEB128 overflow for s{bits}"),
        })
    }

    pub fn var_u32(&mut self) -> Result<u32, ParseError> {
        self.uleb(32).map(|v| v as u32)
    }

    pub fn var_i32(&mut self) -> Result<i32, ParseError> {
        self.sleb(32).map(|v| v as i32)
    }

    pub fn var_i64(&mut self) -> Result<i64, ParseError> {
        self.sleb(64)
    }

    /// Signed 33-bit LEB used by block types carrying a type index.
    pub fn var_s33(&mut self) -> Result<i64, ParseError> {
        self.sleb(33)
    }

    pub fn name(&mut self) -> Result<String, ParseError> {
        let len = self.var_u32()? as usize;
        let at = self.offset();
        let raw = self.bytes(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| ParseError::Malformed {
            offset: at,
            msg: "name is not valid UTF-8".into(),
        })
    }

    /// Splits off a sub-reader of `len` bytes.
    pub fn sub(&mut self, len: usize) -> Result<Reader<'a>, ParseError> {
        let base = self.offset();
        let data = self.bytes(len)?;
        Ok(Reader::new(data, base))
    }
}

pub(crate) fn write_u32(out: &mut Vec<u8>, mut v: u32) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

pub(crate) fn write_i64(out: &mut Vec<u8>, mut v: i64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        let done = (v == 0 && byte & 0x40 == 0) || (v == -1 && byte & 0x40 != 0);
        if done {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

pub(crate) fn write_name(out: &mut Vec<u8>, s: &str) {
    write_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}
