use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("name {0:?} is longer than 13 characters")]
    TooLong(String),
    #[error("name {name:?} has invalid character {ch:?} at position {pos}")]
    InvalidChar { name: String, ch: char, pos: usize },
    #[error("name {0:?} ends with '.'")]
    TrailingDot(String),
}

/// A 64-bit EOSIO account/action name.
///
/// Twelve characters of 5 bits each are packed from the high end, followed by
/// a 4-bit thirteenth character. The alphabet is `.12345abcdefghijklmnopqrstuvwxyz`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct EosioName(pub u64);

const CHARMAP: &[u8; 32] = b".12345abcdefghijklmnopqrstuvwxyz";

fn symbol(c: u8) -> Option<u64> {
    match c {
        b'a'..=b'z' => Some(u64::from(c - b'a') + 6),
        b'1'..=b'5' => Some(u64::from(c - b'1') + 1),
        b'.' => Some(0),
        _ => None,
    }
}

impl EosioName {
    pub const fn from_u64(v: u64) -> Self {
        EosioName(v)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Text form; trailing dots are not printed.
    pub fn to_text(self) -> String {
        let mut chars = [b'.'; 13];
        let mut tmp = self.0;
        for i in 0..13 {
            let (mask, shift) = if i == 0 { (0x0f, 4) } else { (0x1f, 5) };
            chars[12 - i] = CHARMAP[(tmp & mask) as usize];
            tmp >>= shift;
        }
        let s = std::str::from_utf8(&chars).expect("charmap is ascii");
        s.trim_end_matches('.').to_string()
    }
}

/// Encodes a textual name. Fails on characters outside the alphabet, more than
/// 13 characters, a 13th character beyond `j`, or a trailing dot.
pub fn name_encode(text: &str) -> Result<EosioName, NameError> {
    let bytes = text.as_bytes();
    if bytes.len() > 13 {
        return Err(NameError::TooLong(text.to_string()));
    }
    if text.ends_with('.') {
        return Err(NameError::TrailingDot(text.to_string()));
    }
    let mut value = 0u64;
    for (i, &c) in bytes.iter().enumerate() {
        let invalid = || NameError::InvalidChar {
            name: text.to_string(),
            ch: c as char,
            pos: i,
        };
        let sym = symbol(c).ok_or_else(invalid)?;
        if i < 12 {
            value |= (sym & 0x1f) << (64 - 5 * (i + 1));
        } else {
            if sym > 0x0f {
                return Err(invalid());
            }
            value |= sym;
        }
    }
    Ok(EosioName(value))
}

pub fn name_decode(value: u64) -> String {
    EosioName(value).to_text()
}

impl FromStr for EosioName {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        name_encode(s)
    }
}

impl fmt::Display for EosioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Compile-time style helper for well-known names; panics on invalid input.
pub fn n(text: &str) -> u64 {
    name_encode(text).unwrap_or_else(|e| panic!("{e}")).value()
}
