//! Interval-keyed symbolic linear memory.
//!
//! The observable state is an ordered map from half-open byte ranges
//! `[lower, upper)` to little-endian values of width `8 * (upper - lower)`.
//! Overlapping writes replace the overlapped bytes and keep the old
//! remainders; touching ranges are always coalesced into one key.
//!
//! Internally each key's value is held as a run of pieces (the slices last
//! written there) so a store into a large coalesced range costs a split and
//! a splice instead of rebuilding the whole value.

use std::collections::BTreeMap;

use thiserror::Error;

use super::expr::SymExpr;

pub const PAGE_SIZE: u64 = 65536;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("store of {len} bytes given {width}-bit data")]
    WidthMismatch { len: u64, width: u32 },
    #[error("access [{addr:#x}, +{len}) exceeds memory bound {limit:#x}")]
    AddressOverflow { addr: u64, len: u64, limit: u64 },
    #[error("zero-length access at {0:#x}")]
    Empty(u64),
}

#[derive(Debug, Clone, Default)]
pub struct SymbolicMemory {
    /// lower -> upper, pairwise disjoint and non-touching
    keys: BTreeMap<u64, u64>,
    /// start -> data; pieces tile the keys exactly
    pieces: BTreeMap<u64, Piece>,
    limit: u64,
}

/// A stored slice with its byte length cached, so walking the map never
/// touches the expression.
#[derive(Debug, Clone)]
struct Piece {
    len: u64,
    data: SymExpr,
}

impl Piece {
    fn new(data: SymExpr) -> Self {
        Piece {
            len: u64::from(data.width() / 8),
            data,
        }
    }
}

/// Name of the variable standing for a never-written byte.
pub fn unwritten_byte_name(addr: u64) -> String {
    format!("mem@{addr}")
}

impl SymbolicMemory {
    /// Memory addressable over `[0, limit)`.
    pub fn new(limit: u64) -> Self {
        SymbolicMemory {
            keys: BTreeMap::new(),
            pieces: BTreeMap::new(),
            limit,
        }
    }

    pub fn with_pages(pages: u64) -> Self {
        Self::new(pages * PAGE_SIZE)
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key_count(&self) -> usize {
        self.keys.len()
    }

    fn check_range(&self, addr: u64, len: u64) -> Result<u64, MemoryError> {
        if len == 0 {
            return Err(MemoryError::Empty(addr));
        }
        match addr.checked_add(len) {
            Some(end) if end <= self.limit => Ok(end),
            _ => Err(MemoryError::AddressOverflow {
                addr,
                len,
                limit: self.limit,
            }),
        }
    }

    /// Ensures no piece straddles `at`.
    fn split_at(&mut self, at: u64) {
        let Some((&start, piece)) = self.pieces.range(..at).next_back() else {
            return;
        };
        let end = start + piece.len;
        if end <= at {
            return;
        }
        let cut = ((at - start) * 8) as u32;
        let left = piece.data.extract(0, cut);
        let right = piece.data.extract(cut, piece.data.width() - cut);
        self.pieces.insert(start, Piece::new(left));
        self.pieces.insert(at, Piece::new(right));
    }

    /// Folds the piece at `at` into its left neighbour when both are
    /// constants that touch and fit in 128 bits. Returns the start of the
    /// resulting piece.
    fn coalesce_left(&mut self, at: u64) -> u64 {
        let Some((&start, left)) = self.pieces.range(..at).next_back() else {
            return at;
        };
        let right = &self.pieces[&at];
        let fits = left.len + right.len <= 16;
        if start + left.len != at || !fits || !left.data.is_concrete() || !right.data.is_concrete()
        {
            return at;
        }
        let merged = SymExpr::concat(vec![left.data.clone(), right.data.clone()]);
        self.pieces.remove(&at);
        self.pieces.insert(start, Piece::new(merged));
        start
    }

    /// Writes `data` (little-endian, `8 * len` bits) at `dest`.
    pub fn store(&mut self, dest: u64, len: u64, data: SymExpr) -> Result<(), MemoryError> {
        if data.is_bool() || u64::from(data.width()) != 8 * len {
            return Err(MemoryError::WidthMismatch {
                len,
                width: data.width(),
            });
        }
        let end = self.check_range(dest, len)?;

        // update the overlapped part, keeping old remainders
        self.split_at(dest);
        self.split_at(end);
        let covered: Vec<u64> = self.pieces.range(dest..end).map(|(&k, _)| k).collect();
        for k in covered {
            self.pieces.remove(&k);
        }
        self.pieces.insert(dest, Piece::new(data));
        let start = self.coalesce_left(dest);
        if let Some(next) = self.pieces.range(start + 1..).next().map(|(&k, _)| k) {
            self.coalesce_left(next);
        }

        // merge every key that overlaps or touches [dest, end)
        let mut lower = dest;
        let mut upper = end;
        let touching: Vec<(u64, u64)> = self
            .keys
            .range(..=end)
            .rev()
            .take_while(|&(_, &u)| u >= dest)
            .map(|(&l, &u)| (l, u))
            .collect();
        for (l, u) in touching {
            self.keys.remove(&l);
            lower = lower.min(l);
            upper = upper.max(u);
        }
        self.keys.insert(lower, upper);
        Ok(())
    }

    /// Reads `len` bytes at `src` as one little-endian expression.
    pub fn load(&self, src: u64, len: u64) -> Result<SymExpr, MemoryError> {
        let end = self.check_range(src, len)?;
        let mut parts = Vec::new();
        let mut cur = src;
        // a piece may start before src
        if let Some((&start, piece)) = self.pieces.range(..src).next_back() {
            let pend = start + piece.len;
            if pend > src {
                let stop = pend.min(end);
                parts.push(
                    piece
                        .data
                        .extract(((src - start) * 8) as u32, ((stop - src) * 8) as u32),
                );
                cur = stop;
            }
        }
        for (&start, piece) in self.pieces.range(cur..end) {
            while cur < start {
                parts.push(Self::unwritten(cur));
                cur += 1;
            }
            let pend = start + piece.len;
            if pend <= end {
                parts.push(piece.data.clone());
                cur = pend;
            } else {
                parts.push(piece.data.extract(0, ((end - start) * 8) as u32));
                cur = end;
            }
        }
        while cur < end {
            parts.push(Self::unwritten(cur));
            cur += 1;
        }
        Ok(SymExpr::concat(parts))
    }

    fn unwritten(addr: u64) -> SymExpr {
        SymExpr::var_untainted(&unwritten_byte_name(addr), 8)
    }

    /// Whether every byte of the range has been written.
    pub fn is_written(&self, addr: u64, len: u64) -> bool {
        match self.keys.range(..=addr).next_back() {
            Some((&l, &u)) => l <= addr && addr + len <= u,
            None => false,
        }
    }

    /// The key ranges and their values, in address order.
    pub fn entries(&self) -> Vec<((u64, u64), SymExpr)> {
        self.keys
            .iter()
            .map(|(&l, &u)| {
                let value = self.load(l, u - l).expect("keys lie within bounds");
                ((l, u), value)
            })
            .collect()
    }

    pub fn keys(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.keys.iter().map(|(&l, &u)| (l, u))
    }

    /// Checks the key-space invariants: sorted, disjoint, non-touching,
    /// non-empty and in bounds.
    pub fn audit(&self) -> Result<(), String> {
        let mut prev: Option<(u64, u64)> = None;
        for (&l, &u) in &self.keys {
            if l >= u {
                return Err(format!("empty or inverted key [{l}, {u})"));
            }
            if u > self.limit {
                return Err(format!("key [{l}, {u}) beyond limit {}", self.limit));
            }
            if let Some((pl, pu)) = prev {
                if pu > l {
                    return Err(format!("keys [{pl}, {pu}) and [{l}, {u}) overlap"));
                }
                if pu == l {
                    return Err(format!("keys [{pl}, {pu}) and [{l}, {u}) are adjacent"));
                }
            }
            prev = Some((l, u));
        }
        Ok(())
    }

    /// [`audit`](Self::audit) plus a check that the stored slices tile every
    /// key exactly, so each key's value has the key's width.
    pub fn audit_storage(&self) -> Result<(), String> {
        self.audit()?;
        let mut keys = self.keys.iter().peekable();
        let mut expect: Option<u64> = None;
        let mut key_end = 0;
        for (&start, piece) in &self.pieces {
            if piece.len == 0 {
                return Err(format!("empty piece at {start}"));
            }
            match expect {
                Some(e) if e == start => {}
                _ => {
                    let Some((&l, &u)) = keys.next() else {
                        return Err(format!("piece at {start} outside every key"));
                    };
                    if expect.is_some_and(|e| e != key_end) || l != start {
                        return Err(format!("pieces do not tile key [{l}, {u})"));
                    }
                    key_end = u;
                }
            }
            let end = start + piece.len;
            if end > key_end {
                return Err(format!("piece [{start}, {end}) crosses key end {key_end}"));
            }
            expect = if end == key_end { None } else { Some(end) };
        }
        if expect.is_some() || keys.next().is_some() {
            return Err("a key is not fully covered by pieces".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn byte(name: &str) -> SymExpr {
        SymExpr::var_untainted(name, 8)
    }

    #[test]
    fn merge_example() {
        let (a0, a1, a2, a3, a3b) = (byte("a0"), byte("a1"), byte("a2"), byte("a3"), byte("a3'"));
        let mut m = SymbolicMemory::new(1024);
        m.store(0, 2, SymExpr::concat(vec![a0.clone(), a1.clone()]))
            .unwrap();
        m.store(3, 1, a3).unwrap();
        assert_eq!(m.keys().collect::<Vec<_>>(), vec![(0, 2), (3, 4)]);
        m.store(2, 2, SymExpr::concat(vec![a2.clone(), a3b.clone()]))
            .unwrap();
        let entries = m.entries();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].0, (0, 4));
        assert_eq!(entries[0].1, SymExpr::concat(vec![a0, a1, a2, a3b]));
        m.audit_storage().unwrap();
    }

    #[test]
    fn store_into_empty() {
        let mut m = SymbolicMemory::new(1024);
        m.store(100, 4, SymExpr::u32(0xdeadbeef)).unwrap();
        assert_eq!(m.keys().collect::<Vec<_>>(), vec![(100, 104)]);
        assert_eq!(m.load(100, 4).unwrap().as_const(), Some(0xdeadbeef));
        assert_eq!(m.load(101, 2).unwrap().as_const(), Some(0xadbe));
    }

    #[test]
    fn overlap_keeps_remainders() {
        let mut m = SymbolicMemory::new(64);
        m.store(0, 8, SymExpr::u64(0x0807060504030201)).unwrap();
        m.store(2, 2, SymExpr::constant(0xbbaa, 16)).unwrap();
        assert_eq!(m.load(0, 8).unwrap().as_const(), Some(0x08070605bbaa0201));
        assert_eq!(m.key_count(), 1);
        m.audit_storage().unwrap();
    }

    #[test]
    fn unwritten_bytes_are_memoized() {
        let m = SymbolicMemory::new(64);
        let a = m.load(10, 1).unwrap();
        let b = m.load(10, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.var_name(), Some("mem@10"));
        let wide = m.load(9, 2).unwrap();
        assert_eq!(wide.extract(8, 8), a);
    }

    #[test]
    fn bounds_and_widths() {
        let mut m = SymbolicMemory::new(16);
        assert!(matches!(
            m.store(14, 4, SymExpr::u32(0)),
            Err(MemoryError::AddressOverflow { .. })
        ));
        assert!(matches!(
            m.store(0, 4, SymExpr::u64(0)),
            Err(MemoryError::WidthMismatch { .. })
        ));
        assert!(m.load(u64::MAX, 2).is_err());
    }
}
