//! Instruction decoding for function bodies.

use std::fmt;

use super::reader::Reader;
use super::types::{FunctionBody, ValType};
use super::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockType {
    Empty,
    Value(ValType),
    TypeIndex(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemArg {
    pub align: u32,
    pub offset: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntWidth {
    W32,
    W64,
}

impl IntWidth {
    pub fn bits(self) -> u32 {
        match self {
            IntWidth::W32 => 32,
            IntWidth::W64 => 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpKind {
    Eq,
    Ne,
    LtS,
    LtU,
    GtS,
    GtU,
    LeS,
    LeU,
    GeS,
    GeU,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntUnary {
    Clz,
    Ctz,
    Popcnt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntBinary {
    Add,
    Sub,
    Mul,
    DivS,
    DivU,
    RemS,
    RemU,
    And,
    Or,
    Xor,
    Shl,
    ShrS,
    ShrU,
    Rotl,
    Rotr,
}

/// Numeric instructions, grouped by how the engine treats them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Numeric {
    Eqz(IntWidth),
    Cmp(IntWidth, CmpKind),
    Unary(IntWidth, IntUnary),
    Binary(IntWidth, IntBinary),
    /// i32.wrap_i64
    Wrap,
    /// i64.extend_i32_s / i64.extend_i32_u
    Extend {
        signed: bool,
    },
    /// iNN.extendMM_s
    SignExtend {
        width: IntWidth,
        from_bits: u32,
    },
    /// i32.reinterpret_f32 and friends: bit-preserving casts.
    Reinterpret {
        to: ValType,
    },
    /// Float arithmetic, comparison and conversion, by opcode.
    Float(u8),
    /// 0xFC 0..=7 saturating truncations, by sub-opcode.
    TruncSat(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadKind {
    I32,
    I64,
    F32,
    F64,
    I32_8S,
    I32_8U,
    I32_16S,
    I32_16U,
    I64_8S,
    I64_8U,
    I64_16S,
    I64_16U,
    I64_32S,
    I64_32U,
}

impl LoadKind {
    /// (bytes read, result type, sign-extend)
    pub fn shape(self) -> (u32, ValType, bool) {
        use LoadKind::*;
        match self {
            I32 => (4, ValType::I32, false),
            I64 => (8, ValType::I64, false),
            F32 => (4, ValType::F32, false),
            F64 => (8, ValType::F64, false),
            I32_8S => (1, ValType::I32, true),
            I32_8U => (1, ValType::I32, false),
            I32_16S => (2, ValType::I32, true),
            I32_16U => (2, ValType::I32, false),
            I64_8S => (1, ValType::I64, true),
            I64_8U => (1, ValType::I64, false),
            I64_16S => (2, ValType::I64, true),
            I64_16U => (2, ValType::I64, false),
            I64_32S => (4, ValType::I64, true),
            I64_32U => (4, ValType::I64, false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreKind {
    I32,
    I64,
    F32,
    F64,
    I32_8,
    I32_16,
    I64_8,
    I64_16,
    I64_32,
}

impl StoreKind {
    /// Number of bytes written.
    pub fn bytes(self) -> u32 {
        use StoreKind::*;
        match self {
            I32 | F32 | I64_32 => 4,
            I64 | F64 => 8,
            I32_8 | I64_8 => 1,
            I32_16 | I64_16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operator {
    Unreachable,
    Nop,
    Block(BlockType),
    Loop(BlockType),
    If(BlockType),
    Else,
    End,
    Br(u32),
    BrIf(u32),
    /// Table of depths; the final entry is the default target.
    BrTable(Vec<u32>),
    Return,
    Call(u32),
    CallIndirect {
        type_index: u32,
        table: u32,
    },
    Drop,
    Select,
    LocalGet(u32),
    LocalSet(u32),
    LocalTee(u32),
    GlobalGet(u32),
    GlobalSet(u32),
    Load(LoadKind, MemArg),
    Store(StoreKind, MemArg),
    MemorySize,
    MemoryGrow,
    I32Const(i32),
    I64Const(i64),
    F32Const(u32),
    F64Const(u64),
    Numeric(Numeric),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub op: Operator,
    /// Absolute byte offset of the opcode in the module binary.
    pub offset: usize,
}

impl Operator {
    /// Instructions that must close a basic block.
    pub fn is_terminator(&self) -> bool {
        matches!(
            self,
            Operator::Br(_)
                | Operator::BrIf(_)
                | Operator::BrTable(_)
                | Operator::If(_)
                | Operator::Else
                | Operator::End
                | Operator::Return
                | Operator::Call(_)
                | Operator::CallIndirect { .. }
                | Operator::Unreachable
        )
    }

    pub fn mnemonic(&self) -> String {
        match self {
            Operator::Unreachable => "unreachable".into(),
            Operator::Nop => "nop".into(),
            Operator::Block(_) => "block".into(),
            Operator::Loop(_) => "loop".into(),
            Operator::If(_) => "if".into(),
            Operator::Else => "else".into(),
            Operator::End => "end".into(),
            Operator::Br(d) => format!("br {d}"),
            Operator::BrIf(d) => format!("br_if {d}"),
            Operator::BrTable(t) => format!(
                "br_table {}",
                t.iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            ),
            Operator::Return => "return".into(),
            Operator::Call(f) => format!("call {f}"),
            Operator::CallIndirect { type_index, .. } => {
                format!("call_indirect (type {type_index})")
            }
            Operator::Drop => "drop".into(),
            Operator::Select => "select".into(),
            Operator::LocalGet(i) => format!("local.get {i}"),
            Operator::LocalSet(i) => format!("local.set {i}"),
            Operator::LocalTee(i) => format!("local.tee {i}"),
            Operator::GlobalGet(i) => format!("global.get {i}"),
            Operator::GlobalSet(i) => format!("global.set {i}"),
            Operator::Load(k, m) => format!("{k:?}.load offset={}", m.offset).to_lowercase(),
            Operator::Store(k, m) => format!("{k:?}.store offset={}", m.offset).to_lowercase(),
            Operator::MemorySize => "memory.size".into(),
            Operator::MemoryGrow => "memory.grow".into(),
            Operator::I32Const(v) => format!("i32.const {v}"),
            Operator::I64Const(v) => format!("i64.const {v}"),
            Operator::F32Const(v) => format!("f32.const bits={v:#x}"),
            Operator::F64Const(v) => format!("f64.const bits={v:#x}"),
            Operator::Numeric(n) => format!("{n:?}").to_lowercase(),
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#06x}: {}", self.offset, self.op.mnemonic())
    }
}

fn block_type(r: &mut Reader<'_>) -> Result<BlockType, ParseError> {
    let at = r.offset();
    let v = r.var_s33()?;
    match v {
        -64 => Ok(BlockType::Empty),
        v if v < 0 => {
            let byte = (v & 0x7f) as u8;
            ValType::from_byte(byte)
                .map(BlockType::Value)
                .ok_or(ParseError::Malformed {
                    offset: at,
                    msg: format!("bad block type {byte:#x}"),
                })
        }
        v => Ok(BlockType::TypeIndex(v as u32)),
    }
}

fn memarg(r: &mut Reader<'_>) -> Result<MemArg, ParseError> {
    Ok(MemArg {
        align: r.var_u32()?,
        offset: r.var_u32()?,
    })
}

fn numeric(code: u8) -> Option<Numeric> {
    use IntWidth::*;
    let cmp = [
        CmpKind::Eq,
        CmpKind::Ne,
        CmpKind::LtS,
        CmpKind::LtU,
        CmpKind::GtS,
        CmpKind::GtU,
        CmpKind::LeS,
        CmpKind::LeU,
        CmpKind::GeS,
        CmpKind::GeU,
    ];
    let unary = [IntUnary::Clz, IntUnary::Ctz, IntUnary::Popcnt];
    let binary = [
        IntBinary::Add,
        IntBinary::Sub,
        IntBinary::Mul,
        IntBinary::DivS,
        IntBinary::DivU,
        IntBinary::RemS,
        IntBinary::RemU,
        IntBinary::And,
        IntBinary::Or,
        IntBinary::Xor,
        IntBinary::Shl,
        IntBinary::ShrS,
        IntBinary::ShrU,
        IntBinary::Rotl,
        IntBinary::Rotr,
    ];
    Some(match code {
        0x45 => Numeric::Eqz(W32),
        0x46..=0x4f => Numeric::Cmp(W32, cmp[(code - 0x46) as usize]),
        0x50 => Numeric::Eqz(W64),
        0x51..=0x5a => Numeric::Cmp(W64, cmp[(code - 0x51) as usize]),
        0x5b..=0x66 => Numeric::Float(code),
        0x67..=0x69 => Numeric::Unary(W32, unary[(code - 0x67) as usize]),
        0x6a..=0x78 => Numeric::Binary(W32, binary[(code - 0x6a) as usize]),
        0x79..=0x7b => Numeric::Unary(W64, unary[(code - 0x79) as usize]),
        0x7c..=0x8a => Numeric::Binary(W64, binary[(code - 0x7c) as usize]),
        0x8b..=0xa6 => Numeric::Float(code),
        0xa7 => Numeric::Wrap,
        0xa8..=0xab => Numeric::Float(code),
        0xac => Numeric::Extend { signed: true },
        0xad => Numeric::Extend { signed: false },
        0xae..=0xbb => Numeric::Float(code),
        0xbc => Numeric::Reinterpret { to: ValType::I32 },
        0xbd => Numeric::Reinterpret { to: ValType::I64 },
        0xbe => Numeric::Reinterpret { to: ValType::F32 },
        0xbf => Numeric::Reinterpret { to: ValType::F64 },
        0xc0 => Numeric::SignExtend {
            width: W32,
            from_bits: 8,
        },
        0xc1 => Numeric::SignExtend {
            width: W32,
            from_bits: 16,
        },
        0xc2 => Numeric::SignExtend {
            width: W64,
            from_bits: 8,
        },
        0xc3 => Numeric::SignExtend {
            width: W64,
            from_bits: 16,
        },
        0xc4 => Numeric::SignExtend {
            width: W64,
            from_bits: 32,
        },
        _ => return None,
    })
}

fn load_kind(code: u8) -> Option<LoadKind> {
    use LoadKind::*;
    Some(match code {
        0x28 => I32,
        0x29 => I64,
        0x2a => F32,
        0x2b => F64,
        0x2c => I32_8S,
        0x2d => I32_8U,
        0x2e => I32_16S,
        0x2f => I32_16U,
        0x30 => I64_8S,
        0x31 => I64_8U,
        0x32 => I64_16S,
        0x33 => I64_16U,
        0x34 => I64_32S,
        0x35 => I64_32U,
        _ => return None,
    })
}

fn store_kind(code: u8) -> Option<StoreKind> {
    use StoreKind::*;
    Some(match code {
        0x36 => I32,
        0x37 => I64,
        0x38 => F32,
        0x39 => F64,
        0x3a => I32_8,
        0x3b => I32_16,
        0x3c => I64_8,
        0x3d => I64_16,
        0x3e => I64_32,
        _ => return None,
    })
}

fn operator(r: &mut Reader<'_>, opcode_at: usize, code: u8) -> Result<Operator, ParseError> {
    let op = match code {
        0x00 => Operator::Unreachable,
        0x01 => Operator::Nop,
        0x02 => Operator::Block(block_type(r)?),
        0x03 => Operator::Loop(block_type(r)?),
        0x04 => Operator::If(block_type(r)?),
        0x05 => Operator::Else,
        0x0b => Operator::End,
        0x0c => Operator::Br(r.var_u32()?),
        0x0d => Operator::BrIf(r.var_u32()?),
        0x0e => {
            let n = r.var_u32()? as usize;
            if n > r.remaining() {
                return Err(r.error("br_table length exceeds body"));
            }
            let mut targets = Vec::with_capacity(n + 1);
            for _ in 0..=n {
                targets.push(r.var_u32()?);
            }
            Operator::BrTable(targets)
        }
        0x0f => Operator::Return,
        0x10 => Operator::Call(r.var_u32()?),
        0x11 => {
            let type_index = r.var_u32()?;
            let table = r.var_u32()?;
            Operator::CallIndirect { type_index, table }
        }
        0x1a => Operator::Drop,
        0x1b => Operator::Select,
        0x1c => {
            // typed select: vec(valtype), semantics identical to select
            let n = r.var_u32()?;
            for _ in 0..n {
                r.u8()?;
            }
            Operator::Select
        }
        0x20 => Operator::LocalGet(r.var_u32()?),
        0x21 => Operator::LocalSet(r.var_u32()?),
        0x22 => Operator::LocalTee(r.var_u32()?),
        0x23 => Operator::GlobalGet(r.var_u32()?),
        0x24 => Operator::GlobalSet(r.var_u32()?),
        0x28..=0x35 => Operator::Load(load_kind(code).unwrap(), memarg(r)?),
        0x36..=0x3e => Operator::Store(store_kind(code).unwrap(), memarg(r)?),
        0x3f => {
            r.u8()?;
            Operator::MemorySize
        }
        0x40 => {
            r.u8()?;
            Operator::MemoryGrow
        }
        0x41 => Operator::I32Const(r.var_i32()?),
        0x42 => Operator::I64Const(r.var_i64()?),
        0x43 => Operator::F32Const(r.u32_le()?),
        0x44 => Operator::F64Const(r.u64_le()?),
        0xfc => {
            let sub = r.var_u32()?;
            if sub <= 7 {
                Operator::Numeric(Numeric::TruncSat(sub))
            } else {
                return Err(ParseError::Malformed {
                    offset: opcode_at,
                    msg: format!("unknown opcode 0xfc {sub}"),
                });
            }
        }
        c => match numeric(c) {
            Some(n) => Operator::Numeric(n),
            None => {
                return Err(ParseError::Malformed {
                    offset: opcode_at,
                    msg: format!("unknown opcode {c:#04x}"),
                })
            }
        },
    };
    Ok(op)
}

/// Decodes a function body into its instruction list.
///
/// The stream must be balanced: every `block`/`loop`/`if` is closed by an
/// `end`, and the final `end` closes the function itself with no trailing bytes.
pub fn decode_function_body(body: &FunctionBody) -> Result<Vec<Instruction>, ParseError> {
    let mut r = Reader::new(&body.code, body.offset);
    let mut out = Vec::new();
    // open constructs; the function body itself counts as one
    let mut depth: usize = 1;
    // whether each open construct is an `if` that may still see `else`
    let mut kinds: Vec<bool> = vec![false];
    while !r.is_empty() {
        let at = r.offset();
        let code = r.u8()?;
        let op = operator(&mut r, at, code)?;
        match &op {
            Operator::Block(_) | Operator::Loop(_) => {
                depth += 1;
                kinds.push(false);
            }
            Operator::If(_) => {
                depth += 1;
                kinds.push(true);
            }
            Operator::Else => {
                if !kinds.last().copied().unwrap_or(false) {
                    return Err(ParseError::Malformed {
                        offset: at,
                        msg: "else without matching if".into(),
                    });
                }
                *kinds.last_mut().unwrap() = false;
            }
            Operator::End => {
                depth -= 1;
                kinds.pop();
            }
            _ => {}
        }
        out.push(Instruction { op, offset: at });
        if depth == 0 {
            if !r.is_empty() {
                return Err(r.error("bytes after final end of function body"));
            }
            return Ok(out);
        }
    }
    Err(ParseError::Malformed {
        offset: body.offset + body.code.len(),
        msg: "function body is missing its terminal end".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body(code: &[u8]) -> FunctionBody {
        FunctionBody {
            locals: vec![],
            code: code.to_vec(),
            offset: 0,
        }
    }

    #[test]
    fn const_then_end() {
        let ins = decode_function_body(&body(&[0x42, 0x00, 0x0b])).unwrap();
        assert_eq!(ins.len(), 2);
        assert_eq!(ins[0].op, Operator::I64Const(0));
        assert_eq!(ins[1].op, Operator::End);
    }

    #[test]
    fn missing_end_is_malformed() {
        assert!(decode_function_body(&body(&[0x42, 0x00])).is_err());
        // nested block closed but function not
        assert!(decode_function_body(&body(&[0x02, 0x40, 0x0b])).is_err());
    }

    #[test]
    fn trailing_bytes_rejected() {
        assert!(decode_function_body(&body(&[0x0b, 0x01])).is_err());
    }

    #[test]
    fn unknown_opcode_rejected() {
        let err = decode_function_body(&body(&[0xfd, 0x00, 0x0b])).unwrap_err();
        assert!(err.to_string().contains("unknown opcode"));
    }

    #[test]
    fn else_outside_if_rejected() {
        assert!(decode_function_body(&body(&[0x02, 0x40, 0x05, 0x0b, 0x0b])).is_err());
    }

    #[test]
    fn br_table_keeps_default_last() {
        // local.get 0; br_table 0 1 2 (default 3) inside four blocks
        let mut code = vec![0x02, 0x40, 0x02, 0x40, 0x02, 0x40, 0x02, 0x40];
        code.extend_from_slice(&[0x20, 0x00, 0x0e, 0x03, 0x00, 0x01, 0x02, 0x03]);
        code.extend_from_slice(&[0x0b, 0x0b, 0x0b, 0x0b, 0x0b]);
        let ins = decode_function_body(&body(&code)).unwrap();
        let table = ins
            .iter()
            .find_map(|i| match &i.op {
                Operator::BrTable(t) => Some(t.clone()),
                _ => None,
            })
            .unwrap();
        assert_eq!(table, vec![0, 1, 2, 3]);
    }
}
