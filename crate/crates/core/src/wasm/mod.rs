//! WebAssembly binary decoding.

mod instr;
mod parse;
mod reader;
mod types;
mod write;

pub use instr::{
    decode_function_body, BlockType, CmpKind, Instruction, IntBinary, IntUnary, IntWidth, LoadKind,
    MemArg, Numeric, Operator, StoreKind,
};
pub use parse::parse_module;
pub use types::{
    ConstExpr, CustomSection, DataSegment, ElementSegment, ExportKind, FuncSignature, FunctionBody,
    GlobalEntry, ImportEntry, ImportKind, Limits, TableEntry, ValType, WasmModule,
};
pub use write::serialize_module;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed binary at offset {offset:#x}: {msg}")]
    Malformed { offset: usize, msg: String },
    #[error("unsupported wasm version {0}")]
    UnsupportedVersion(u32),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_module_is_empty() {
        let m = parse_module(b"\0asm\x01\0\0\0").unwrap();
        assert_eq!(m.version, 1);
        assert!(m.types.is_empty() && m.imports.is_empty() && m.code.is_empty());
        assert!(m.exports.is_empty() && m.data_segments.is_empty());
        assert_eq!(serialize_module(&m), b"\0asm\x01\0\0\0");
    }

    #[test]
    fn bad_magic_and_version() {
        assert!(matches!(
            parse_module(b"\0wsm\x01\0\0\0"),
            Err(ParseError::Malformed { .. })
        ));
        assert_eq!(
            parse_module(b"\0asm\x02\0\0\0"),
            Err(ParseError::UnsupportedVersion(2))
        );
        assert!(parse_module(b"\0asm").is_err());
    }

    #[test]
    fn truncated_section_is_malformed() {
        // type section claims 10 bytes but provides 2
        let bytes = b"\0asm\x01\0\0\0\x01\x0a\x01\x60";
        assert!(matches!(
            parse_module(bytes),
            Err(ParseError::Malformed { .. })
        ));
    }

    #[test]
    fn sections_out_of_order_rejected() {
        // function section (3) before type section (1)
        let bytes = b"\0asm\x01\0\0\0\x03\x01\x00\x01\x01\x00";
        assert!(parse_module(bytes).is_err());
    }
}
