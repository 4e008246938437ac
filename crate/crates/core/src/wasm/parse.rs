use std::collections::BTreeMap;

use super::reader::Reader;
use super::types::*;
use super::ParseError;

const MAGIC: &[u8; 4] = b"\0asm";

fn val_type(r: &mut Reader<'_>) -> Result<ValType, ParseError> {
    let at = r.offset();
    let b = r.u8()?;
    ValType::from_byte(b).ok_or(ParseError::Malformed {
        offset: at,
        msg: format!("bad value type {b:#x}"),
    })
}

fn limits(r: &mut Reader<'_>) -> Result<Limits, ParseError> {
    let at = r.offset();
    match r.u8()? {
        0x00 => Ok(Limits {
            min: r.var_u32()?,
            max: None,
        }),
        0x01 => Ok(Limits {
            min: r.var_u32()?,
            max: Some(r.var_u32()?),
        }),
        f => Err(ParseError::Malformed {
            offset: at,
            msg: format!("bad limits flag {f:#x}"),
        }),
    }
}

fn const_expr(r: &mut Reader<'_>) -> Result<ConstExpr, ParseError> {
    let at = r.offset();
    let e = match r.u8()? {
        0x41 => ConstExpr::I32(r.var_i32()?),
        0x42 => ConstExpr::I64(r.var_i64()?),
        0x43 => ConstExpr::F32(r.u32_le()?),
        0x44 => ConstExpr::F64(r.u64_le()?),
        0x23 => ConstExpr::GlobalGet(r.var_u32()?),
        op => {
            return Err(ParseError::Malformed {
                offset: at,
                msg: format!("initializer must be a single constant, found opcode {op:#x}"),
            })
        }
    };
    let at = r.offset();
    if r.u8()? != 0x0b {
        return Err(ParseError::Malformed {
            offset: at,
            msg: "initializer must be a single constant followed by end".into(),
        });
    }
    Ok(e)
}

fn vec_of<T>(
    r: &mut Reader<'_>,
    mut item: impl FnMut(&mut Reader<'_>) -> Result<T, ParseError>,
) -> Result<Vec<T>, ParseError> {
    let n = r.var_u32()? as usize;
    // every item consumes at least one byte
    if n > r.remaining() {
        return Err(r.error(format!("vector length {n} exceeds section size")));
    }
    (0..n).map(|_| item(r)).collect()
}

fn function_type(r: &mut Reader<'_>) -> Result<FuncSignature, ParseError> {
    let at = r.offset();
    if r.u8()? != 0x60 {
        return Err(ParseError::Malformed {
            offset: at,
            msg: "function type must start with 0x60".into(),
        });
    }
    Ok(FuncSignature {
        params: vec_of(r, val_type)?,
        results: vec_of(r, val_type)?,
    })
}

fn import_entry(r: &mut Reader<'_>) -> Result<ImportEntry, ParseError> {
    let module = r.name()?;
    let field = r.name()?;
    let at = r.offset();
    let kind = match r.u8()? {
        0x00 => ImportKind::Function {
            type_index: r.var_u32()?,
        },
        0x01 => ImportKind::Table {
            elem: val_type(r)?,
            limits: limits(r)?,
        },
        0x02 => ImportKind::Memory(limits(r)?),
        0x03 => ImportKind::Global {
            ty: val_type(r)?,
            mutable: r.u8()? == 1,
        },
        k => {
            return Err(ParseError::Malformed {
                offset: at,
                msg: format!("bad import kind {k:#x}"),
            })
        }
    };
    Ok(ImportEntry {
        module,
        field,
        kind,
    })
}

fn function_body(r: &mut Reader<'_>) -> Result<FunctionBody, ParseError> {
    let size = r.var_u32()? as usize;
    let mut body = r.sub(size)?;
    let locals = vec_of(&mut body, |b| Ok((b.var_u32()?, val_type(b)?)))?;
    let total: u64 = locals.iter().map(|&(n, _)| u64::from(n)).sum();
    if total > 50_000 {
        return Err(body.error("too many locals"));
    }
    let offset = body.offset();
    let code = body.bytes(body.remaining())?.to_vec();
    Ok(FunctionBody {
        locals,
        code,
        offset,
    })
}

fn name_section(payload: &[u8], base: usize) -> Result<BTreeMap<u32, String>, ParseError> {
    let mut r = Reader::new(payload, base);
    let mut names = BTreeMap::new();
    while !r.is_empty() {
        let id = r.u8()?;
        let size = r.var_u32()? as usize;
        let mut sub = r.sub(size)?;
        if id == 1 {
            for (idx, name) in vec_of(&mut sub, |s| Ok((s.var_u32()?, s.name()?)))? {
                names.insert(idx, name);
            }
        }
    }
    Ok(names)
}

/// Decodes a version-1 Wasm binary.
pub fn parse_module(bytes: &[u8]) -> Result<WasmModule, ParseError> {
    let mut r = Reader::new(bytes, 0);
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(ParseError::Malformed {
            offset: 0,
            msg: "missing \\0asm magic".into(),
        });
    }
    r.bytes(4)?;
    let version = r.u32_le()?;
    if version != 1 {
        return Err(ParseError::UnsupportedVersion(version));
    }
    let mut m = WasmModule {
        version,
        ..WasmModule::default()
    };
    let mut last_known = 0u8;
    let mut function_count: Option<usize> = None;
    while !r.is_empty() {
        let id_at = r.offset();
        let id = r.u8()?;
        let size = r.var_u32()? as usize;
        let mut s = r.sub(size)?;
        if id != 0 {
            // known sections appear at most once, in increasing order (data count sits before code)
            let rank = |id: u8| match id {
                1..=9 => id,
                12 => 10,
                10 => 11,
                11 => 12,
                _ => 0,
            };
            if rank(id) == 0 {
                return Err(ParseError::Malformed {
                    offset: id_at,
                    msg: format!("unknown section id {id}"),
                });
            }
            if rank(id) <= last_known {
                return Err(ParseError::Malformed {
                    offset: id_at,
                    msg: format!("section {id} out of order or duplicated"),
                });
            }
            last_known = rank(id);
            m.layout.push(SectionSlot::Known(id));
        }
        match id {
            0 => {
                let name = s.name()?;
                let payload_at = s.offset();
                let payload = s.bytes(s.remaining())?.to_vec();
                if name == "name" {
                    // a damaged name section only costs readability
                    m.function_names = name_section(&payload, payload_at).unwrap_or_default();
                }
                m.layout.push(SectionSlot::Custom(m.custom_sections.len()));
                m.custom_sections.push(CustomSection { name, payload });
            }
            1 => m.types = vec_of(&mut s, function_type)?,
            2 => m.imports = vec_of(&mut s, import_entry)?,
            3 => {
                m.functions = vec_of(&mut s, |s| s.var_u32())?;
                function_count = Some(m.functions.len());
            }
            4 => {
                m.tables = vec_of(&mut s, |s| {
                    Ok(TableEntry {
                        elem: val_type(s)?,
                        limits: limits(s)?,
                    })
                })?
            }
            5 => {
                let mems = vec_of(&mut s, limits)?;
                if mems.len() > 1 {
                    return Err(s.error("at most one memory is supported"));
                }
                m.memory_limits = mems.first().copied();
            }
            6 => {
                m.globals = vec_of(&mut s, |s| {
                    let ty = val_type(s)?;
                    let mutable = s.u8()? == 1;
                    Ok(GlobalEntry {
                        ty,
                        mutable,
                        init: const_expr(s)?,
                    })
                })?
            }
            7 => {
                for (name, kind, idx) in vec_of(&mut s, |s| {
                    let name = s.name()?;
                    let at = s.offset();
                    let kind = ExportKind::from_byte(s.u8()?).ok_or(ParseError::Malformed {
                        offset: at,
                        msg: "bad export kind".into(),
                    })?;
                    Ok((name, kind, s.var_u32()?))
                })? {
                    if m.exports.insert(name.clone(), (kind, idx)).is_some() {
                        return Err(ParseError::Malformed {
                            offset: id_at,
                            msg: format!("duplicate export {name}"),
                        });
                    }
                    m.export_order.push(name);
                }
            }
            8 => m.start = Some(s.var_u32()?),
            9 => {
                m.elements = vec_of(&mut s, |s| {
                    let at = s.offset();
                    let flags = s.var_u32()?;
                    if flags != 0 {
                        return Err(ParseError::Malformed {
                            offset: at,
                            msg: format!("unsupported element segment kind {flags}"),
                        });
                    }
                    Ok(ElementSegment {
                        offset: const_expr(s)?,
                        functions: vec_of(s, |s| s.var_u32())?,
                    })
                })?
            }
            10 => {
                m.code = vec_of(&mut s, function_body)?;
                if function_count.unwrap_or(0) != m.code.len() {
                    return Err(ParseError::Malformed {
                        offset: id_at,
                        msg: format!(
                            "code section has {} bodies, function section declares {}",
                            m.code.len(),
                            function_count.unwrap_or(0)
                        ),
                    });
                }
            }
            11 => {
                m.data_segments = vec_of(&mut s, |s| {
                    let at = s.offset();
                    let flags = s.var_u32()?;
                    if flags != 0 {
                        return Err(ParseError::Malformed {
                            offset: at,
                            msg: format!("unsupported data segment kind {flags}"),
                        });
                    }
                    let offset = const_expr(s)?;
                    if !matches!(offset, ConstExpr::I32(_)) {
                        return Err(ParseError::Malformed {
                            offset: at,
                            msg: "data segment offset must be an i32 constant".into(),
                        });
                    }
                    let len = s.var_u32()? as usize;
                    Ok(DataSegment {
                        offset,
                        bytes: s.bytes(len)?.to_vec(),
                    })
                })?
            }
            12 => m.data_count = Some(s.var_u32()?),
            _ => unreachable!(),
        }
        if !s.is_empty() {
            return Err(s.error(format!("section {id} has {} trailing bytes", s.remaining())));
        }
    }
    if function_count.unwrap_or(0) != m.code.len() {
        return Err(ParseError::Malformed {
            offset: bytes.len(),
            msg: "function section without matching code section".into(),
        });
    }
    validate_indices(&m)?;
    Ok(m)
}

fn validate_indices(m: &WasmModule) -> Result<(), ParseError> {
    let total = m.total_function_count();
    let bad = |what: String| ParseError::Malformed {
        offset: 0,
        msg: what,
    };
    for imp in &m.imports {
        if let ImportKind::Function { type_index } = imp.kind {
            if type_index as usize >= m.types.len() {
                return Err(bad(format!(
                    "import {} uses unknown type {type_index}",
                    imp.field
                )));
            }
        }
    }
    for (i, &t) in m.functions.iter().enumerate() {
        if t as usize >= m.types.len() {
            return Err(bad(format!("function {i} uses unknown type {t}")));
        }
    }
    for (name, &(kind, idx)) in &m.exports {
        if kind == ExportKind::Function && idx >= total {
            return Err(bad(format!(
                "export {name} refers to missing function {idx}"
            )));
        }
    }
    for seg in &m.elements {
        if let Some(f) = seg.functions.iter().find(|&&f| f >= total) {
            return Err(bad(format!("element refers to missing function {f}")));
        }
    }
    if let Some(s) = m.start {
        if s >= total {
            return Err(bad(format!("start refers to missing function {s}")));
        }
    }
    Ok(())
}
