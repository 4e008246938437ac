//! Re-serialization of a parsed module, in its original section layout.

use super::reader::{write_i64, write_name, write_u32};
use super::types::*;

fn vec_of<T>(out: &mut Vec<u8>, items: &[T], mut f: impl FnMut(&mut Vec<u8>, &T)) {
    write_u32(out, items.len() as u32);
    for item in items {
        f(out, item);
    }
}

fn limits(out: &mut Vec<u8>, l: &Limits) {
    match l.max {
        None => {
            out.push(0x00);
            write_u32(out, l.min);
        }
        Some(max) => {
            out.push(0x01);
            write_u32(out, l.min);
            write_u32(out, max);
        }
    }
}

fn const_expr(out: &mut Vec<u8>, e: &ConstExpr) {
    match *e {
        ConstExpr::I32(v) => {
            out.push(0x41);
            write_i64(out, i64::from(v));
        }
        ConstExpr::I64(v) => {
            out.push(0x42);
            write_i64(out, v);
        }
        ConstExpr::F32(bits) => {
            out.push(0x43);
            out.extend_from_slice(&bits.to_le_bytes());
        }
        ConstExpr::F64(bits) => {
            out.push(0x44);
            out.extend_from_slice(&bits.to_le_bytes());
        }
        ConstExpr::GlobalGet(i) => {
            out.push(0x23);
            write_u32(out, i);
        }
    }
    out.push(0x0b);
}

fn section_payload(m: &WasmModule, id: u8) -> Vec<u8> {
    let mut out = Vec::new();
    match id {
        1 => vec_of(&mut out, &m.types, |o, t| {
            o.push(0x60);
            vec_of(o, &t.params, |o, v| o.push(v.to_byte()));
            vec_of(o, &t.results, |o, v| o.push(v.to_byte()));
        }),
        2 => vec_of(&mut out, &m.imports, |o, imp| {
            write_name(o, &imp.module);
            write_name(o, &imp.field);
            match &imp.kind {
                ImportKind::Function { type_index } => {
                    o.push(0x00);
                    write_u32(o, *type_index);
                }
                ImportKind::Table { elem, limits: l } => {
                    o.push(0x01);
                    o.push(elem.to_byte());
                    limits(o, l);
                }
                ImportKind::Memory(l) => {
                    o.push(0x02);
                    limits(o, l);
                }
                ImportKind::Global { ty, mutable } => {
                    o.push(0x03);
                    o.push(ty.to_byte());
                    o.push(u8::from(*mutable));
                }
            }
        }),
        3 => vec_of(&mut out, &m.functions, |o, t| write_u32(o, *t)),
        4 => vec_of(&mut out, &m.tables, |o, t| {
            o.push(t.elem.to_byte());
            limits(o, &t.limits);
        }),
        5 => {
            let mems: Vec<Limits> = m.memory_limits.into_iter().collect();
            vec_of(&mut out, &mems, limits);
        }
        6 => vec_of(&mut out, &m.globals, |o, g| {
            o.push(g.ty.to_byte());
            o.push(u8::from(g.mutable));
            const_expr(o, &g.init);
        }),
        7 => vec_of(&mut out, &m.export_order, |o, name| {
            let (kind, idx) = m.exports[name];
            write_name(o, name);
            o.push(kind.to_byte());
            write_u32(o, idx);
        }),
        8 => write_u32(&mut out, m.start.unwrap_or(0)),
        9 => vec_of(&mut out, &m.elements, |o, seg| {
            write_u32(o, 0);
            const_expr(o, &seg.offset);
            vec_of(o, &seg.functions, |o, f| write_u32(o, *f));
        }),
        10 => vec_of(&mut out, &m.code, |o, body| {
            let mut b = Vec::new();
            vec_of(&mut b, &body.locals, |b, &(n, t)| {
                write_u32(b, n);
                b.push(t.to_byte());
            });
            b.extend_from_slice(&body.code);
            write_u32(o, b.len() as u32);
            o.extend_from_slice(&b);
        }),
        11 => vec_of(&mut out, &m.data_segments, |o, seg| {
            write_u32(o, 0);
            const_expr(o, &seg.offset);
            write_u32(o, seg.bytes.len() as u32);
            o.extend_from_slice(&seg.bytes);
        }),
        12 => write_u32(&mut out, m.data_count.unwrap_or(0)),
        _ => {}
    }
    out
}

/// Serializes a module back to the binary format using canonical LEB128.
///
/// Modules produced by a canonical encoder round-trip byte for byte.
pub fn serialize_module(m: &WasmModule) -> Vec<u8> {
    let mut out = b"\0asm".to_vec();
    out.extend_from_slice(&m.version.to_le_bytes());
    for slot in &m.layout {
        let (id, payload) = match *slot {
            SectionSlot::Known(id) => (id, section_payload(m, id)),
            SectionSlot::Custom(i) => {
                let c = &m.custom_sections[i];
                let mut p = Vec::new();
                write_name(&mut p, &c.name);
                p.extend_from_slice(&c.payload);
                (0, p)
            }
        };
        out.push(id);
        write_u32(&mut out, payload.len() as u32);
        out.extend_from_slice(&payload);
    }
    out
}
