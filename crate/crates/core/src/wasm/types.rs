use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

/// Wasm value types. Reference types only appear in table declarations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ValType {
    I32,
    I64,
    F32,
    F64,
    FuncRef,
    ExternRef,
}

impl ValType {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x7f => ValType::I32,
            0x7e => ValType::I64,
            0x7d => ValType::F32,
            0x7c => ValType::F64,
            0x70 => ValType::FuncRef,
            0x6f => ValType::ExternRef,
            _ => return None,
        })
    }

    pub fn to_byte(self) -> u8 {
        match self {
            ValType::I32 => 0x7f,
            ValType::I64 => 0x7e,
            ValType::F32 => 0x7d,
            ValType::F64 => 0x7c,
            ValType::FuncRef => 0x70,
            ValType::ExternRef => 0x6f,
        }
    }

    /// Width in bits of the bitvector used to model this type.
    pub fn bits(self) -> u32 {
        match self {
            ValType::I32 | ValType::F32 => 32,
            ValType::I64 | ValType::F64 => 64,
            ValType::FuncRef | ValType::ExternRef => 32,
        }
    }
}

impl fmt::Display for ValType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValType::I32 => "i32",
            ValType::I64 => "i64",
            ValType::F32 => "f32",
            ValType::F64 => "f64",
            ValType::FuncRef => "funcref",
            ValType::ExternRef => "externref",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FuncSignature {
    pub params: Vec<ValType>,
    pub results: Vec<ValType>,
}

impl FuncSignature {
    pub fn new(params: impl Into<Vec<ValType>>, results: impl Into<Vec<ValType>>) -> Self {
        Self {
            params: params.into(),
            results: results.into(),
        }
    }
}

impl fmt::Display for FuncSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[ValType]| {
            v.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(f, "({})->({})", join(&self.params), join(&self.results))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub min: u32,
    pub max: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImportKind {
    Function { type_index: u32 },
    Table { elem: ValType, limits: Limits },
    Memory(Limits),
    Global { ty: ValType, mutable: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportEntry {
    pub module: String,
    pub field: String,
    pub kind: ImportKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportKind {
    Function,
    Table,
    Memory,
    Global,
}

impl ExportKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => ExportKind::Function,
            1 => ExportKind::Table,
            2 => ExportKind::Memory,
            3 => ExportKind::Global,
            _ => return None,
        })
    }

    pub fn to_byte(self) -> u8 {
        match self {
            ExportKind::Function => 0,
            ExportKind::Table => 1,
            ExportKind::Memory => 2,
            ExportKind::Global => 3,
        }
    }
}

/// Constant initializer expression. Only single-instruction forms are accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstExpr {
    I32(i32),
    I64(i64),
    F32(u32),
    F64(u64),
    GlobalGet(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalEntry {
    pub ty: ValType,
    pub mutable: bool,
    pub init: ConstExpr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableEntry {
    pub elem: ValType,
    pub limits: Limits,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementSegment {
    pub offset: ConstExpr,
    pub functions: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSegment {
    pub offset: ConstExpr,
    pub bytes: Vec<u8>,
}

/// Locals declaration plus the raw instruction stream of one function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionBody {
    pub locals: Vec<(u32, ValType)>,
    /// Expression bytes, including the terminal `end`.
    pub code: Vec<u8>,
    /// Absolute offset of `code[0]` in the module binary.
    pub offset: usize,
}

impl FunctionBody {
    /// Flattened local types (excluding parameters).
    pub fn local_types(&self) -> Vec<ValType> {
        self.locals
            .iter()
            .flat_map(|&(n, t)| std::iter::repeat_n(t, n as usize))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CustomSection {
    pub name: String,
    pub payload: Vec<u8>,
}

/// Section identity in file order, kept so serialization reproduces the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionSlot {
    Known(u8),
    Custom(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WasmModule {
    pub version: u32,
    pub types: Vec<FuncSignature>,
    pub imports: Vec<ImportEntry>,
    /// Function section: type index of each locally defined function.
    pub functions: Vec<u32>,
    pub tables: Vec<TableEntry>,
    pub memory_limits: Option<Limits>,
    pub globals: Vec<GlobalEntry>,
    pub exports: BTreeMap<String, (ExportKind, u32)>,
    /// Export names in file order.
    pub export_order: Vec<String>,
    pub start: Option<u32>,
    pub elements: Vec<ElementSegment>,
    pub code: Vec<FunctionBody>,
    pub data_segments: Vec<DataSegment>,
    pub data_count: Option<u32>,
    pub custom_sections: Vec<CustomSection>,
    /// Function names from the `name` custom section, when present.
    pub function_names: BTreeMap<u32, String>,
    pub(crate) layout: Vec<SectionSlot>,
}

impl WasmModule {
    pub fn imported_function_count(&self) -> u32 {
        self.imports
            .iter()
            .filter(|i| matches!(i.kind, ImportKind::Function { .. }))
            .count() as u32
    }

    pub fn total_function_count(&self) -> u32 {
        self.imported_function_count() + self.functions.len() as u32
    }

    pub fn is_imported(&self, func_index: u32) -> bool {
        func_index < self.imported_function_count()
    }

    /// Import entry for a function index in the import range.
    pub fn imported_function(&self, func_index: u32) -> Option<&ImportEntry> {
        self.imports
            .iter()
            .filter(|i| matches!(i.kind, ImportKind::Function { .. }))
            .nth(func_index as usize)
    }

    pub fn func_type_index(&self, func_index: u32) -> Option<u32> {
        let imported = self.imported_function_count();
        if func_index < imported {
            match self.imported_function(func_index)?.kind {
                ImportKind::Function { type_index } => Some(type_index),
                _ => None,
            }
        } else {
            self.functions
                .get((func_index - imported) as usize)
                .copied()
        }
    }

    pub fn func_signature(&self, func_index: u32) -> Option<&FuncSignature> {
        self.types.get(self.func_type_index(func_index)? as usize)
    }

    /// Body of a locally defined function, addressed in the flat index space.
    pub fn body(&self, func_index: u32) -> Option<&FunctionBody> {
        let imported = self.imported_function_count();
        func_index
            .checked_sub(imported)
            .and_then(|i| self.code.get(i as usize))
    }

    pub fn local_function_indices(&self) -> impl Iterator<Item = u32> + '_ {
        let imported = self.imported_function_count();
        (0..self.functions.len() as u32).map(move |i| i + imported)
    }

    pub fn global_types(&self) -> Vec<(ValType, bool)> {
        let mut out: Vec<_> = self
            .imports
            .iter()
            .filter_map(|i| match i.kind {
                ImportKind::Global { ty, mutable } => Some((ty, mutable)),
                _ => None,
            })
            .collect();
        out.extend(self.globals.iter().map(|g| (g.ty, g.mutable)));
        out
    }

    /// Human-readable function label for reports.
    pub fn function_label(&self, func_index: u32) -> String {
        if let Some(imp) = self.imported_function(func_index) {
            return format!("{}.{}", imp.module, imp.field);
        }
        match self.function_names.get(&func_index) {
            Some(name) => format!("${name}"),
            None => format!("func[{func_index}]"),
        }
    }

    /// Resolves the function table: slot index to function index.
    pub fn table_slots(&self) -> BTreeMap<u32, u32> {
        let mut slots = BTreeMap::new();
        for seg in &self.elements {
            let base = match seg.offset {
                ConstExpr::I32(v) => v as u32,
                _ => continue,
            };
            for (i, &f) in seg.functions.iter().enumerate() {
                slots.insert(base + i as u32, f);
            }
        }
        slots
    }
}
