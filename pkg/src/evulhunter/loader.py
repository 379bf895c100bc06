"""WebAssembly 1.0 binary parser.

Parses a module into typed sections with every function body decoded to a
flat instruction list.  Structured-control markers (block/loop/if/else/end)
are kept as ordinary instructions; each instruction records the absolute
byte offset of its opcode in the input.  Custom sections (including "name")
are skipped: analysis must not rely on debug info that stripped contracts
lack.  Opcodes outside the MVP core set are a hard error rather than being
skipped silently.
"""

import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .errors import (
    BadMagic,
    IndexOutOfRange,
    MalformedLeb128,
    TruncatedSection,
    UnknownOpcode,
)

MAGIC = b"\x00asm\x01\x00\x00\x00"

VAL_TYPES = {0x7F: "i32", 0x7E: "i64", 0x7D: "f32", 0x7C: "f64"}
BLOCK_TYPES = {**VAL_TYPES, 0x40: None}


class FuncType(NamedTuple):
    params: tuple
    results: tuple


class Import(NamedTuple):
    module: str
    field: str
    kind: str        # 'func', 'table', 'memory', 'global'
    type_index: Optional[int]  # set for kind == 'func'


class Instruction(NamedTuple):
    op: str
    imm: tuple
    offset: int      # absolute byte offset of the opcode in the module


@dataclass
class FuncBody:
    locals: list                 # [(count, valtype), ...]
    instructions: list           # [Instruction, ...]


@dataclass
class WasmModule:
    types: list = field(default_factory=list)
    imports: list = field(default_factory=list)
    functions: list = field(default_factory=list)    # type indexes of defined funcs
    table_elements: dict = field(default_factory=dict)  # table slot -> func index
    exports: dict = field(default_factory=dict)         # name -> func index
    bodies: list = field(default_factory=list)
    data_segments: list = field(default_factory=list)   # [(offset, bytes), ...]
    size: int = 0

    @property
    def num_imported_funcs(self):
        return sum(1 for imp in self.imports if imp.kind == "func")

    @property
    def num_funcs(self):
        return self.num_imported_funcs + len(self.functions)

    def func_type(self, fidx: int) -> FuncType:
        """Signature of a function in the combined import+defined index space."""
        n_imp = self.num_imported_funcs
        if fidx < n_imp:
            imports = [imp for imp in self.imports if imp.kind == "func"]
            return self.types[imports[fidx].type_index]
        if fidx >= self.num_funcs:
            raise IndexOutOfRange(f"function index {fidx} out of range")
        return self.types[self.functions[fidx - n_imp]]

    def body_of(self, fidx: int) -> FuncBody:
        n_imp = self.num_imported_funcs
        if fidx < n_imp:
            raise IndexOutOfRange(f"function {fidx} is an import, has no body")
        return self.bodies[fidx - n_imp]

    def is_import(self, fidx: int) -> bool:
        return fidx < self.num_imported_funcs

    def import_field(self, fidx: int) -> str:
        imports = [imp for imp in self.imports if imp.kind == "func"]
        return imports[fidx].field


class Reader:
    """Bounded byte cursor with LEB128 decoding."""

    def __init__(self, data: bytes, pos: int = 0, end: int = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def u8(self) -> int:
        if self.pos >= self.end:
            raise TruncatedSection(f"unexpected end of input at offset {self.pos}")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def raw(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedSection(f"need {n} bytes at offset {self.pos}, have {self.end - self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def leb_u(self, max_bits: int = 32) -> int:
        result = shift = 0
        while True:
            b = self.u8()
            result |= (b & 0x7F) << shift
            shift += 7
            if not b & 0x80:
                break
            if shift >= max_bits + 7:
                raise MalformedLeb128(f"unsigned LEB128 longer than {max_bits} bits at offset {self.pos}")
        if result >> max_bits:
            raise MalformedLeb128(f"unsigned LEB128 exceeds {max_bits} bits at offset {self.pos}")
        return result

    def leb_s(self, max_bits: int = 64) -> int:
        result = shift = 0
        while True:
            b = self.u8()
            result |= (b & 0x7F) << shift
            shift += 7
            if not b & 0x80:
                break
            if shift >= max_bits + 7:
                raise MalformedLeb128(f"signed LEB128 longer than {max_bits} bits at offset {self.pos}")
        if b & 0x40:
            result |= -1 << shift
        return result

    def name(self) -> str:
        n = self.leb_u()
        try:
            return self.raw(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TruncatedSection(f"malformed UTF-8 name at offset {self.pos}: {exc}") from None


# Opcode table: opcode byte -> (mnemonic, immediate kind).
# Immediate kinds: '' none, 'bt' blocktype, 'u' single u32 index,
# 'brt' br_table, 'ci' call_indirect, 'mem' memarg, 'i32'/'i64' const,
# 'f32'/'f64' const, 'z' single zero byte.
OPCODES = {
    0x00: ("unreachable", ""), 0x01: ("nop", ""),
    0x02: ("block", "bt"), 0x03: ("loop", "bt"), 0x04: ("if", "bt"),
    0x05: ("else", ""), 0x0B: ("end", ""),
    0x0C: ("br", "u"), 0x0D: ("br_if", "u"), 0x0E: ("br_table", "brt"),
    0x0F: ("return", ""), 0x10: ("call", "u"), 0x11: ("call_indirect", "ci"),
    0x1A: ("drop", ""), 0x1B: ("select", ""),
    0x20: ("local.get", "u"), 0x21: ("local.set", "u"), 0x22: ("local.tee", "u"),
    0x23: ("global.get", "u"), 0x24: ("global.set", "u"),
    0x28: ("i32.load", "mem"), 0x29: ("i64.load", "mem"),
    0x2A: ("f32.load", "mem"), 0x2B: ("f64.load", "mem"),
    0x2C: ("i32.load8_s", "mem"), 0x2D: ("i32.load8_u", "mem"),
    0x2E: ("i32.load16_s", "mem"), 0x2F: ("i32.load16_u", "mem"),
    0x30: ("i64.load8_s", "mem"), 0x31: ("i64.load8_u", "mem"),
    0x32: ("i64.load16_s", "mem"), 0x33: ("i64.load16_u", "mem"),
    0x34: ("i64.load32_s", "mem"), 0x35: ("i64.load32_u", "mem"),
    0x36: ("i32.store", "mem"), 0x37: ("i64.store", "mem"),
    0x38: ("f32.store", "mem"), 0x39: ("f64.store", "mem"),
    0x3A: ("i32.store8", "mem"), 0x3B: ("i32.store16", "mem"),
    0x3C: ("i64.store8", "mem"), 0x3D: ("i64.store16", "mem"),
    0x3E: ("i64.store32", "mem"),
    0x3F: ("memory.size", "z"), 0x40: ("memory.grow", "z"),
    0x41: ("i32.const", "i32"), 0x42: ("i64.const", "i64"),
    0x43: ("f32.const", "f32"), 0x44: ("f64.const", "f64"),
}

_SIMPLE = [
    (0x45, ["i32.eqz", "i32.eq", "i32.ne", "i32.lt_s", "i32.lt_u", "i32.gt_s",
            "i32.gt_u", "i32.le_s", "i32.le_u", "i32.ge_s", "i32.ge_u"]),
    (0x50, ["i64.eqz", "i64.eq", "i64.ne", "i64.lt_s", "i64.lt_u", "i64.gt_s",
            "i64.gt_u", "i64.le_s", "i64.le_u", "i64.ge_s", "i64.ge_u"]),
    (0x5B, ["f32.eq", "f32.ne", "f32.lt", "f32.gt", "f32.le", "f32.ge"]),
    (0x61, ["f64.eq", "f64.ne", "f64.lt", "f64.gt", "f64.le", "f64.ge"]),
    (0x67, ["i32.clz", "i32.ctz", "i32.popcnt", "i32.add", "i32.sub", "i32.mul",
            "i32.div_s", "i32.div_u", "i32.rem_s", "i32.rem_u", "i32.and",
            "i32.or", "i32.xor", "i32.shl", "i32.shr_s", "i32.shr_u",
            "i32.rotl", "i32.rotr"]),
    (0x79, ["i64.clz", "i64.ctz", "i64.popcnt", "i64.add", "i64.sub", "i64.mul",
            "i64.div_s", "i64.div_u", "i64.rem_s", "i64.rem_u", "i64.and",
            "i64.or", "i64.xor", "i64.shl", "i64.shr_s", "i64.shr_u",
            "i64.rotl", "i64.rotr"]),
    (0x8B, ["f32.abs", "f32.neg", "f32.ceil", "f32.floor", "f32.trunc",
            "f32.nearest", "f32.sqrt", "f32.add", "f32.sub", "f32.mul",
            "f32.div", "f32.min", "f32.max", "f32.copysign"]),
    (0x99, ["f64.abs", "f64.neg", "f64.ceil", "f64.floor", "f64.trunc",
            "f64.nearest", "f64.sqrt", "f64.add", "f64.sub", "f64.mul",
            "f64.div", "f64.min", "f64.max", "f64.copysign"]),
    (0xA7, ["i32.wrap_i64", "i32.trunc_f32_s", "i32.trunc_f32_u",
            "i32.trunc_f64_s", "i32.trunc_f64_u", "i64.extend_i32_s",
            "i64.extend_i32_u", "i64.trunc_f32_s", "i64.trunc_f32_u",
            "i64.trunc_f64_s", "i64.trunc_f64_u", "f32.convert_i32_s",
            "f32.convert_i32_u", "f32.convert_i64_s", "f32.convert_i64_u",
            "f32.demote_f64", "f64.convert_i32_s", "f64.convert_i32_u",
            "f64.convert_i64_s", "f64.convert_i64_u", "f64.promote_f32",
            "i32.reinterpret_f32", "i64.reinterpret_f64",
            "f32.reinterpret_i32", "f64.reinterpret_i64"]),
]
for _base, _ops in _SIMPLE:
    for _i, _m in enumerate(_ops):
        OPCODES[_base + _i] = (_m, "")
del _base, _ops, _i, _m


def decode_instructions(r: Reader) -> list:
    """Decode instructions until the end marker closing the outermost frame."""
    instrs = []
    depth = 0
    while True:
        offset = r.pos
        opbyte = r.u8()
        entry = OPCODES.get(opbyte)
        if entry is None:
            raise UnknownOpcode(f"opcode 0x{opbyte:02x} at offset {offset} is outside the WASM 1.0 core set")
        op, kind = entry
        if kind == "":
            imm = ()
        elif kind == "bt":
            bt = r.u8()
            if bt not in BLOCK_TYPES:
                raise UnknownOpcode(f"block type 0x{bt:02x} at offset {offset} is not an MVP block type")
            imm = (BLOCK_TYPES[bt],)
        elif kind == "u":
            imm = (r.leb_u(),)
        elif kind == "brt":
            n = r.leb_u()
            targets = tuple(r.leb_u() for _ in range(n))
            imm = (targets, r.leb_u())
        elif kind == "ci":
            type_index = r.leb_u()
            table = r.u8()
            if table != 0:
                raise UnknownOpcode(f"call_indirect table {table} at offset {offset} (MVP has one table)")
            imm = (type_index,)
        elif kind == "mem":
            imm = (r.leb_u(), r.leb_u())  # align, offset
        elif kind == "i32":
            imm = (r.leb_s(32) & 0xFFFFFFFF,)
        elif kind == "i64":
            imm = (r.leb_s(64) & 0xFFFFFFFFFFFFFFFF,)
        elif kind == "f32":
            imm = (struct.unpack("<f", r.raw(4))[0],)
        else:  # f64
            imm = (struct.unpack("<d", r.raw(8))[0],)
        instrs.append(Instruction(op, imm, offset))
        if op in ("block", "loop", "if"):
            depth += 1
        elif op == "end":
            if depth == 0:
                return instrs
            depth -= 1


def _const_expr(r: Reader) -> int:
    """Evaluate an init expression (i32.const k / end); other forms yield 0."""
    instrs = decode_instructions(r)
    for ins in instrs:
        if ins.op in ("i32.const", "i64.const"):
            return ins.imm[0]
    return 0


def parse_module(data: bytes) -> WasmModule:
    """Parse a binary module. Raises a ParseError subclass on malformed input."""
    if len(data) < 8 or data[:8] != MAGIC:
        raise BadMagic("missing \\0asm magic or version != 1")
    mod = WasmModule(size=len(data))
    r = Reader(data, 8)
    seen = set()
    while r.pos < r.end:
        sec_id = r.u8()
        size = r.leb_u()
        if r.pos + size > r.end:
            raise TruncatedSection(f"section {sec_id} claims {size} bytes, only {r.end - r.pos} remain")
        body = Reader(data, r.pos, r.pos + size)
        r.pos += size
        if sec_id == 0:  # custom: skipped, may repeat
            continue
        if sec_id in seen:
            raise TruncatedSection(f"section {sec_id} appears twice")
        seen.add(sec_id)
        if sec_id == 1:
            _parse_types(body, mod)
        elif sec_id == 2:
            _parse_imports(body, mod)
        elif sec_id == 3:
            count = body.leb_u()
            mod.functions = [body.leb_u() for _ in range(count)]
        elif sec_id == 7:
            _parse_exports(body, mod)
        elif sec_id == 9:
            _parse_elements(body, mod)
        elif sec_id == 10:
            _parse_code(body, mod)
        elif sec_id == 11:
            _parse_data(body, mod)
        elif sec_id in (4, 5, 6, 8):
            pass  # table/memory/global/start: not needed for detection
        else:
            raise TruncatedSection(f"unknown section id {sec_id}")
    _check_module(mod)
    return mod


def _parse_types(r: Reader, mod: WasmModule):
    for _ in range(r.leb_u()):
        form = r.u8()
        if form != 0x60:
            raise UnknownOpcode(f"function type form 0x{form:02x}, expected 0x60")
        params = tuple(_val_type(r) for _ in range(r.leb_u()))
        results = tuple(_val_type(r) for _ in range(r.leb_u()))
        mod.types.append(FuncType(params, results))


def _val_type(r: Reader) -> str:
    b = r.u8()
    if b not in VAL_TYPES:
        raise UnknownOpcode(f"value type 0x{b:02x}")
    return VAL_TYPES[b]


def _parse_imports(r: Reader, mod: WasmModule):
    for _ in range(r.leb_u()):
        module = r.name()
        field_name = r.name()
        kind = r.u8()
        if kind == 0x00:
            mod.imports.append(Import(module, field_name, "func", r.leb_u()))
        elif kind == 0x01:  # table
            r.u8()
            _limits(r)
            mod.imports.append(Import(module, field_name, "table", None))
        elif kind == 0x02:  # memory
            _limits(r)
            mod.imports.append(Import(module, field_name, "memory", None))
        elif kind == 0x03:  # global
            r.u8()
            r.u8()
            mod.imports.append(Import(module, field_name, "global", None))
        else:
            raise UnknownOpcode(f"import kind 0x{kind:02x}")


def _limits(r: Reader):
    flags = r.u8()
    r.leb_u()
    if flags & 1:
        r.leb_u()


def _parse_exports(r: Reader, mod: WasmModule):
    for _ in range(r.leb_u()):
        ex_name = r.name()
        kind = r.u8()
        idx = r.leb_u()
        if kind == 0x00:
            mod.exports[ex_name] = idx


def _parse_elements(r: Reader, mod: WasmModule):
    for _ in range(r.leb_u()):
        table = r.leb_u()
        if table != 0:
            raise IndexOutOfRange(f"element segment for table {table} (MVP has one table)")
        base = _const_expr(r)
        for i in range(r.leb_u()):
            mod.table_elements[base + i] = r.leb_u()


def _parse_code(r: Reader, mod: WasmModule):
    for _ in range(r.leb_u()):
        size = r.leb_u()
        if r.pos + size > r.end:
            raise TruncatedSection("function body exceeds code section")
        body_r = Reader(r.data, r.pos, r.pos + size)
        r.pos += size
        locals_ = []
        for _ in range(body_r.leb_u()):
            count = body_r.leb_u()
            locals_.append((count, _val_type(body_r)))
        mod.bodies.append(FuncBody(locals_, decode_instructions(body_r)))


def _parse_data(r: Reader, mod: WasmModule):
    for _ in range(r.leb_u()):
        mem = r.leb_u()
        if mem != 0:
            raise IndexOutOfRange(f"data segment for memory {mem}")
        offset = _const_expr(r)
        mod.data_segments.append((offset, bytes(r.raw(r.leb_u()))))


def _check_module(mod: WasmModule):
    if len(mod.bodies) != len(mod.functions):
        raise TruncatedSection(
            f"{len(mod.functions)} declared functions but {len(mod.bodies)} bodies")
    n = mod.num_funcs
    for t in mod.functions:
        if t >= len(mod.types):
            raise IndexOutOfRange(f"type index {t} out of range")
    for imp in mod.imports:
        if imp.kind == "func" and imp.type_index >= len(mod.types):
            raise IndexOutOfRange(f"import type index {imp.type_index} out of range")
    for ex_name, idx in mod.exports.items():
        if idx >= n:
            raise IndexOutOfRange(f"export {ex_name!r} references function {idx} >= {n}")
    for slot, idx in mod.table_elements.items():
        if idx >= n:
            raise IndexOutOfRange(f"table slot {slot} references function {idx} >= {n}")
    for body in mod.bodies:
        for ins in body.instructions:
            if ins.op == "call" and ins.imm[0] >= n:
                raise IndexOutOfRange(f"call target {ins.imm[0]} >= {n} at offset {ins.offset}")
            if ins.op == "call_indirect" and ins.imm[0] >= len(mod.types):
                raise IndexOutOfRange(f"call_indirect type {ins.imm[0]} at offset {ins.offset}")


def find_export(mod: WasmModule, name: str):
    """Function index of a named export, or None."""
    return mod.exports.get(name)


def import_index_of(mod: WasmModule, field_name: str):
    """Index of a named host-function import in the combined function index
    space (imports occupy indexes 0..num_imported_funcs), or None."""
    i = 0
    for imp in mod.imports:
        if imp.kind != "func":
            continue
        if imp.field == field_name:
            return i
        i += 1
    return None
