"""Abstract stack-machine simulation with semantic value tagging.

Executes basic blocks over tagged values instead of concrete numbers: the
apply dispatcher's parameters become Receiver/Code/Action, read_action_data
seeds From/To into abstract memory, and i64 constants stay concrete so name
constants like "eosio.token" survive into comparisons.  Paths through a
function are enumerated acyclically (dispatchers are loop-free in practice)
under a hard path budget.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

from . import names
from .cfg import Cfg, build_cfg
from .errors import BadApplySignature, StackUnderflow
from .loader import WasmModule, find_export

MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF

# value tags, in canonical order (comparison operands are stored sorted)
RECEIVER = "Receiver"
CODE = "Code"
ACTION = "Action"
SELF = "SelfAccount"
FROM = "From"
TO = "To"
CONST = "Const"
MEMREF = "MemRef"
CMP = "Cmp"
UNKNOWN = "Unknown"

SEMANTIC_TAGS = {RECEIVER, CODE, ACTION, SELF, FROM, TO}
_TAG_ORDER = [RECEIVER, CODE, ACTION, SELF, FROM, TO, CONST, MEMREF, CMP, UNKNOWN]


@dataclass(frozen=True)
class SymValue:
    tag: str
    payload: Optional[int] = None      # Const: 64-bit value
    base: Optional[str] = None         # MemRef: symbolic base
    off: int = 0                       # MemRef: byte offset from base
    cmp: Optional["Comparison"] = None  # Cmp: the comparison that produced it

    def key(self):
        return (self.tag, self.payload, self.base, self.off)

    def __repr__(self):
        if self.tag == CONST:
            return f"Const({self.payload:#x})"
        if self.tag == MEMREF:
            return f"MemRef({self.base}+{self.off})"
        if self.tag == CMP:
            return f"Cmp({self.cmp})"
        return self.tag


UNKNOWN_VAL = SymValue(UNKNOWN)


def const(v: int, mask: int = MASK64) -> SymValue:
    return SymValue(CONST, payload=v & mask)


@dataclass(frozen=True)
class Comparison:
    """A recognized equality/inequality between tagged values.

    Operands are canonicalized (tag order, then payload) so that
    (Code, Const) and (Const, Code) compare equal.  `relation` describes
    the value on the stack: eq pushes 1 when lhs == rhs, ne pushes 1 when
    they differ.  `pattern` is assigned when the result is consumed:
    P1 eq feeding a branch, P2 ne feeding a branch, P3 feeding eosio_assert.
    """
    lhs: tuple
    rhs: tuple
    relation: str                  # 'eq' | 'ne'
    site: tuple                    # (function index, byte offset)
    pattern: Optional[str] = None  # 'P1' | 'P2' | 'P3'

    @staticmethod
    def make(a: SymValue, b: SymValue, relation: str, site: tuple) -> "Comparison":
        ka, kb = a.key(), b.key()
        ia = _TAG_ORDER.index(a.tag)
        ib = _TAG_ORDER.index(b.tag)
        if (ia, ka[1] or 0) > (ib, kb[1] or 0):
            ka, kb = kb, ka
        return Comparison(ka, kb, relation, site)

    def tags(self):
        return {self.lhs[0], self.rhs[0]}

    def const_payload(self):
        for side in (self.lhs, self.rhs):
            if side[0] == CONST:
                return side[1]
        return None

    def with_pattern(self, pattern):
        return replace(self, pattern=pattern)


@dataclass(frozen=True)
class CallEvent:
    kind: str                      # 'call' | 'call_indirect' | 'host'
    site: tuple                    # (function index, byte offset)
    block: int
    pos: int                       # instruction index within the function
    target: Optional[int] = None   # callee function index, if known
    host_field: Optional[str] = None
    args: tuple = ()
    index_value: Optional[SymValue] = None  # call_indirect stack top


@dataclass(frozen=True)
class AssertEvent:
    """eosio_assert whose condition is a recognized comparison; execution
    past the site implies the condition held."""
    site: tuple
    block: int
    pos: int
    comparison: Comparison
    equality_required: bool        # True: continuing implies lhs == rhs


@dataclass
class SimState:
    stack: list = field(default_factory=list)
    locals: dict = field(default_factory=dict)
    globals: dict = field(default_factory=dict)
    mem_cells: dict = field(default_factory=dict)   # (base, offset) -> SymValue
    path_constraints: list = field(default_factory=list)  # (Comparison, holds)

    def copy(self) -> "SimState":
        return SimState(list(self.stack), dict(self.locals), dict(self.globals),
                        dict(self.mem_cells), list(self.path_constraints))

    def push(self, v: SymValue):
        self.stack.append(v)

    def pop(self) -> SymValue:
        if not self.stack:
            raise StackUnderflow("abstract stack underflow")
        return self.stack.pop()


@dataclass
class BlockResult:
    state: SimState
    comparisons: list
    calls: list
    asserts: list
    consumed_cond: Optional[SymValue]  # value popped by a br_if/if terminator


def seed_apply_state(module: WasmModule) -> SimState:
    """Initial state for the apply dispatcher: locals 0/1/2 are the
    receiver, code and action parameters.  Inside apply, _self is the
    receiver, so no separate tag is seeded."""
    fidx = find_export(module, "apply")
    if fidx is None or module.is_import(fidx):
        raise BadApplySignature("module does not export a defined 'apply' function")
    sig = module.func_type(fidx)
    if sig.params != ("i64", "i64", "i64"):
        raise BadApplySignature(f"apply has signature {sig.params}, expected (i64, i64, i64)")
    state = SimState()
    state.locals[0] = SymValue(RECEIVER)
    state.locals[1] = SymValue(CODE)
    state.locals[2] = SymValue(ACTION)
    return state


_FOLD64 = {
    "add": lambda a, b: a + b, "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b, "and": lambda a, b: a & b,
    "or": lambda a, b: a | b, "xor": lambda a, b: a ^ b,
    "shl": lambda a, b: a << (b % 64), "shr_u": lambda a, b: a >> (b % 64),
}
_FOLD32 = dict(_FOLD64, shl=lambda a, b: a << (b % 32), shr_u=lambda a, b: a >> (b % 32))


def _mem_key(addr: SymValue, offset: int):
    if addr.tag == CONST:
        return ("abs", addr.payload + offset)
    if addr.tag == MEMREF:
        return (addr.base, addr.off + offset)
    return None


def simulate_block(state: SimState, block, body, module: WasmModule,
                   fidx: int) -> BlockResult:
    """Execute one basic block abstractly, collecting recognized comparisons,
    call events and assert events.  The input state is not mutated."""
    st = state.copy()
    comparisons = []
    calls = []
    asserts = []
    consumed = None
    instrs = body.instructions

    for pos in range(block.start, block.end):
        ins = instrs[pos]
        op = ins.op
        site = (fidx, ins.offset)

        if op in ("block", "loop", "end", "nop", "else"):
            continue
        if op in ("br", "return", "unreachable"):
            continue
        if op in ("br_if", "if", "br_table"):
            consumed = st.pop()
            continue

        if op == "local.get":
            st.push(st.locals.get(ins.imm[0], UNKNOWN_VAL))
        elif op == "local.set":
            st.locals[ins.imm[0]] = st.pop()
        elif op == "local.tee":
            v = st.pop()
            st.locals[ins.imm[0]] = v
            st.push(v)
        elif op == "global.get":
            g = ins.imm[0]
            if g not in st.globals:
                # model frame-pointer style globals as symbolic bases
                st.globals[g] = SymValue(MEMREF, base=f"g{g}", off=0)
            st.push(st.globals[g])
        elif op == "global.set":
            st.globals[ins.imm[0]] = st.pop()
        elif op == "i32.const":
            st.push(const(ins.imm[0], MASK32))
        elif op == "i64.const":
            st.push(const(ins.imm[0]))
        elif op in ("f32.const", "f64.const"):
            st.push(UNKNOWN_VAL)
        elif op == "drop":
            st.pop()
        elif op == "select":
            c = st.pop()
            b2 = st.pop()
            b1 = st.pop()
            if c.tag == CONST:
                st.push(b1 if c.payload else b2)
            elif b1 == b2:
                st.push(b1)
            else:
                st.push(UNKNOWN_VAL)
        elif op in ("i64.eq", "i64.ne"):
            rel = op[-2:]
            b = st.pop()
            a = st.pop()
            st.push(_compare(a, b, rel, site, comparisons))
        elif op in ("i32.eqz", "i64.eqz"):
            v = st.pop()
            if v.tag == CMP:
                flipped = replace(v.cmp, relation="ne" if v.cmp.relation == "eq" else "eq")
                comparisons.append(flipped)
                st.push(SymValue(CMP, cmp=flipped))
            elif v.tag == CONST:
                st.push(const(0 if v.payload else 1, MASK32))
            else:
                st.push(UNKNOWN_VAL)
        elif op in ("i64.sub", "i64.xor") and _semantic_operands(st):
            # difference of tagged names: nonzero iff they differ
            b = st.pop()
            a = st.pop()
            st.push(_compare(a, b, "ne", site, comparisons))
        elif op == "i32.wrap_i64" or op in ("i64.extend_i32_u", "i64.extend_i32_s"):
            pass  # width change only; keep tag
        elif op in _LOADS:
            addr = st.pop()
            key = _mem_key(addr, ins.imm[1])
            st.push(st.mem_cells.get(key, UNKNOWN_VAL) if key else UNKNOWN_VAL)
        elif "store" in op:
            value = st.pop()
            addr = st.pop()
            key = _mem_key(addr, ins.imm[1])
            if key is not None:
                st.mem_cells[key] = value
        elif op == "call":
            _do_call(st, module, ins.imm[0], site, block.id, pos, calls, asserts, comparisons)
        elif op == "call_indirect":
            sig = module.types[ins.imm[0]]
            index_value = st.pop()
            args = tuple(reversed([st.pop() for _ in sig.params]))
            calls.append(CallEvent("call_indirect", site, block.id, pos,
                                   args=args, index_value=index_value))
            for _ in sig.results:
                st.push(UNKNOWN_VAL)
        elif op.startswith(("i32.", "i64.")):
            _numeric(st, op)
        elif op.startswith(("f32.", "f64.")):
            _numeric(st, op)  # floats never carry names; treated opaquely
        elif op in ("memory.size", "memory.grow"):
            if op == "memory.grow":
                st.pop()
            st.push(UNKNOWN_VAL)
        else:
            raise AssertionError(f"unhandled opcode {op}")

    return BlockResult(st, comparisons, calls, asserts, consumed)


MAX_PATHS = 256

UNRESOLVED = "Unresolved"


@dataclass
class PathRecord:
    constraints: list   # [(Comparison, equality_holds), ...] in path order
    calls: list         # CallEvents seen along the path


@dataclass
class FunctionSummary:
    fidx: int
    cfg: Cfg
    comparisons: dict = field(default_factory=dict)      # site -> Comparison
    call_events: dict = field(default_factory=dict)      # (block,pos) -> [CallEvent]
    asserts: dict = field(default_factory=dict)          # site -> AssertEvent
    edge_constraints: dict = field(default_factory=dict)  # edge id -> {(cmp, holds)}
    paths: list = field(default_factory=list)
    budget_exceeded: bool = False
    diagnostics: list = field(default_factory=list)

    def all_calls(self):
        for events in self.call_events.values():
            yield from events


def _record_comparison(summary, cmp: Comparison):
    prev = summary.comparisons.get(cmp.site)
    if prev is None or (prev.pattern is None and cmp.pattern is not None):
        summary.comparisons[cmp.site] = cmp


def simulate_function(module: WasmModule, fidx: int, seed: SimState,
                      max_paths: int = MAX_PATHS) -> FunctionSummary:
    """Enumerate acyclic paths through a function, simulating each block and
    aggregating comparisons, calls, asserts and per-edge guard constraints.

    Each block enters a path at most once, which bounds loops; beyond
    max_paths completed paths the summary is marked budget_exceeded and
    callers must fall back to conservative verdicts.
    """
    body = module.body_of(fidx)
    cfg = build_cfg(body)
    summary = FunctionSummary(fidx, cfg)
    # (block id, state, frozenset visited, constraints, calls)
    work = [(cfg.entry, seed, frozenset(), [], [])]

    while work:
        block_id, state, visited, constraints, path_calls = work.pop()
        block = cfg.blocks[block_id]
        try:
            res = simulate_block(state, block, body, module, fidx)
        except StackUnderflow:
            summary.diagnostics.append(
                f"stack underflow in function {fidx} block {block_id}; path aborted")
            continue
        for cmp in res.comparisons:
            _record_comparison(summary, cmp)
        for ev in res.calls:
            summary.call_events.setdefault((ev.block, ev.pos), []).append(ev)
        for ae in res.asserts:
            summary.asserts[ae.site] = ae
        path_calls = path_calls + res.calls
        constraints = constraints + [
            (ae.comparison, ae.equality_required) for ae in res.asserts]

        cond = res.consumed_cond
        branch_cmp = None
        if cond is not None and cond.tag == CMP and block.terminator in ("br_if", "if_split"):
            pattern = "P1" if cond.cmp.relation == "eq" else "P2"
            branch_cmp = cond.cmp.with_pattern(pattern)
            _record_comparison(summary, branch_cmp)

        out = cfg.succ[block_id]
        next_blocks = [e for e in out if e.dst not in visited]
        if not next_blocks:
            summary.paths.append(PathRecord(constraints, path_calls))
            if len(summary.paths) >= max_paths:
                summary.budget_exceeded = bool(work)
                break
            continue
        new_visited = visited | {block_id}
        for e in next_blocks:
            branch_state = res.state.copy() if len(next_blocks) > 1 else res.state
            branch_constraints = constraints
            if branch_cmp is not None:
                holds = _equality_on_edge(branch_cmp.relation, e.kind)
                if holds is not None:
                    summary.edge_constraints.setdefault(e.id, set()).add(
                        (branch_cmp, holds))
                    branch_state.path_constraints.append((branch_cmp, holds))
                    branch_constraints = constraints + [(branch_cmp, holds)]
            work.append((e.dst, branch_state, new_visited,
                         branch_constraints, list(path_calls)))

    return summary


def _equality_on_edge(relation, edge_kind):
    """Does traversing this edge imply the compared values are equal?"""
    if edge_kind == "taken":
        return relation == "eq"
    if edge_kind in ("not-taken", "seq"):
        return relation == "ne"
    return None


def resolve_indirect_targets(module: WasmModule, summary: FunctionSummary):
    """Map each call_indirect site in a simulated function to the table
    entry its constant stack-top index selects, or UNRESOLVED.

    Sites whose index differs across paths, is not constant, or names a
    missing table slot are UNRESOLVED (the latter with a diagnostic)."""
    result = {}
    diagnostics = []
    by_site = {}
    for ev in summary.all_calls():
        if ev.kind == "call_indirect":
            by_site.setdefault(ev.site, set()).add(
                ev.index_value.key() if ev.index_value else None)
    for site, keys in sorted(by_site.items()):
        if len(keys) == 1:
            (tag, payload, _, _) = next(iter(keys)) or (None,) * 4
            if tag == CONST:
                if payload in module.table_elements:
                    result[site] = module.table_elements[payload]
                    continue
                diagnostics.append(
                    f"TableSlotMissing: call_indirect at {site[1]:#x} selects "
                    f"slot {payload} absent from the element section")
        result[site] = UNRESOLVED
    return result, diagnostics


def _semantic_operands(st: SimState) -> bool:
    if len(st.stack) < 2:
        return False
    return any(v.tag in SEMANTIC_TAGS for v in st.stack[-2:])


def _compare(a, b, relation, site, comparisons) -> SymValue:
    if a.tag == CONST and b.tag == CONST:
        equal = a.payload == b.payload
        return const(int(equal if relation == "eq" else not equal), MASK32)
    if a.tag in SEMANTIC_TAGS or b.tag in SEMANTIC_TAGS:
        cmp = Comparison.make(a, b, relation, site)
        comparisons.append(cmp)
        return SymValue(CMP, cmp=cmp)
    return UNKNOWN_VAL


_LOADS = {
    "i32.load": (MASK32, 4), "i64.load": (MASK64, 8),
    "i32.load8_u": (0xFF, 1), "i32.load8_s": (0xFF, 1),
    "i32.load16_u": (0xFFFF, 2), "i32.load16_s": (0xFFFF, 2),
    "i64.load8_u": (0xFF, 1), "i64.load8_s": (0xFF, 1),
    "i64.load16_u": (0xFFFF, 2), "i64.load16_s": (0xFFFF, 2),
    "i64.load32_u": (MASK32, 4), "i64.load32_s": (MASK32, 4),
    "f32.load": (None, 4), "f64.load": (None, 8),
}

_UNOPS = {"clz", "ctz", "popcnt", "eqz", "abs", "neg", "ceil", "floor",
          "trunc", "nearest", "sqrt", "wrap_i64"}
_CONVERT_PREFIXES = ("trunc_", "convert_", "extend_", "demote_", "promote_",
                     "reinterpret_")


def _do_call(st: SimState, module: WasmModule, target: int, site, block_id,
             pos, calls, asserts, comparisons):
    sig = module.func_type(target)
    args = tuple(reversed([st.pop() for _ in sig.params]))
    if module.is_import(target):
        ev = CallEvent("host", site, block_id, pos, target=target,
                       host_field=module.import_field(target), args=args)
        calls.append(ev)
        if ev.host_field == "eosio_assert" and args and args[0].tag == CMP:
            cmp = args[0].cmp.with_pattern("P3")
            comparisons.append(cmp)
            equality = args[0].cmp.relation == "eq"
            asserts.append(AssertEvent(site, block_id, pos, cmp, equality))
            st.path_constraints.append((cmp, equality))
        elif ev.host_field == "read_action_data":
            tag_action_data(st, ev)
    else:
        calls.append(CallEvent("call", site, block_id, pos, target=target, args=args))
    for _ in sig.results:
        st.push(UNKNOWN_VAL)


def tag_action_data(state: SimState, call: CallEvent) -> SimState:
    """Seed From/To into abstract memory at a read_action_data destination.

    The transfer action serializes two 8-byte names first (from at +0,
    to at +8, per the eosio.token ABI).  Calls that are not
    read_action_data, or whose destination is not trackable, are no-ops.
    """
    if call.host_field != "read_action_data" or not call.args:
        return state
    key = _mem_key(call.args[0], 0)
    if key is not None:
        base, off = key
        state.mem_cells[(base, off)] = SymValue(FROM)
        state.mem_cells[(base, off + 8)] = SymValue(TO)
    return state


def _numeric(st: SimState, op):
    """Stack discipline for arithmetic, compares and conversions."""
    base, _, name = op.partition(".")
    if name in _UNOPS or name.startswith(_CONVERT_PREFIXES):
        st.pop()
        st.push(UNKNOWN_VAL)
        return
    # binary op (arith/compare): pop 2, push 1
    b = st.pop()
    a = st.pop()
    mask = MASK32 if base == "i32" else MASK64
    fold = _FOLD32 if base == "i32" else _FOLD64
    if a.tag == CONST and b.tag == CONST and name in fold:
        st.push(const(fold[name](a.payload, b.payload), mask))
    elif name in ("add", "sub") and {a.tag, b.tag} == {MEMREF, CONST}:
        ref, k = (a, b) if a.tag == MEMREF else (b, a)
        delta = k.payload if name == "add" else -k.payload
        if name == "sub" and a.tag != MEMREF:
            st.push(UNKNOWN_VAL)  # const - pointer: meaningless
        else:
            st.push(SymValue(MEMREF, base=ref.base, off=ref.off + delta))
    else:
        st.push(UNKNOWN_VAL)
