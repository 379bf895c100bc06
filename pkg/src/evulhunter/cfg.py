"""Basic-block control-flow graph over decoded function bodies.

Structured control (block/loop/if/else/end) is fully lowered to explicit
edges: a br of depth d resolves to the d-th enclosing label, a loop label
targets the instruction after the loop opcode, block/if labels target the
instruction after the matching end.  Detection reasons purely in terms of
edge-pruned reachability, so no region tree is kept.
"""

from collections import deque
from dataclasses import dataclass, field

from .errors import UnbalancedControl

RETURN = -1  # branch target sentinel: function-level label

_BRANCHES = {"br", "br_if", "br_table", "if", "else", "return", "unreachable"}


@dataclass
class BasicBlock:
    id: int
    start: int           # instruction index range [start, end)
    end: int
    terminator: str      # fallthrough | br | br_if | br_table | if_split |
                         # return | unreachable | end_of_function


@dataclass
class Edge:
    id: int
    src: int
    dst: int
    kind: str            # seq | taken | not-taken | table-case | table-default
    cases: tuple = ()    # br_table case values mapped to this target


@dataclass
class Cfg:
    blocks: list
    edges: list
    entry: int = 0
    exits: set = field(default_factory=set)
    succ: dict = field(default_factory=dict)   # block id -> [edge, ...]

    def block_at(self, instr_index: int) -> BasicBlock:
        for b in self.blocks:
            if b.start <= instr_index < b.end:
                return b
        raise IndexError(instr_index)


def _match_structure(instrs):
    """Map each block/loop/if opener to its else/end indices."""
    end_of = {}
    else_of = {}
    stack = []
    for i, ins in enumerate(instrs):
        if ins.op in ("block", "loop", "if"):
            stack.append(i)
        elif ins.op == "else":
            if not stack or instrs[stack[-1]].op != "if":
                raise UnbalancedControl(f"else at instruction {i} without open if")
            else_of[stack[-1]] = i
        elif ins.op == "end":
            if stack:
                end_of[stack.pop()] = i
            elif i != len(instrs) - 1:
                raise UnbalancedControl(f"function-level end at instruction {i} is not last")
    if stack:
        raise UnbalancedControl(f"{len(stack)} unclosed control frames")
    if not instrs or instrs[-1].op != "end" or len(instrs) - 1 in end_of.values():
        raise UnbalancedControl("function body does not close with a function-level end")
    return end_of, else_of


def _branch_targets(instrs, end_of):
    """Resolve every branch's label depth to an instruction index (or RETURN)."""
    targets = {}
    stack = []  # opener indexes of currently open frames
    for i, ins in enumerate(instrs):
        if ins.op in ("br", "br_if"):
            targets[i] = (_resolve(instrs, stack, ins.imm[0], end_of, i),)
        elif ins.op == "br_table":
            cases, default = ins.imm
            targets[i] = tuple(_resolve(instrs, stack, d, end_of, i) for d in cases) + (
                _resolve(instrs, stack, default, end_of, i),)
        if ins.op in ("block", "loop", "if"):
            stack.append(i)
        elif ins.op == "end" and stack:
            stack.pop()
    return targets


def _resolve(instrs, stack, depth, end_of, site):
    if depth > len(stack):
        raise UnbalancedControl(f"branch depth {depth} exceeds nesting at instruction {site}")
    if depth == len(stack):
        return RETURN
    opener = stack[-1 - depth]
    if instrs[opener].op == "loop":
        return opener + 1
    return end_of[opener] + 1


def build_cfg(body) -> Cfg:
    """Lower one function body to a Cfg. Deterministic: block ids follow
    instruction order."""
    instrs = body.instructions
    end_of, else_of = _match_structure(instrs)
    targets = _branch_targets(instrs, end_of)

    leaders = {0}
    for i, ins in enumerate(instrs):
        if ins.op in _BRANCHES and i + 1 < len(instrs):
            leaders.add(i + 1)
        for t in targets.get(i, ()):
            if t != RETURN:
                leaders.add(t)
    # the skip target of an if (else+1 or end+1) starts a block too
    for opener, e in else_of.items():
        if e + 1 < len(instrs):
            leaders.add(e + 1)
    for opener, e in end_of.items():
        if instrs[opener].op == "if" and e + 1 < len(instrs):
            leaders.add(e + 1)

    starts = sorted(leaders)
    block_of = {}
    blocks = []
    for bid, s in enumerate(starts):
        e = starts[bid + 1] if bid + 1 < len(starts) else len(instrs)
        blocks.append(BasicBlock(bid, s, e, "fallthrough"))
        for i in range(s, e):
            block_of[i] = bid

    edges = []
    exits = set()

    def add_edge(src, dst_index, kind, cases=()):
        if dst_index == RETURN or dst_index >= len(instrs):
            return False
        edges.append(Edge(len(edges), src, block_of[dst_index], kind, cases))
        return True

    for b in blocks:
        last = b.end - 1
        ins = instrs[last]
        op = ins.op
        if op == "br":
            b.terminator = "br"
            add_edge(b.id, targets[last][0], "taken")
        elif op == "br_if":
            b.terminator = "br_if"
            add_edge(b.id, targets[last][0], "taken")
            add_edge(b.id, b.end, "not-taken")
        elif op == "br_table":
            b.terminator = "br_table"
            *cases, default = targets[last]
            by_target = {}
            for value, t in enumerate(cases):
                by_target.setdefault(t, []).append(value)
            for t, values in by_target.items():
                add_edge(b.id, t, "table-case", tuple(values))
            if default not in by_target:
                add_edge(b.id, default, "table-default")
        elif op == "if":
            b.terminator = "if_split"
            add_edge(b.id, b.end, "taken")
            skip = else_of.get(last, end_of[last]) + 1
            add_edge(b.id, skip, "not-taken")
        elif op == "else":
            # fall-through exit of a then-branch: unconditional jump past end
            b.terminator = "br"
            add_edge(b.id, end_of[_opener_of_else(else_of, last)] + 1, "taken")
        elif op == "return":
            b.terminator = "return"
        elif op == "unreachable":
            b.terminator = "unreachable"
        elif b.end == len(instrs):
            b.terminator = "end_of_function"
        else:
            b.terminator = "fallthrough"
            add_edge(b.id, b.end, "seq")

    succ = {b.id: [] for b in blocks}
    for e in edges:
        succ[e.src].append(e)
    for b in blocks:
        if not succ[b.id]:
            exits.add(b.id)

    return Cfg(blocks, edges, 0, exits, succ)


def _opener_of_else(else_of, else_index):
    for opener, e in else_of.items():
        if e == else_index:
            return opener
    raise UnbalancedControl(f"else at {else_index} has no opener")


def reachable_blocks(cfg: Cfg, start: int, forbidden_edges=frozenset()) -> set:
    """Block ids reachable from start without crossing a forbidden edge id.
    start is always included."""
    seen = {start}
    queue = deque([start])
    while queue:
        b = queue.popleft()
        for e in cfg.succ[b]:
            if e.id in forbidden_edges or e.dst in seen:
                continue
            seen.add(e.dst)
            queue.append(e.dst)
    return seen


def cfg_to_dot(cfg: Cfg, body, title: str = "cfg") -> str:
    """Render the graph as GraphViz DOT, blocks labeled with offset ranges."""
    lines = [f"digraph {title} {{", "  node [shape=box];"]
    for b in cfg.blocks:
        first = body.instructions[b.start]
        last = body.instructions[b.end - 1]
        label = f"b{b.id}\\n[{first.offset:#x}..{last.offset:#x}]\\n{b.terminator}"
        lines.append(f'  b{b.id} [label="{label}"];')
    for e in cfg.edges:
        lines.append(f'  b{e.src} -> b{e.dst} [label="{e.kind}"];')
    lines.append("}")
    return "\n".join(lines)
