import random

import pytest

from evulhunter import corpus, names
from evulhunter.errors import BadApplySignature
from evulhunter.loader import FuncBody, Instruction, find_export, parse_module
from evulhunter.simulator import (
    CODE,
    CONST,
    FROM,
    MASK32,
    MASK64,
    TO,
    UNKNOWN,
    UNRESOLVED,
    CallEvent,
    Comparison,
    SimState,
    SymValue,
    const,
    resolve_indirect_targets,
    seed_apply_state,
    simulate_block,
    simulate_function,
    tag_action_data,
)

from conftest import load_wasm, needs_assembler


def run_block(state, *ops, module=None):
    instrs = [Instruction(op, imm, i * 2) for i, (op, imm) in enumerate(ops)]
    body = FuncBody([], instrs + [Instruction("end", (), len(ops) * 2)])

    class _Blk:
        id = 0
        start = 0
        end = len(instrs)

    return simulate_block(state, _Blk, body, module, fidx=99)


def seeded():
    st = SimState()
    st.locals = {0: SymValue("Receiver"), 1: SymValue("Code"), 2: SymValue("Action")}
    return st


def test_seed_apply_state(apply_min):
    mod = parse_module(load_wasm("misc/apply_min.wasm"))
    st = seed_apply_state(mod)
    assert st.locals[0].tag == "Receiver"
    assert st.locals[1].tag == "Code"
    assert st.locals[2].tag == "Action"
    assert st.stack == []


def test_seed_rejects_missing_or_misshapen_apply():
    from evulhunter.loader import MAGIC
    with pytest.raises(BadApplySignature):
        seed_apply_state(parse_module(MAGIC))


@needs_assembler
def test_seed_rejects_two_param_apply():
    data = corpus.assemble('(module (func (export "apply") (param i64 i64)))')
    with pytest.raises(BadApplySignature):
        seed_apply_state(parse_module(data))


def test_local_get_pushes_code_tag():
    res = run_block(seeded(), ("local.get", (1,)))
    assert res.state.stack[-1].tag == CODE


def test_code_vs_token_comparison():
    # oracle: hand-stepped 3-instruction trace
    res = run_block(seeded(),
                    ("local.get", (1,)),
                    ("i64.const", (names.EOSIO_TOKEN,)),
                    ("i64.eq", ()))
    (cmp,) = res.comparisons
    assert cmp.tags() == {CODE, CONST}
    assert cmp.const_payload() == names.EOSIO_TOKEN
    assert cmp.relation == "eq"
    assert res.state.stack[-1].tag == "Cmp"


def test_constant_folding():
    res = run_block(SimState(), ("i64.const", (5,)), ("i64.const", (7,)), ("i64.add", ()))
    assert res.state.stack[-1] == const(12)


def test_folding_matches_concrete_arithmetic():
    # property: abstract folding agrees with wrapping 64/32-bit arithmetic
    rng = random.Random(5)
    ops64 = {"i64.add": lambda a, b: (a + b) & MASK64,
             "i64.sub": lambda a, b: (a - b) & MASK64,
             "i64.mul": lambda a, b: (a * b) & MASK64,
             "i64.and": lambda a, b: a & b,
             "i64.or": lambda a, b: a | b,
             "i64.xor": lambda a, b: a ^ b}
    for _ in range(500):
        a, b = rng.getrandbits(64), rng.getrandbits(64)
        op = rng.choice(list(ops64))
        res = run_block(SimState(), ("i64.const", (a,)), ("i64.const", (b,)), (op, ()))
        assert res.state.stack[-1] == const(ops64[op](a, b)), (op, a, b)
    for _ in range(200):
        a, b = rng.getrandbits(32), rng.getrandbits(32)
        res = run_block(SimState(), ("i32.const", (a,)), ("i32.const", (b,)),
                        ("i32.add", ()))
        assert res.state.stack[-1] == const((a + b) & MASK32, MASK32)


def test_comparison_canonicalization():
    a, b = SymValue("Code"), const(42)
    site = (0, 0)
    assert Comparison.make(a, b, "eq", site) == Comparison.make(b, a, "eq", site)


def test_tag_action_data_offsets():
    # oracle: hand-stepped trace; from at +0, to at +8
    st = SimState()
    call = CallEvent("host", (0, 0), 0, 0, host_field="read_action_data",
                     args=(const(0, MASK32), const(16, MASK32)))
    tag_action_data(st, call)
    assert st.mem_cells[("abs", 0)].tag == FROM
    assert st.mem_cells[("abs", 8)].tag == TO
    res = run_block(st, ("i32.const", (0,)), ("i64.load", (3, 8)))
    assert res.state.stack[-1].tag == TO
    res = run_block(st, ("i32.const", (0,)), ("i64.load", (3, 0)))
    assert res.state.stack[-1].tag == FROM
    res = run_block(st, ("i32.const", (4096,)), ("i64.load", (3, 0)))
    assert res.state.stack[-1].tag == UNKNOWN


def test_tag_action_data_ignores_other_calls():
    st = SimState()
    call = CallEvent("host", (0, 0), 0, 0, host_field="require_recipient",
                     args=(const(0, MASK32),))
    tag_action_data(st, call)
    assert st.mem_cells == {}


def _apply_summary_of(data):
    mod = parse_module(data)
    return mod, simulate_function(mod, find_export(mod, "apply"), seed_apply_state(mod))


def test_resolve_indirect_constant_slot(manifest):
    for name, meta in manifest.items():
        if meta["handler_index"] is None:
            continue
        mod, summary = _apply_summary_of(load_wasm(meta["file"]))
        resolved, diags = resolve_indirect_targets(mod, summary)
        assert resolved, name
        assert set(resolved.values()) == {meta["handler_index"]}, name
        assert diags == []


@needs_assembler
def test_resolve_unknown_index_is_unresolved():
    wat = """(module
      (type $hty (func (param i64 i64)))
      (table 8 funcref)
      (func $h (type $hty))
      (func (export "apply") (param $r i64) (param $c i64) (param $a i64)
        (local $slot i32)
        local.get $r
        local.get $c
        local.get $slot
        call_indirect (type $hty)))
    """
    mod, summary = _apply_summary_of(corpus.assemble(wat))
    resolved, diags = resolve_indirect_targets(mod, summary)
    assert set(resolved.values()) == {UNRESOLVED}


@needs_assembler
def test_resolve_missing_table_slot_diagnostic():
    wat = """(module
      (type $hty (func (param i64 i64)))
      (table 8 funcref)
      (func $h (type $hty))
      (func (export "apply") (param $r i64) (param $c i64) (param $a i64)
        local.get $r
        local.get $c
        i32.const 99
        call_indirect (type $hty)))
    """
    mod, summary = _apply_summary_of(corpus.assemble(wat))
    resolved, diags = resolve_indirect_targets(mod, summary)
    assert set(resolved.values()) == {UNRESOLVED}
    assert any("TableSlotMissing" in d for d in diags)


def test_arity_conservation_over_fixtures(manifest):
    # every fixture path simulates without stack underflow diagnostics
    for name, meta in manifest.items():
        mod = parse_module(load_wasm(meta["file"]))
        try:
            _, summary = _apply_summary_of(load_wasm(meta["file"]))
        except BadApplySignature:
            continue
        assert not any("underflow" in d for d in summary.diagnostics), name


def test_path_budget_flag():
    # a ladder of N independent branches yields 2^N paths; budget trips
    ops = []
    for _ in range(12):
        ops += [("block", (None,)), ("local.get", (1,)),
                ("i64.const", (1,)), ("i64.eq", ()), ("br_if", (0,)), ("end", ())]
    instrs = [Instruction(op, imm, i * 2) for i, (op, imm) in enumerate(ops)]
    instrs.append(Instruction("end", (), len(ops) * 2))

    class _Mod:
        @staticmethod
        def body_of(fidx):
            return FuncBody([], instrs)

    summary = simulate_function(_Mod, 0, seeded(), max_paths=64)
    assert summary.budget_exceeded
