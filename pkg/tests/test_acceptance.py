"""Acceptance suite: one test per release criterion, each printing a
pass/fail line.  Run with `pytest tests/test_acceptance.py -s`."""

import random
import time

import pytest

from evulhunter import corpus, names
from evulhunter.cfg import build_cfg
from evulhunter.detectors import (
    SAFE,
    VULNERABLE,
    Whitelist,
    detect_fake_eos_transfer,
)
from evulhunter.errors import EvulHunterError
from evulhunter.loader import find_export, parse_module
from evulhunter.report import MetricsRow, MetricsSummary, analyze
from evulhunter.simulator import resolve_indirect_targets, seed_apply_state, simulate_function

from conftest import FIXTURES, HAVE_ASSEMBLER, load_wasm, needs_assembler

_FLAG = {"fake-transfer": "FakeEosTransfer", "fake-notice": "FakeTransferNotice"}


def _report(criterion, ok, detail=""):
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, detail


def test_criterion_1_corpus_precision_recall(manifest, labels):
    """100% precision and recall over the generated fixture pairs, all six
    variant combinations and both dispatch styles, in under 60 seconds."""
    start = time.perf_counter()
    pair_fixtures = [n for n in manifest if n.endswith(("_safe", "_vuln"))]
    summary = MetricsSummary()
    for (rel, detector), label in sorted(labels.items()):
        report = analyze(load_wasm(rel), Whitelist(), (_FLAG[detector],), input_name=rel)
        assert not report.errors, (rel, report.errors)
        summary.score(_FLAG[detector], report.findings[0].verdict, label)
    elapsed = time.perf_counter() - start
    total = summary.total
    ok = (len(pair_fixtures) >= 48
          and total.precision == 1.0 and total.recall == 1.0
          and total.fp == 0 and total.fn == 0
          and elapsed < 60.0)
    _report(1, ok,
            f"({len(pair_fixtures)} pair fixtures, tp={total.tp} fp={total.fp} "
            f"tn={total.tn} fn={total.fn}, {elapsed:.1f}s)")


def test_criterion_2_whitelist_story():
    """two_tokens flips from Vulnerable to Safe once the extra token account
    is whitelisted."""
    mod = parse_module(load_wasm("fake-transfer/canonical/two_tokens.wasm"))
    default = detect_fake_eos_transfer(mod, Whitelist()).verdict
    extended = detect_fake_eos_transfer(
        mod, Whitelist.from_names(["eosbettokens"])).verdict
    ok = default == VULNERABLE and extended == SAFE
    _report(2, ok, f"(default={default}, whitelisted={extended})")


def test_criterion_3_metrics_arithmetic():
    """Published confusion counts reproduce the published ratios to within
    0.01 percentage points."""
    cases = [
        ((75, 26, 83, 0), (74.26, 100.0, 85.87)),
        ((141, 0, 54, 0), (100.0, 100.0, 100.0)),
        ((216, 26, 137, 0), (89.26, None, 93.14)),
    ]
    ok = True
    for (tp, fp, tn, fn), (prec, rec, acc) in cases:
        r = MetricsRow(tp=tp, fp=fp, tn=tn, fn=fn)
        ok &= abs(100 * r.precision - prec) <= 0.01
        if rec is not None:
            ok &= abs(100 * r.recall - rec) <= 0.01
        ok &= abs(100 * r.accuracy - acc) <= 0.01
    _report(3, ok)


@needs_assembler
def test_criterion_4_performance_envelope():
    """Any fixture, and a ~500 KB padded one, analyzes in <= 3 s; timing
    grows no worse than linearly in module size (R^2 of linear fit >= 0.9
    over >= 10 padded sizes)."""
    import numpy as np

    worst_fixture = 0.0
    for path in sorted(FIXTURES.rglob("*.wasm")):
        report = analyze(path.read_bytes(), input_name=path.name)
        worst_fixture = max(worst_fixture, report.duration_ms)

    sizes, times = [], []
    big_ms = None
    for n_pad in range(160, 1760, 160):  # ~50 KB .. ~560 KB
        data = corpus.assemble(corpus.padded_wat(n_pad))
        report = analyze(data, input_name=f"padded_{n_pad}")
        assert not report.errors
        sizes.append(len(data))
        times.append(report.duration_ms)
        if len(data) >= 450_000:
            big_ms = report.duration_ms if big_ms is None else big_ms

    slope, intercept = np.polyfit(sizes, times, 1)
    pred = np.polyval([slope, intercept], sizes)
    ss_res = float(np.sum((np.array(times) - pred) ** 2))
    ss_tot = float(np.sum((np.array(times) - np.mean(times)) ** 2))
    r2 = 1.0 - ss_res / ss_tot
    ok = (worst_fixture <= 3000.0 and big_ms is not None and big_ms <= 3000.0
          and len(sizes) >= 10 and r2 >= 0.9)
    _report(4, ok,
            f"(worst fixture {worst_fixture:.0f} ms, ~500KB {big_ms:.0f} ms, "
            f"R^2={r2:.4f} over {len(sizes)} sizes)")


def test_criterion_5_name_codec():
    """10,000 random valid names round-trip; frozen eosio.token vector
    matches the independent charmap oracle."""
    table = {c: i for i, c in enumerate(".12345abcdefghijklmnopqrstuvwxyz")}

    def oracle(s):
        v = 0
        for i, ch in enumerate(s):
            v |= table[ch] << (64 - 5 * (i + 1))
        return v

    ok = names.encode_name("eosio.token") == oracle("eosio.token") == 0x5530EA033482A600
    rng = random.Random(2024)
    alphabet = names.ALPHABET
    for _ in range(10_000):
        s = "".join(rng.choice(alphabet)
                    for _ in range(rng.randint(0, 12))).rstrip(".")
        if names.decode_name(names.encode_name(s)) != s:
            ok = False
            break
    _report(5, ok)


def test_criterion_6_cfg_invariants_and_fuzz():
    """CFG partition/arity/determinism over every fixture and 1000 fuzzed
    mutations: parse may fail with typed errors but never crashes, and any
    module that parses satisfies the invariants."""
    wasms = sorted(FIXTURES.rglob("*.wasm"))

    def check_invariants(mod):
        for fb in mod.bodies:
            try:
                cfg = build_cfg(fb)
            except EvulHunterError:
                continue  # fuzzed bodies may be structurally invalid
            flat = sorted(i for b in cfg.blocks for i in range(b.start, b.end))
            assert flat == list(range(len(fb.instructions)))
            for b in cfg.blocks:
                deg = len(cfg.succ[b.id])
                assert {"br_if": 2, "if_split": 2, "return": 0,
                        "unreachable": 0, "end_of_function": 0,
                        "fallthrough": 1}.get(b.terminator, deg) == deg
            again = build_cfg(fb)
            assert [(x.start, x.end) for x in again.blocks] == \
                   [(x.start, x.end) for x in cfg.blocks]

    for path in wasms:
        check_invariants(parse_module(path.read_bytes()))

    rng = random.Random(99)
    parsed = crashed = 0
    for i in range(1000):
        data = bytearray(wasms[i % len(wasms)].read_bytes())
        for _ in range(rng.randint(1, 4)):
            data[rng.randrange(len(data))] = rng.getrandbits(8)
        try:
            mod = parse_module(bytes(data))
        except EvulHunterError:
            continue
        except Exception:
            crashed += 1
            continue
        parsed += 1
        try:
            check_invariants(mod)
        except EvulHunterError:
            pass
    _report(6, crashed == 0, f"({parsed}/1000 mutants parsed, {crashed} crashes)")


def test_criterion_7_indirect_resolution(manifest):
    """Resolved indirect-call handler indexes equal the indexes recorded at
    fixture-authoring time, on every execute_action-style fixture."""
    checked = 0
    ok = True
    for name, meta in sorted(manifest.items()):
        if meta["handler_index"] is None:
            continue
        mod = parse_module(load_wasm(meta["file"]))
        fidx = find_export(mod, "apply")
        summary = simulate_function(mod, fidx, seed_apply_state(mod))
        resolved, _ = resolve_indirect_targets(mod, summary)
        if set(resolved.values()) != {meta["handler_index"]}:
            ok = False
        checked += 1
    _report(7, ok and checked >= 20, f"({checked} indirect-dispatch fixtures)")
