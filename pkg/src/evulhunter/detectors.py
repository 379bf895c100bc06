"""Fake-transfer detectors.

Two rules over guard comparisons and guard-pruned reachability:

* fake EOS transfer: prune every apply edge that is only taken when the
  incoming code is a whitelisted token account or the receiver itself; if
  any developer-function call site stays reachable from apply's entry, a
  caller other than the token contract can drive contract logic.
* fake transfer notice: the located transfer handler (and its direct
  callees) must somewhere compare the incoming `to` account against the
  executing account; forwarding attacks go undetected without it.

Both rules are deliberately over-approximate: unresolved indirect calls and
exceeded path budgets degrade toward Vulnerable, never toward Safe.
"""

from dataclasses import dataclass, field
from typing import Optional

from . import names
from .cfg import reachable_blocks
from .errors import BadApplySignature, EvulHunterError, InvalidNameChar, NameTooLong
from .loader import WasmModule, find_export
from .simulator import (
    ACTION,
    CODE,
    CONST,
    RECEIVER,
    SELF,
    TO,
    UNRESOLVED,
    SimState,
    SymValue,
    resolve_indirect_targets,
    seed_apply_state,
    simulate_function,
)

FAKE_TRANSFER = "FakeEosTransfer"
FAKE_NOTICE = "FakeTransferNotice"
DETECTORS = (FAKE_TRANSFER, FAKE_NOTICE)

VULNERABLE = "Vulnerable"
SAFE = "Safe"
INCONCLUSIVE = "Inconclusive"

GUARD_PATTERNS = {"P1", "P2", "P3"}


@dataclass(frozen=True)
class Evidence:
    function: int
    offset: int
    message: str


@dataclass
class Finding:
    detector: str
    verdict: str
    evidence: list
    degraded: bool = False
    reason: Optional[str] = None


class WhitelistError(EvulHunterError):
    pass


@dataclass
class Whitelist:
    """Token accounts accepted as legitimate transfer authorizers.
    Always contains eosio.token."""
    accounts: set = field(default_factory=set)

    def __post_init__(self):
        self.accounts = set(self.accounts) | {names.EOSIO_TOKEN}

    @classmethod
    def from_names(cls, extra=()):
        return cls({names.encode_name(n) for n in extra})

    @classmethod
    def from_file(cls, path):
        """One account name per line; '#' comments and blank lines skipped."""
        accounts = set()
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                try:
                    accounts.add(names.encode_name(line))
                except (InvalidNameChar, NameTooLong) as exc:
                    raise WhitelistError(f"{path}:{lineno}: {exc}") from None
        return cls(accounts)


@dataclass
class HandlerMap:
    entries: dict                 # action name value -> set of function indexes
    unresolved_sites: int = 0
    degraded: bool = False


def is_runtime_helper(module: WasmModule, fidx: int) -> bool:
    """Heuristic for compiler-emitted shims (memcpy/memset style): straight
    arithmetic and memory traffic, no calls, no 64-bit name constants."""
    if module.is_import(fidx):
        return False
    for ins in module.body_of(fidx).instructions:
        if ins.op in ("call", "call_indirect", "i64.const"):
            return False
    return True


def _guard_pair(cmp, wl: Whitelist):
    """Classify a comparison as a code guard: 'A' code-vs-whitelisted-const,
    'B' code-vs-receiver, else None."""
    tags = cmp.tags()
    if tags == {CODE, CONST} and cmp.const_payload() in wl.accounts:
        return "A"
    if tags in ({CODE, RECEIVER}, {CODE, SELF}):
        return "B"
    return None


def _apply_summary(module: WasmModule):
    seed = seed_apply_state(module)
    fidx = find_export(module, "apply")
    return fidx, simulate_function(module, fidx, seed)


def locate_handlers(module: WasmModule) -> HandlerMap:
    """Associate action-name constants tested against the action parameter
    with the functions dispatched on the matching paths."""
    fidx, summary = _apply_summary(module)
    resolved, _ = resolve_indirect_targets(module, summary)
    entries = {}
    for path in summary.paths:
        actions = [c.const_payload() for c, holds in path.constraints
                   if holds and c.tags() == {ACTION, CONST}]
        if not actions:
            continue
        for ev in path.calls:
            target = None
            if ev.kind == "call" and not module.is_import(ev.target) \
                    and not is_runtime_helper(module, ev.target):
                target = ev.target
            elif ev.kind == "call_indirect":
                r = resolved.get(ev.site)
                target = r if r != UNRESOLVED else None
            if target is not None:
                for k in actions:
                    entries.setdefault(k, set()).add(target)
    unresolved = sum(1 for r in resolved.values() if r == UNRESOLVED)
    degraded = summary.budget_exceeded or any(len(v) > 1 for v in entries.values())
    return HandlerMap(entries, unresolved, degraded)


def detect_fake_eos_transfer(module: WasmModule, wl: Whitelist = None) -> Finding:
    wl = wl or Whitelist()
    try:
        fidx, summary = _apply_summary(module)
    except BadApplySignature as exc:
        return Finding(FAKE_TRANSFER, INCONCLUSIVE, [], reason=str(exc))

    if summary.budget_exceeded:
        return Finding(FAKE_TRANSFER, VULNERABLE,
                       [Evidence(fidx, 0, "path budget exceeded; guards unproven")],
                       degraded=True)

    resolved, _ = resolve_indirect_targets(module, summary)

    # sever every edge that is only traversed when a code guard holds
    forbidden = set()
    guard_sites = []
    for eid, constraints in summary.edge_constraints.items():
        for cmp, holds in constraints:
            if holds and cmp.pattern in GUARD_PATTERNS and _guard_pair(cmp, wl):
                forbidden.add(eid)
                guard_sites.append(cmp.site)
    # an assert on a code guard kills its continuation
    assert_cuts = {}
    for ae in summary.asserts.values():
        if ae.equality_required and _guard_pair(ae.comparison, wl):
            guard_sites.append(ae.site)
            cut = assert_cuts.get(ae.block)
            assert_cuts[ae.block] = ae.pos if cut is None else min(cut, ae.pos)
            for e in summary.cfg.succ[ae.block]:
                forbidden.add(e.id)

    reachable = reachable_blocks(summary.cfg, summary.cfg.entry, forbidden)
    surviving = {}
    for ev in summary.all_calls():
        if not _is_developer_call(module, ev):
            continue
        if ev.block not in reachable:
            continue
        cut = assert_cuts.get(ev.block)
        if cut is not None and ev.pos > cut:
            continue
        surviving[ev.site] = ev

    if surviving:
        evidence = [Evidence(f, off, _call_desc(module, ev))
                    for (f, off), ev in sorted(surviving.items())]
        return Finding(FAKE_TRANSFER, VULNERABLE, evidence)
    if guard_sites:
        evidence = [Evidence(f, off, "code guard severs this dispatch path")
                    for f, off in sorted(set(guard_sites))]
    else:
        evidence = [Evidence(fidx, 0, "apply contains no developer-function call sites")]
    return Finding(FAKE_TRANSFER, SAFE, evidence)


def _is_developer_call(module, ev) -> bool:
    if ev.kind == "call_indirect":
        return True  # resolved or not: conservative
    if ev.kind == "call":
        return not module.is_import(ev.target) and not is_runtime_helper(module, ev.target)
    return False


def _call_desc(module, ev) -> str:
    if ev.kind == "call_indirect":
        return "indirect call reachable without a code guard"
    return f"call to function {ev.target} reachable without a code guard"


def _seed_handler_state(module, fidx, args=None) -> SimState:
    """Handler convention: first i64 parameter is the executing account
    (execute_action passes the receiver first), second is code."""
    sig = module.func_type(fidx)
    state = SimState()
    for i, _ in enumerate(sig.params):
        state.locals[i] = SymValue("Unknown")
    if args is not None:
        for i, v in enumerate(args[:len(sig.params)]):
            state.locals[i] = v
    else:
        if len(sig.params) >= 1 and sig.params[0] == "i64":
            state.locals[0] = SymValue(SELF)
        if len(sig.params) >= 2 and sig.params[1] == "i64":
            state.locals[1] = SymValue(CODE)
    return state


def _to_self_comparison(summary):
    for cmp in summary.comparisons.values():
        if cmp.pattern in GUARD_PATTERNS and cmp.tags() == {TO, SELF}:
            return cmp
    return None


def detect_fake_notice(module: WasmModule) -> Finding:
    try:
        hmap = locate_handlers(module)
    except BadApplySignature as exc:
        return Finding(FAKE_NOTICE, INCONCLUSIVE, [], reason=str(exc))

    handlers = sorted(hmap.entries.get(names.TRANSFER, ()))
    if not handlers:
        return Finding(FAKE_NOTICE, INCONCLUSIVE, [], degraded=hmap.degraded,
                       reason="NoTransferHandler")

    checked = []
    unchecked = []
    degraded = hmap.degraded
    for fidx in handlers:
        summary = simulate_function(module, fidx, _seed_handler_state(module, fidx))
        degraded = degraded or summary.budget_exceeded
        cmp = _to_self_comparison(summary)
        if cmp is None:
            # the check is sometimes emitted in a helper: look one call deep
            callees = {(ev.target, ev.args) for ev in summary.all_calls()
                       if ev.kind == "call" and not module.is_import(ev.target)}
            for target, args in sorted(callees, key=lambda c: c[0]):
                sub = simulate_function(module, target,
                                        _seed_handler_state(module, target, args))
                degraded = degraded or sub.budget_exceeded
                cmp = _to_self_comparison(sub)
                if cmp is not None:
                    break
        if cmp is None:
            body = module.body_of(fidx)
            offset = body.instructions[0].offset if body.instructions else 0
            unchecked.append(Evidence(fidx, offset,
                                      "transfer handler never compares to with _self"))
        else:
            checked.append(Evidence(cmp.site[0], cmp.site[1],
                                    "to/_self comparison guards this handler"))

    if unchecked:
        return Finding(FAKE_NOTICE, VULNERABLE, unchecked, degraded=degraded)
    return Finding(FAKE_NOTICE, SAFE, checked, degraded=degraded)


def run_detectors(module: WasmModule, wl: Whitelist = None, which=DETECTORS) -> list:
    findings = []
    if FAKE_TRANSFER in which:
        findings.append(detect_fake_eos_transfer(module, wl))
    if FAKE_NOTICE in which:
        findings.append(detect_fake_notice(module))
    return findings
