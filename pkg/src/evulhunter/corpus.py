"""Synthetic benchmark corpus.

Hand-written text-format contracts standing in for real on-chain binaries,
assembled to .wasm with wat2wasm (wabt).  Safe templates mark their guard
region with GUARD-BEGIN/GUARD-END comments; the vulnerable twin of each
template is the same source with the guard excised, so every label is fixed
by construction before any detector runs.

Covered matrix: both detectors x three comparison patterns (P1 eq->branch,
P2 ne->branch, P3 assert) x two comparison pairs (A code-vs-token-const,
B code-vs-receiver) x two dispatch styles (call_indirect through the table,
direct call).
"""

import csv
import json
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from . import names
from .errors import NoGuardMarker

GUARD_BEGIN = ";; GUARD-BEGIN"
GUARD_END = ";; GUARD-END"

TOKEN = names.EOSIO_TOKEN
TRANSFER = names.TRANSFER
EXTRA_TOKEN = names.encode_name("eosbettokens")

# function index of the first defined function in every template below
# (three host imports precede it)
HANDLER_INDEX = 3
TABLE_SLOT = 3


@dataclass
class FixtureSpec:
    name: str
    source: str
    labels: dict                       # detector -> 'vulnerable' | 'safe'
    variant: tuple = None              # (pattern, pair) or None
    dispatch: str = None               # 'indirect' | 'direct' | None
    handler_index: int = None          # authored index for indirect dispatch
    directory: str = "misc"


def generate_pairs(base: FixtureSpec, safe_labels: dict, vuln_labels: dict):
    """Split a guarded template into its safe and vulnerable twins."""
    lines = base.source.splitlines()
    if not any(GUARD_BEGIN in ln for ln in lines):
        raise NoGuardMarker(f"fixture {base.name} has no guard marker")
    safe_lines, vuln_lines = [], []
    in_guard = False
    for ln in lines:
        if GUARD_BEGIN in ln:
            in_guard = True
            continue
        if GUARD_END in ln:
            in_guard = False
            continue
        safe_lines.append(ln)
        if not in_guard:
            vuln_lines.append(ln)
    mk = lambda suffix, src, labels: FixtureSpec(
        f"{base.name}_{suffix}", src, labels, base.variant, base.dispatch,
        base.handler_index, base.directory)
    return (mk("safe", "\n".join(safe_lines) + "\n", safe_labels),
            mk("vuln", "\n".join(vuln_lines) + "\n", vuln_labels))


_PRELUDE = """(module
  (type $hty (func (param i64 i64)))
  (import "env" "eosio_assert" (func $assert (param i32 i32)))
  (import "env" "read_action_data" (func $rad (param i32 i32) (result i32)))
  (import "env" "require_recipient" (func $reqrec (param i64)))
  (memory 1)
"""

_TABLE = f"""  (table 8 funcref)
  (elem (i32.const {TABLE_SLOT}) $handler)
"""

# payout stub: reads the action payload but never checks to against _self
_PLAIN_HANDLER = """  (func $handler (type $hty) (param $self i64) (param $code i64)
    (local $amt i64)
    i32.const 0
    i32.const 32
    call $rad
    drop
    i32.const 16
    i64.load
    local.set $amt
    local.get $self
    call $reqrec
  )
"""


def _code_rhs(pair):
    return f"i64.const {TOKEN}" if pair == "A" else "local.get $r"


def _apply_guard(pattern, pair, dispatch_body):
    rhs = _code_rhs(pair)
    if pattern == "P1":
        return f"""    block $out
      ;; GUARD-BEGIN
      block $legit
        local.get $c
        {rhs}
        i64.eq
        br_if $legit
        br $out
      end
      ;; GUARD-END
{dispatch_body}    end
"""
    if pattern == "P2":
        return f"""    block $out
      ;; GUARD-BEGIN
      local.get $c
      {rhs}
      i64.ne
      br_if $out
      ;; GUARD-END
{dispatch_body}    end
"""
    # P3: assert on the guard; continuation implies it held
    return f"""    ;; GUARD-BEGIN
    local.get $c
    {rhs}
    i64.eq
    i32.const 0
    call $assert
    ;; GUARD-END
{dispatch_body}"""


def _dispatch(style, action=TRANSFER):
    call = (f"        i32.const {TABLE_SLOT}\n        call_indirect (type $hty)\n"
            if style == "indirect" else "        call $handler\n")
    return f"""      local.get $a
      i64.const {action}
      i64.eq
      if
        local.get $r
        local.get $c
{call}      end
"""


def _notice_check(pattern):
    if pattern == "P1":
        return """    ;; GUARD-BEGIN
    block $checked
      local.get $to
      local.get $self
      i64.eq
      br_if $checked
      return
    end
    ;; GUARD-END
"""
    if pattern == "P2":
        return """    ;; GUARD-BEGIN
    local.get $to
    local.get $self
    i64.ne
    if
      return
    end
    ;; GUARD-END
"""
    return """    ;; GUARD-BEGIN
    local.get $to
    local.get $self
    i64.eq
    i32.const 256
    call $assert
    ;; GUARD-END
"""


def _checking_handler(pattern):
    return f"""  (func $handler (type $hty) (param $self i64) (param $code i64)
    (local $to i64)
    i32.const 0
    i32.const 32
    call $rad
    drop
    i32.const 8
    i64.load
    local.set $to
{_notice_check(pattern)}    local.get $self
    call $reqrec
  )
"""


def _module(handler, dispatch_style, apply_body):
    table = _TABLE if dispatch_style == "indirect" else ""
    return (_PRELUDE + table + handler
            + "  (func (export \"apply\") (param $r i64) (param $c i64) (param $a i64)\n"
            + apply_body + "  )\n)\n")


def transfer_template(pattern, pair, dispatch) -> FixtureSpec:
    """Safe apply guard around a transfer dispatch; handler has no to/_self
    check, so the notice label is vulnerable for both twins."""
    body = _apply_guard(pattern, pair, _dispatch(dispatch))
    src = _module(_PLAIN_HANDLER, dispatch, body)
    name = f"transfer_{pattern.lower()}{pair.lower()}_{dispatch}"
    return FixtureSpec(name, src, {}, (pattern, pair), dispatch,
                       HANDLER_INDEX if dispatch == "indirect" else None,
                       f"fake-transfer/{pattern.lower()}-{pair.lower()}-{dispatch}")


def notice_template(pattern, pair, dispatch) -> FixtureSpec:
    """Well-guarded apply (assert-style, pair per variant); the guard region
    is the handler's to/_self check."""
    dispatch_body = _dispatch(dispatch)
    rhs = _code_rhs(pair)
    apply_body = f"""    local.get $c
    {rhs}
    i64.eq
    i32.const 0
    call $assert
{dispatch_body}"""
    src = _module(_checking_handler(pattern), dispatch, apply_body)
    name = f"notice_{pattern.lower()}{pair.lower()}_{dispatch}"
    return FixtureSpec(name, src, {}, (pattern, pair), dispatch,
                       HANDLER_INDEX if dispatch == "indirect" else None,
                       f"fake-notice/{pattern.lower()}-{pair.lower()}-{dispatch}")


def two_tokens_fixture() -> FixtureSpec:
    """The paper's false-positive shape: the guard also accepts a second
    token account, legitimate only once that account is whitelisted."""
    dispatch_body = _dispatch("indirect")
    body = f"""    block $out
      block $legit
        local.get $c
        i64.const {TOKEN}
        i64.eq
        br_if $legit
        local.get $c
        i64.const {EXTRA_TOKEN}
        i64.eq
        br_if $legit
        br $out
      end
{dispatch_body}    end
"""
    src = _module(_PLAIN_HANDLER, "indirect", body)
    return FixtureSpec("two_tokens", src,
                       {"fake-transfer": "vulnerable", "fake-notice": "vulnerable"},
                       ("P1", "A"), "indirect", HANDLER_INDEX,
                       "fake-transfer/canonical")


def safe_transfer_template() -> FixtureSpec:
    """Standard CDT dispatcher: if (code == eosio.token || code == receiver)."""
    dispatch_body = _dispatch("indirect")
    body = f"""    block $out
      ;; GUARD-BEGIN
      block $legit
        local.get $c
        i64.const {TOKEN}
        i64.eq
        br_if $legit
        local.get $c
        local.get $r
        i64.eq
        br_if $legit
        br $out
      end
      ;; GUARD-END
{dispatch_body}    end
"""
    src = _module(_PLAIN_HANDLER, "indirect", body)
    return FixtureSpec("transfer", src, {}, ("P1", "A"), "indirect",
                       HANDLER_INDEX, "fake-transfer/canonical")


def no_transfer_handler_fixture() -> FixtureSpec:
    """Guarded apply that dispatches an unrelated action: the notice
    detector has no transfer handler to inspect."""
    body = f"""    local.get $c
    i64.const {TOKEN}
    i64.eq
    i32.const 0
    call $assert
{_dispatch("direct", action=names.encode_name("hi"))}"""
    src = _module(_PLAIN_HANDLER, "direct", body)
    return FixtureSpec("no_transfer_handler", src,
                       {"fake-transfer": "safe"}, None, "direct", None,
                       "fake-notice/canonical")


def apply_min_fixture() -> FixtureSpec:
    src = """(module
  (func (export "apply") (param i64 i64 i64))
)
"""
    return FixtureSpec("apply_min", src, {"fake-transfer": "safe"},
                       None, None, None, "misc")


def padded_wat(pad_funcs: int, pad_len: int = 40) -> str:
    """A vulnerable dispatcher inflated with dead function bodies, for the
    size-vs-time performance sweep."""
    base = transfer_template("P1", "A", "indirect")
    _, vuln = generate_pairs(base, {}, {})
    pad = []
    for i in range(pad_funcs):
        ops = "\n".join(f"    i64.const {0x123456789AB + i + j}\n    drop"
                        for j in range(pad_len))
        pad.append(f"  (func $pad{i}\n{ops}\n  )\n")
    return vuln.source.rstrip()[:-1] + "\n" + "".join(pad) + ")\n"


def all_fixtures():
    """The full authored corpus, labels assigned before any detector runs."""
    out = []
    for pattern in ("P1", "P2", "P3"):
        for pair in ("A", "B"):
            for dispatch in ("indirect", "direct"):
                t = transfer_template(pattern, pair, dispatch)
                safe, vuln = generate_pairs(
                    t,
                    {"fake-transfer": "safe", "fake-notice": "vulnerable"},
                    {"fake-transfer": "vulnerable", "fake-notice": "vulnerable"})
                out += [safe, vuln]
                n = notice_template(pattern, pair, dispatch)
                safe, vuln = generate_pairs(
                    n,
                    {"fake-notice": "safe", "fake-transfer": "safe"},
                    {"fake-notice": "vulnerable", "fake-transfer": "safe"})
                out += [safe, vuln]
    canonical_safe, canonical_vuln = generate_pairs(
        safe_transfer_template(),
        {"fake-transfer": "safe", "fake-notice": "vulnerable"},
        {"fake-transfer": "vulnerable", "fake-notice": "vulnerable"})
    canonical_safe.name = "safe_transfer"
    canonical_vuln.name = "vuln_transfer"
    notice_safe, notice_vuln = generate_pairs(
        notice_template("P3", "A", "indirect"),
        {"fake-notice": "safe", "fake-transfer": "safe"},
        {"fake-notice": "vulnerable", "fake-transfer": "safe"})
    notice_safe.name, notice_safe.directory = "notice_safe", "fake-notice/canonical"
    notice_vuln.name, notice_vuln.directory = "notice_vuln", "fake-notice/canonical"
    out += [canonical_safe, canonical_vuln, notice_safe, notice_vuln,
            two_tokens_fixture(), no_transfer_handler_fixture(),
            apply_min_fixture()]
    return out


def find_assembler():
    return shutil.which("wat2wasm")


def assemble(wat: str, assembler: str = None) -> bytes:
    """Assemble text format to binary via wat2wasm (wabt)."""
    assembler = assembler or find_assembler()
    if assembler is None:
        raise RuntimeError("wat2wasm not found; install wabt (e.g. npm i -g wabt)")
    with tempfile.TemporaryDirectory() as tmp:
        wat_path = Path(tmp) / "fixture.wat"
        wasm_path = Path(tmp) / "fixture.wasm"
        wat_path.write_text(wat)
        proc = subprocess.run([assembler, str(wat_path), "-o", str(wasm_path)],
                              capture_output=True)
        if proc.returncode != 0:
            raise RuntimeError(f"wat2wasm failed: {proc.stderr.decode()}")
        return wasm_path.read_bytes()


def build_corpus(root, do_assemble=True) -> list:
    """Write .wat sources, labels.csv and manifest.json under root;
    optionally assemble each to .wasm next to its source."""
    root = Path(root)
    specs = all_fixtures()
    label_rows = []
    manifest = {}
    for spec in specs:
        d = root / spec.directory
        d.mkdir(parents=True, exist_ok=True)
        wat_path = d / f"{spec.name}.wat"
        wat_path.write_text(spec.source)
        rel = f"{spec.directory}/{spec.name}.wasm"
        if do_assemble:
            (d / f"{spec.name}.wasm").write_bytes(assemble(spec.source))
        for detector, label in sorted(spec.labels.items()):
            label_rows.append({"file": rel, "detector": detector, "label": label})
        manifest[spec.name] = {
            "file": rel,
            "labels": spec.labels,
            "variant": list(spec.variant) if spec.variant else None,
            "dispatch": spec.dispatch,
            "handler_index": spec.handler_index,
            "table_slot": TABLE_SLOT if spec.handler_index is not None else None,
        }
    with open(root / "labels.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["file", "detector", "label"])
        writer.writeheader()
        writer.writerows(sorted(label_rows, key=lambda r: (r["file"], r["detector"])))
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return specs
