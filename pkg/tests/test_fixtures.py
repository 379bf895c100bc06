import subprocess

import pytest

from evulhunter import corpus
from evulhunter.errors import NoGuardMarker
from evulhunter.loader import parse_module

from conftest import FIXTURES, HAVE_ASSEMBLER, needs_assembler


def test_generate_pairs_excises_guard():
    base = corpus.transfer_template("P1", "A", "direct")
    safe, vuln = corpus.generate_pairs(base, {"d": "safe"}, {"d": "vulnerable"})
    assert corpus.GUARD_BEGIN not in safe.source
    assert "i64.eq" in safe.source
    assert len(vuln.source) < len(safe.source)
    assert safe.labels == {"d": "safe"}
    assert vuln.labels == {"d": "vulnerable"}


def test_generate_pairs_requires_marker():
    spec = corpus.FixtureSpec("bare", "(module)", {})
    with pytest.raises(NoGuardMarker):
        corpus.generate_pairs(spec, {}, {})


def test_matrix_coverage(manifest):
    # both detectors x 3 patterns x 2 pairs x 2 dispatch styles, safe+vuln
    combos = set()
    for name, meta in manifest.items():
        if meta["variant"] and meta["dispatch"] and "_" in name:
            fam = "notice" if name.startswith("notice_") else "transfer"
            label = name.rsplit("_", 1)[-1]
            if label in ("safe", "vuln"):
                combos.add((fam, tuple(meta["variant"]), meta["dispatch"], label))
    expected = {(f, (p, pr), d, l)
                for f in ("transfer", "notice")
                for p in ("P1", "P2", "P3")
                for pr in ("A", "B")
                for d in ("indirect", "direct")
                for l in ("safe", "vuln")}
    assert expected <= combos


def test_labels_fixed_before_detection(manifest):
    for name, meta in manifest.items():
        for detector, label in meta["labels"].items():
            assert label in ("vulnerable", "safe"), (name, detector)


def test_corpus_size(manifest):
    pairs = [n for n in manifest if n.endswith(("_safe", "_vuln"))]
    assert len(pairs) >= 48


@needs_assembler
def test_every_wat_assembles():
    assembler = corpus.find_assembler()
    for wat in sorted(FIXTURES.rglob("*.wat")):
        proc = subprocess.run([assembler, str(wat), "-o", "/dev/null"],
                              capture_output=True)
        assert proc.returncode == 0, (wat, proc.stderr.decode())


def test_every_wasm_parses():
    count = 0
    for wasm in sorted(FIXTURES.rglob("*.wasm")):
        parse_module(wasm.read_bytes())
        count += 1
    assert count >= 53


@needs_assembler
def test_padded_wat_grows():
    small = corpus.assemble(corpus.padded_wat(2))
    big = corpus.assemble(corpus.padded_wat(50))
    assert len(big) > len(small) * 5
    parse_module(big)
