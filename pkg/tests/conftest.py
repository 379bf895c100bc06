import json
from pathlib import Path

import pytest

from evulhunter import corpus as corpus_mod

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURES = REPO_ROOT / "fixtures"

HAVE_ASSEMBLER = corpus_mod.find_assembler() is not None
needs_assembler = pytest.mark.skipif(not HAVE_ASSEMBLER,
                                     reason="wat2wasm not installed")


@pytest.fixture(scope="session")
def fixtures_dir():
    assert FIXTURES.is_dir(), "run `evulhunter corpus fixtures` first"
    return FIXTURES


@pytest.fixture(scope="session")
def manifest(fixtures_dir):
    return json.loads((fixtures_dir / "manifest.json").read_text())


@pytest.fixture(scope="session")
def labels(fixtures_dir):
    import csv
    rows = {}
    with open(fixtures_dir / "labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            rows[(row["file"], row["detector"])] = row["label"]
    return rows


def load_wasm(rel):
    return (FIXTURES / rel).read_bytes()


@pytest.fixture(scope="session")
def apply_min():
    return load_wasm("misc/apply_min.wasm")
