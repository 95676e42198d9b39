import sys
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from retrologic.cache import CacheStore, build_caches  # noqa: E402
from retrologic.cli import extract_all  # noqa: E402
from retrologic.data import load_reactions, records_from_row  # noqa: E402
from retrologic.templates import load_templates  # noqa: E402
from retrologic.toy import couple  # noqa: E402
from retrologic.training import prepare_items  # noqa: E402

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"

# blocks of at most five heavy atoms, so every product has at most ten
SMALL_ELECTROPHILES = ["C[C:1](=O)[Cl:2]", "OC[C:1](=O)[Cl:2]", "C[C:1](=O)[OH:2]", "NC[C:1](=O)[OH:2]",
                       "C[CH2:1][Br:2]", "OC[CH2:1][Br:2]"]
SMALL_NUCLEOPHILES = ["C[NH2:1]", "OC[NH2:1]", "C[OH:1]", "NCC[OH:1]", "CC[NH:1]C", "OCC[NH2:1]"]


@dataclass
class Corpus:
    records: list
    templates: list
    store: CacheStore
    items: list
    missed: list


@pytest.fixture(scope="session")
def toy():
    """The bundled toy corpus with its template table and caches over every split."""
    train = load_reactions(DATA / "toy_train.tsv").records
    val = load_reactions(DATA / "toy_val.tsv", "val").records
    test = load_reactions(DATA / "toy_test.tsv", "test").records
    templates, _ = load_templates(DATA / "toy.templates")
    store = build_caches([r.product for r in train + val + test], templates)
    items, missed = prepare_items(train, store)
    corpus = Corpus(train, store.templates, store, items, missed)
    corpus.val, corpus.test = val, test
    return corpus


@pytest.fixture(scope="session")
def small():
    """Reactions between tiny blocks; products have at most ten atoms."""
    recs = []
    for i, a in enumerate(SMALL_ELECTROPHILES):
        for j, b in enumerate(SMALL_NUCLEOPHILES):
            recs += records_from_row(f"s{i}{j}", couple(a, b), 1 + i % 2)
    templates = extract_all(recs)
    store = build_caches([r.product for r in recs], templates)
    items, missed = prepare_items(recs, store)
    return Corpus(recs, store.templates, store, items, missed)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
