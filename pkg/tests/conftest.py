import numpy as np
import pytest

from prereqrec.data import Corpus, Document, Token

# filled by test_acceptance.py; printed once at the end of the session
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def toks(text):
    """'deep/A learning/N' -> Token tuple."""
    return tuple(Token(*t.rsplit("/", 1)) for t in text.split())


def make_corpus(rows, docs=None, n_users=None, n_items=None):
    """rows: (user, item, rating, timestamp) with integer ids."""
    rows = list(rows)
    u = np.array([r[0] for r in rows], dtype=np.int64)
    v = np.array([r[1] for r in rows], dtype=np.int64)
    n_users = n_users or (int(u.max()) + 1 if len(u) else 0)
    n_items = n_items or (int(v.max()) + 1 if len(v) else 0)
    documents = {}
    for item, (title, content) in (docs or {}).items():
        documents[item] = Document(item, toks(title), toks(content))
    return Corpus(u, v, np.array([r[2] for r in rows], float), np.array([r[3] for r in rows], dtype=np.int64),
                  tuple(f"u{k}" for k in range(n_users)), tuple(f"i{k}" for k in range(n_items)), documents)


@pytest.fixture
def write(tmp_path):
    def _write(name, text):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p
    return _write
