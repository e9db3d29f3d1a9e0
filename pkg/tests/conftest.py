import numpy as np
import pytest

from btlner.corpus import LabeledCorpus, LabeledDocument, Passage, split_train_test
from btlner.model import ModelConfig, init_model

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    def record(number, title, passed, detail=""):
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        line = f"[{status}] criterion {number}: {title}" + (f" -- {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_passage(labels, token_ids=None, doc="d", offset=0):
    labels = np.asarray(labels, dtype=np.int64)
    if token_ids is None:
        token_ids = np.arange(2, 2 + labels.size) % 50 + 2
    return Passage(doc, offset, [f"t{i}" for i in token_ids], labels, np.asarray(token_ids, dtype=np.int64))


def toy_corpus(num_docs=12, doc_len=20, classes=("O", "M", "N"), seed=0):
    rng = np.random.default_rng(seed)
    docs = []
    for d in range(num_docs):
        toks = [f"w{i}" for i in rng.integers(0, 30, doc_len)]
        labs = rng.choice(len(classes), size=doc_len, p=[0.6] + [0.4 / (len(classes) - 1)] * (len(classes) - 1))
        docs.append(LabeledDocument(f"doc{d}", toks, labs))
    return LabeledCorpus.from_documents(docs, list(classes))


@pytest.fixture
def tiny_split():
    return split_train_test(toy_corpus(), 0.75, seed=3, max_len=10)


@pytest.fixture
def tiny_model(tiny_split):
    cfg = ModelConfig(vocab_size=len(tiny_split.token_vocab), num_classes=3, hidden_dim=8,
                      layers=1, heads=2, max_len=10, seed=5)
    return init_model(cfg)
