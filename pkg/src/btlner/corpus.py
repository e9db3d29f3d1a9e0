"""Labeled corpora: ingestion, chunking, label merging, splits and random labels."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BratParseError, ConfigError, CorpusError, SpanRangeError

NEGATIVE = "O"
SENTENCE_FINAL = frozenset({".", "!", "?"})
DEFAULT_MAX_LEN = 512
# salt keeps the label stream independent of other generators seeded alike
_RANDOM_LABEL_SALT = 0x6C61626C

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_SPAN_RE = re.compile(r"^(\d+) (\d+)$")


def tokenize(text: str) -> list[tuple[str, int, int]]:
    """Whitespace tokenization with punctuation split off as single tokens.

    Returns ``(token, start, end)`` character spans.
    """
    return [(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


@dataclass
class LabelVocabulary:
    classes: list[str]
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not self.classes or self.classes[0] != NEGATIVE:
            raise CorpusError(f"class 0 must be {NEGATIVE!r}, got {self.classes[:1]}")
        if len(set(self.classes)) != len(self.classes):
            raise CorpusError("duplicate class names")
        if self.counts.shape != (len(self.classes),):
            raise CorpusError("one count per class required")
        if (self.counts < 0).any():
            raise CorpusError("counts must be nonnegative")

    negative_class = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __len__(self):
        return len(self.classes)

    def index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise ConfigError(f"unknown label {name!r}") from None

    def recount(self, label_arrays: Iterable[np.ndarray]) -> "LabelVocabulary":
        counts = np.zeros(len(self.classes), dtype=np.int64)
        for labels in label_arrays:
            counts += np.bincount(labels, minlength=len(self.classes))
        return LabelVocabulary(list(self.classes), counts)


@dataclass
class LabeledDocument:
    doc_id: str
    tokens: list[str]
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.tokens) != len(self.labels):
            raise CorpusError(
                f"{self.doc_id}: {len(self.tokens)} tokens but {len(self.labels)} labels"
            )

    def __len__(self):
        return len(self.tokens)

    def label_names(self, classes: Sequence[str]) -> list[str]:
        return [classes[i] for i in self.labels]


@dataclass
class LabeledCorpus:
    documents: list[LabeledDocument]
    vocab: LabelVocabulary

    def __post_init__(self):
        n = len(self.vocab)
        for doc in self.documents:
            if len(doc.labels) and (doc.labels.min() < 0 or doc.labels.max() >= n):
                raise CorpusError(f"{doc.doc_id}: label id outside vocabulary")

    @classmethod
    def from_documents(cls, documents, classes):
        vocab = LabelVocabulary(list(classes), np.zeros(len(classes), dtype=np.int64))
        return cls(list(documents), vocab.recount(d.labels for d in documents))

    @property
    def num_tokens(self) -> int:
        return sum(len(d) for d in self.documents)


@dataclass
class Passage:
    source_doc: str
    token_offset: int
    tokens: list[str]
    labels: np.ndarray
    token_ids: np.ndarray | None = None

    def __len__(self):
        return len(self.tokens)


class TokenVocab:
    """String token to integer id map; id 0 is padding, id 1 unknown."""

    PAD = 0
    UNK = 1

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = ["<pad>", "<unk>"]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            if t not in self.stoi:
                self.stoi[t] = len(self.itos)
                self.itos.append(t)

    @classmethod
    def build(cls, passages: Iterable[Passage]) -> "TokenVocab":
        seen = {}
        for p in passages:
            for t in p.tokens:
                seen.setdefault(t, None)
        return cls(list(seen))

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.stoi.get(t, self.UNK) for t in tokens], dtype=np.int64)


@dataclass
class CorpusSplit:
    train: list[Passage]
    test: list[Passage]
    seed: int
    train_fraction: float
    vocab: LabelVocabulary
    token_vocab: TokenVocab
    train_docs: list[str] = field(default_factory=list)
    test_docs: list[str] = field(default_factory=list)

    @property
    def train_vocab(self) -> LabelVocabulary:
        """Label vocabulary with counts taken from the training passages only."""
        return self.vocab.recount(p.labels for p in self.train)


# ---------------------------------------------------------------------------
# brat standoff
# ---------------------------------------------------------------------------

def _parse_t_lines(annotations: str, text_len: int):
    spans = []
    for lineno, line in enumerate(annotations.splitlines(), start=1):
        if not line.strip() or not line.startswith("T"):
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise BratParseError(lineno, line)
        head = parts[1].split(" ", 1)
        if len(head) != 2 or not head[0]:
            raise BratParseError(lineno, line)
        label, offsets = head
        fragments = []
        for frag in offsets.split(";"):
            m = _SPAN_RE.match(frag.strip())
            if not m:
                raise BratParseError(lineno, line, "bad span")
            start, end = int(m.group(1)), int(m.group(2))
            if start > end:
                raise BratParseError(lineno, line, "span start after end")
            if end > text_len:
                raise SpanRangeError(
                    f"line {lineno}: span {start}-{end} outside text of length {text_len}"
                )
            fragments.append((start, end))
        first = fragments[0][0]
        length = sum(e - s for s, e in fragments)
        spans.append((first, -length, lineno, label, fragments))
    # earliest start, then longest, then file order
    spans.sort(key=lambda s: s[:3])
    return spans


def parse_brat(text: str, annotations: str, doc_id: str = "doc",
               classes: list[str] | None = None) -> LabeledDocument:
    """Token-level labels from a brat ``.txt``/``.ann`` pair.

    ``classes`` is the running list of label names shared across
    documents; unseen entity types are appended to it.  Only T-lines are
    read.  A token takes the label of the winning annotation among those
    overlapping it: earliest start first, then the longest span.
    """
    if classes is None:
        classes = [NEGATIVE]
    toks = tokenize(text)
    spans = _parse_t_lines(annotations, len(text))
    labels = np.zeros(len(toks), dtype=np.int64)
    assigned = np.zeros(len(toks), dtype=bool)
    starts = np.array([s for _, s, _ in toks], dtype=np.int64)
    ends = np.array([e for _, _, e in toks], dtype=np.int64)
    for _, _, _, label, fragments in spans:
        if label not in classes:
            classes.append(label)
        lid = classes.index(label)
        for fs, fe in fragments:
            hit = (starts < fe) & (ends > fs) & ~assigned
            labels[hit] = lid
            assigned |= hit
    return LabeledDocument(doc_id, [t for t, _, _ in toks], labels)


def read_brat_dir(path) -> LabeledCorpus:
    path = Path(path)
    txts = sorted(path.glob("*.txt"))
    if not txts:
        raise CorpusError(f"{path}: no .txt files found")
    classes = [NEGATIVE]
    docs = []
    for txt in txts:
        ann = txt.with_suffix(".ann")
        try:
            text = txt.read_text(encoding="utf-8")
            annotations = ann.read_text(encoding="utf-8") if ann.exists() else ""
            docs.append(parse_brat(text, annotations, txt.stem, classes))
        except (OSError, UnicodeDecodeError, CorpusError) as exc:
            raise CorpusError(f"{ann if ann.exists() else txt}: {exc}") from exc
    return LabeledCorpus.from_documents(docs, classes)


# ---------------------------------------------------------------------------
# TSV
# ---------------------------------------------------------------------------

def parse_tsv(text: str, prefix: str = "doc") -> LabeledCorpus:
    """``token<TAB>label`` per line; a blank line ends a document."""
    classes = [NEGATIVE]
    docs = []
    tokens, labels = [], []

    def flush():
        if tokens:
            docs.append(LabeledDocument(f"{prefix}-{len(docs)}", list(tokens), list(labels)))
            tokens.clear()
            labels.clear()

    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            flush()
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise CorpusError(f"line {lineno}: expected token<TAB>label, got {line!r}")
        tok, lab = parts
        if lab not in classes:
            classes.append(lab)
        tokens.append(tok)
        labels.append(classes.index(lab))
    flush()
    return LabeledCorpus.from_documents(docs, classes)


def read_tsv_dir(path) -> LabeledCorpus:
    path = Path(path)
    files = [path] if path.is_file() else sorted(path.glob("*.tsv"))
    if not files:
        raise CorpusError(f"{path}: no .tsv files found")
    docs, names = [], [NEGATIVE]
    for f in files:
        try:
            part = parse_tsv(f.read_text(encoding="utf-8"), prefix=f.stem)
        except (OSError, UnicodeDecodeError, CorpusError) as exc:
            raise CorpusError(f"{f}: {exc}") from exc
        remap = []
        for name in part.vocab.classes:
            if name not in names:
                names.append(name)
            remap.append(names.index(name))
        remap = np.array(remap, dtype=np.int64)
        docs.extend(replace(d, labels=remap[d.labels]) for d in part.documents)
    return LabeledCorpus.from_documents(docs, names)


# ---------------------------------------------------------------------------
# JSON export
# ---------------------------------------------------------------------------

def corpus_to_dict(corpus: LabeledCorpus) -> dict:
    return {
        "documents": [
            {"doc_id": d.doc_id, "tokens": list(d.tokens), "labels": d.labels.tolist()}
            for d in corpus.documents
        ],
        "vocabulary": {
            "classes": list(corpus.vocab.classes),
            "counts": corpus.vocab.counts.tolist(),
        },
    }


def corpus_from_dict(data: dict) -> LabeledCorpus:
    try:
        vocab = LabelVocabulary(list(data["vocabulary"]["classes"]),
                                data["vocabulary"]["counts"])
        docs = [LabeledDocument(d["doc_id"], list(d["tokens"]), d["labels"])
                for d in data["documents"]]
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"corpus JSON missing field: {exc}") from exc
    return LabeledCorpus(docs, vocab)


def save_corpus(corpus: LabeledCorpus, path) -> None:
    Path(path).write_text(json.dumps(corpus_to_dict(corpus)), encoding="utf-8")


def load_corpus(path) -> LabeledCorpus:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusError(f"{path}: {exc}") from exc
    return corpus_from_dict(data)


def corpus_hash(corpus: LabeledCorpus) -> str:
    blob = json.dumps(corpus_to_dict(corpus), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def chunk_document(doc: LabeledDocument, max_len: int = DEFAULT_MAX_LEN) -> list[Passage]:
    """Split a document into consecutive passages of at most ``max_len`` tokens.

    Each cut is placed after the last sentence-final token inside the
    window when there is one, otherwise exactly at ``max_len``.
    """
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    n = len(doc)
    out = []
    start = 0
    while start < n:
        end = min(start + max_len, n)
        if end < n:
            for i in range(end - 1, start - 1, -1):
                if doc.tokens[i] in SENTENCE_FINAL:
                    end = i + 1
                    break
        out.append(Passage(doc.doc_id, start, doc.tokens[start:end], doc.labels[start:end].copy()))
        start = end
    return out


def merge_labels(corpus: LabeledCorpus, merge_map: dict[str, str]) -> LabeledCorpus:
    """Collapse label categories, e.g. ``{"Mass": "Quant_measure"}``.

    Targets that are not already classes are appended to the vocabulary.
    """
    if not merge_map:
        return corpus
    old = corpus.vocab.classes
    for src, dst in merge_map.items():
        if src not in old:
            raise ConfigError(f"unknown label {src!r} in merge map")
        if src == NEGATIVE and dst != NEGATIVE:
            raise ConfigError(f"cannot merge {NEGATIVE!r} into an entity class")
    new = [c for c in old if c not in merge_map or merge_map[c] == c]
    for dst in merge_map.values():
        if dst not in new:
            new.append(dst)
    remap = np.array([new.index(merge_map.get(c, c)) for c in old], dtype=np.int64)
    docs = [replace(d, labels=remap[d.labels]) for d in corpus.documents]
    counts = np.zeros(len(new), dtype=np.int64)
    np.add.at(counts, remap, corpus.vocab.counts)
    return LabeledCorpus(docs, LabelVocabulary(new, counts))


def split_train_test(corpus: LabeledCorpus, train_fraction: float = 0.85, seed: int = 0,
                     max_len: int = DEFAULT_MAX_LEN) -> CorpusSplit:
    """Document-level train/test split, chunked into passages and id-encoded.

    The token vocabulary is built from the training passages only.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("train_fraction must lie in (0, 1)")
    n = len(corpus.documents)
    if n < 2:
        raise CorpusError(f"need at least 2 documents to split, got {n}")
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    train_docs = [corpus.documents[i] for i in sorted(order[:n_train])]
    test_docs = [corpus.documents[i] for i in sorted(order[n_train:])]
    train = [p for d in train_docs for p in chunk_document(d, max_len)]
    test = [p for d in test_docs for p in chunk_document(d, max_len)]
    tv = TokenVocab.build(train)
    for p in train + test:
        p.token_ids = tv.encode(p.tokens)
    return CorpusSplit(train, test, seed, train_fraction, corpus.vocab, tv,
                       [d.doc_id for d in train_docs], [d.doc_id for d in test_docs])


def check_proportions(proportions) -> np.ndarray:
    p = np.asarray(proportions, dtype=np.float64)
    if p.ndim != 1 or p.size < 1 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
        raise ConfigError(f"proportions must be nonnegative and sum to 1, got {list(proportions)}")
    return p


def generate_random_labels(corpus: LabeledCorpus, proportions=(0.6, 0.2, 0.2), seed: int = 0,
                           class_names: Sequence[str] | None = None) -> LabeledCorpus:
    """Replace every label with an i.i.d. draw from ``proportions``.

    Default class names are O, M, N for three classes, else O, E1, E2, ...
    """
    p = check_proportions(proportions)
    if class_names is None:
        class_names = ["O", "M", "N"] if p.size == 3 else ["O"] + [f"E{i}" for i in range(1, p.size)]
    class_names = list(class_names)
    if len(class_names) != p.size:
        raise ConfigError("one class name per proportion required")
    rng = np.random.default_rng([seed, _RANDOM_LABEL_SALT])
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    docs = []
    for d in corpus.documents:
        u = rng.random(len(d))
        docs.append(LabeledDocument(d.doc_id, list(d.tokens), np.searchsorted(cdf, u, side="right")))
    return LabeledCorpus.from_documents(docs, class_names)


def compute_class_weights(vocab_or_counts) -> np.ndarray:
    """Per-class weights ``1 - N_c / N``."""
    counts = getattr(vocab_or_counts, "counts", vocab_or_counts)
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise CorpusError("cannot weight classes of an empty corpus")
    return 1.0 - counts / total
