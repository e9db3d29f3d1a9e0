"""Synthetic corpora for desk-scale experiments.

``zipf_text_corpus`` yields unlabeled-looking text (all ``O``) meant to be
relabeled with :func:`btlner.corpus.generate_random_labels`.
``learnable_corpus`` yields an imbalanced NER corpus whose labels follow
from token identity and a preceding cue word.
"""

from __future__ import annotations

import numpy as np

from .corpus import NEGATIVE, LabeledCorpus, LabeledDocument

_ZIPF_SALT = 0x7A697066
_LEARNABLE_SALT = 0x6C726E62


def _zipf_probs(n, a):
    p = 1.0 / np.arange(1, n + 1) ** a
    return p / p.sum()


def zipf_text_corpus(num_docs: int = 480, doc_len: int = 50, vocab_size: int = 400,
                     zipf_a: float = 1.0, seed: int = 0) -> LabeledCorpus:
    rng = np.random.default_rng([seed, _ZIPF_SALT])
    words = np.array([f"w{i}" for i in range(vocab_size)])
    probs = _zipf_probs(vocab_size, zipf_a)
    docs = []
    for d in range(num_docs):
        toks = words[rng.choice(vocab_size, size=doc_len, p=probs)].tolist()
        docs.append(LabeledDocument(f"zipf-{d:04d}", toks, np.zeros(doc_len, dtype=np.int64)))
    return LabeledCorpus.from_documents(docs, [NEGATIVE])


def entity_shares(num_entities: int = 9, largest: float = 0.2, span: float = 100.0) -> np.ndarray:
    """Geometric token shares from ``largest`` down to ``largest / span``."""
    if num_entities == 1:
        return np.array([largest])
    return largest * span ** (-np.arange(num_entities) / (num_entities - 1))


def learnable_corpus(num_docs: int = 1000, doc_len: int = 50, num_entities: int = 9,
                     largest: float = 0.2, span: float = 150.0, background_vocab: int = 300,
                     words_per_class: int = 6, shared_words: int = 2, seed: int = 0) -> LabeledCorpus:
    """Imbalanced corpus with learnable, partly context-dependent labels.

    Each mention is a class-specific cue word (labeled ``O``) followed by
    one or two entity words drawn from the class lexicon.  Of each minority
    class's ``words_per_class`` words, ``shared_words`` also belong to the
    dominant entity class, so those tokens are only resolvable through the
    cue.
    """
    rng = np.random.default_rng([seed, _LEARNABLE_SALT])
    shares = entity_shares(num_entities, largest, span)
    classes = [NEGATIVE] + [f"ENT{c + 1}" for c in range(num_entities)]
    own = words_per_class - shared_words
    lex = [[f"e{c}_{j}" for j in range(words_per_class if c == 0 else own)]
           for c in range(num_entities)]
    for c in range(1, num_entities):
        shared = [f"s{c}_{j}" for j in range(shared_words)]
        lex[c] += shared
        lex[0] += shared
    cues = [f"cue{c}" for c in range(num_entities)]
    bg = np.array([f"b{i}" for i in range(background_vocab)])
    bg_p = _zipf_probs(background_vocab, 1.0)
    # a mention slot emits 1 cue + 1.5 entity tokens on average; solve for
    # per-slot start probabilities that hit the target token shares
    total = shares.sum()
    slot = total / (1.5 * (1.0 - total))
    start = shares * (1.0 + 1.5 * slot) / 1.5
    p_start = np.append(start, 1.0 - start.sum())
    docs = []
    for d in range(num_docs):
        toks, labs = [], []
        while len(toks) < doc_len:
            k = rng.choice(num_entities + 1, p=p_start)
            if k == num_entities:
                toks.append(str(bg[rng.choice(background_vocab, p=bg_p)]))
                labs.append(0)
                continue
            toks.append(cues[k])
            labs.append(0)
            for _ in range(rng.integers(1, 3)):
                toks.append(lex[k][rng.integers(len(lex[k]))])
                labs.append(k + 1)
        docs.append(LabeledDocument(f"syn-{d:04d}", toks[:doc_len], np.array(labs[:doc_len])))
    return LabeledCorpus.from_documents(docs, classes)
