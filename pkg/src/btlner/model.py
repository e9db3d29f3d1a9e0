"""Small BERT-style token classifier with hand-written backpropagation.

Token + learned position embeddings, post-LN transformer encoder layers
(multi-head self-attention and a GELU feed-forward block) and a linear
C-way head.  Attention never crosses passage boundaries: each passage in
a batch is a separate padded row with a key-padding mask.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError

CHECKPOINT_FORMAT = "btlner-checkpoint/1"
_LAYER_PARAMS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                 "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_classes: int
    hidden_dim: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 512
    ffn_dim: int | None = None
    seed: int = 0
    dtype: str = "float32"
    init_std: float = 0.02

    def __post_init__(self):
        for name in ("vocab_size", "num_classes", "hidden_dim", "layers", "heads", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.ffn_dim is not None and self.ffn_dim < 1:
            raise ConfigError("ffn_dim must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @property
    def ffn(self) -> int:
        return self.ffn_dim or 4 * self.hidden_dim


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelState":
        return ModelState(self.config, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype: str) -> "ModelState":
        cfg = ModelConfig(**{**asdict(self.config), "dtype": dtype})
        return ModelState(cfg, {k: v.astype(dtype) for k, v in self.params.items()})


def init_model(config: ModelConfig) -> ModelState:
    """Normal(0, init_std) weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(config.seed)
    H, F, C = config.hidden_dim, config.ffn, config.num_classes
    dt = np.dtype(config.dtype)

    def normal(*shape):
        return (rng.standard_normal(shape) * config.init_std).astype(dt)

    p = {
        "tok_emb": normal(config.vocab_size, H),
        "pos_emb": normal(config.max_len, H),
        "emb_ln_g": np.ones(H, dt),
        "emb_ln_b": np.zeros(H, dt),
    }
    for i in range(config.layers):
        for w in ("wq", "wk", "wv", "wo"):
            p[f"l{i}.{w}"] = normal(H, H)
            p[f"l{i}.b{w[1]}"] = np.zeros(H, dt)
        p[f"l{i}.ln1_g"] = np.ones(H, dt)
        p[f"l{i}.ln1_b"] = np.zeros(H, dt)
        p[f"l{i}.w1"] = normal(H, F)
        p[f"l{i}.b1"] = np.zeros(F, dt)
        p[f"l{i}.w2"] = normal(F, H)
        p[f"l{i}.b2"] = np.zeros(H, dt)
        p[f"l{i}.ln2_g"] = np.ones(H, dt)
        p[f"l{i}.ln2_b"] = np.zeros(H, dt)
    p["head_w"] = normal(H, C)
    p["head_b"] = np.zeros(C, dt)
    return ModelState(config, p)


def _pad(model, token_ids, lengths):
    cfg = model.config
    token_ids = np.asarray(token_ids, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.sum() != token_ids.size or (lengths < 1).any():
        raise ValueError("passage lengths do not match the token count")
    if lengths.max() > cfg.max_len:
        raise ValueError(f"passage of length {lengths.max()} exceeds max_len {cfg.max_len}")
    if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= cfg.vocab_size):
        raise ValueError(f"token id outside vocabulary of size {cfg.vocab_size}")
    P, T = lengths.size, int(lengths.max())
    valid = np.arange(T)[None, :] < lengths[:, None]
    ids = np.zeros((P, T), dtype=np.int64)
    ids[valid] = token_ids
    return ids, valid


def forward(model: ModelState, batch, return_cache: bool = False):
    """Per-token logits (B x C) for a batch; optionally the backprop cache."""
    return forward_arrays(model, batch.token_ids, batch.lengths, return_cache)


def forward_arrays(model: ModelState, token_ids, lengths, return_cache=False):
    cfg = model.config
    p = model.params
    ids, valid = _pad(model, token_ids, lengths)
    P, T = ids.shape
    H, nh = cfg.hidden_dim, cfg.heads
    dh = H // nh
    scale = 1.0 / math.sqrt(dh)

    x0 = (p["tok_emb"][ids] + p["pos_emb"][:T][None]).reshape(P * T, H)
    h, xh, rs = kernels.layernorm_forward(x0, p["emb_ln_g"], p["emb_ln_b"])
    cache = {"ids": ids, "valid": valid, "emb": (xh, rs), "layers": []}

    def heads(a):
        return a.reshape(P, T, nh, dh).transpose(0, 2, 1, 3)

    for i in range(cfg.layers):
        g = lambda n: p[f"l{i}.{n}"]  # noqa: E731
        q = heads(h @ g("wq") + g("bq"))
        k = heads(h @ g("wk") + g("bk"))
        v = heads(h @ g("wv") + g("bv"))
        att = kernels.masked_softmax(np.ascontiguousarray((q @ k.transpose(0, 1, 3, 2)) * scale), valid)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(P * T, H)
        h1, xh1, rs1 = kernels.layernorm_forward(h + ctx @ g("wo") + g("bo"), g("ln1_g"), g("ln1_b"))
        u = h1 @ g("w1") + g("b1")
        gu, tu = kernels.gelu_forward(u)
        h2, xh2, rs2 = kernels.layernorm_forward(h1 + gu @ g("w2") + g("b2"), g("ln2_g"), g("ln2_b"))
        if return_cache:
            cache["layers"].append({
                "h": h, "q": q, "k": k, "v": v, "att": att, "ctx": ctx,
                "h1": h1, "ln1": (xh1, rs1), "u": u, "gu": gu, "tu": tu, "ln2": (xh2, rs2),
            })
        h = h2

    full = h @ p["head_w"] + p["head_b"]
    logits = full[valid.ravel()]
    if not return_cache:
        return logits
    cache["h_out"] = h
    return logits, cache


def backward(model: ModelState, cache: dict, dlogits) -> dict[str, np.ndarray]:
    """Gradients of the loss w.r.t. every parameter, given d(loss)/d(logits)."""
    cfg = model.config
    p = model.params
    dt = np.dtype(cfg.dtype)
    ids, valid = cache["ids"], cache["valid"]
    P, T = ids.shape
    H, nh = cfg.hidden_dim, cfg.heads
    dh_ = H // nh
    scale = 1.0 / math.sqrt(dh_)
    vflat = valid.ravel()

    grads: dict[str, np.ndarray] = {}
    dfull = np.zeros((P * T, cfg.num_classes), dtype=dt)
    dfull[vflat] = dlogits
    h = cache["h_out"]
    grads["head_w"] = h.T @ dfull
    grads["head_b"] = dfull.sum(axis=0)
    dh = dfull @ p["head_w"].T

    def merge(a):
        return a.transpose(0, 2, 1, 3).reshape(P * T, H)

    for i in reversed(range(cfg.layers)):
        c = cache["layers"][i]
        g = lambda n: p[f"l{i}.{n}"]  # noqa: E731
        pre = f"l{i}."
        dr2, grads[pre + "ln2_g"], grads[pre + "ln2_b"] = kernels.layernorm_backward(dh, *c["ln2"], g("ln2_g"))
        grads[pre + "w2"] = c["gu"].T @ dr2
        grads[pre + "b2"] = dr2.sum(axis=0)
        du = kernels.gelu_backward(c["u"], c["tu"], dr2 @ g("w2").T)
        grads[pre + "w1"] = c["h1"].T @ du
        grads[pre + "b1"] = du.sum(axis=0)
        dh1 = dr2 + du @ g("w1").T
        dr1, grads[pre + "ln1_g"], grads[pre + "ln1_b"] = kernels.layernorm_backward(dh1, *c["ln1"], g("ln1_g"))
        grads[pre + "wo"] = c["ctx"].T @ dr1
        grads[pre + "bo"] = dr1.sum(axis=0)
        dctx = (dr1 @ g("wo").T).reshape(P, T, nh, dh_).transpose(0, 2, 1, 3)
        datt = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = c["att"].transpose(0, 1, 3, 2) @ dctx
        ds = kernels.softmax_backward(c["att"], np.ascontiguousarray(datt)) * scale
        dq = merge(ds @ c["k"])
        dk = merge(ds.transpose(0, 1, 3, 2) @ c["q"])
        dv = merge(dv)
        hin = c["h"]
        dh = dr1.copy()
        for name, d in (("q", dq), ("k", dk), ("v", dv)):
            grads[pre + "w" + name] = hin.T @ d
            grads[pre + "b" + name] = d.sum(axis=0)
            dh += d @ g("w" + name).T

    dx0, grads["emb_ln_g"], grads["emb_ln_b"] = kernels.layernorm_backward(dh, *cache["emb"], p["emb_ln_g"])
    dx0 = np.ascontiguousarray(dx0[vflat])
    grads["tok_emb"] = kernels.scatter_add_rows(np.zeros_like(p["tok_emb"]), ids.ravel()[vflat], dx0)
    pos = np.broadcast_to(np.arange(T), (P, T)).ravel()[vflat]
    grads["pos_emb"] = kernels.scatter_add_rows(np.zeros_like(p["pos_emb"]), np.ascontiguousarray(pos), dx0)
    return {k: np.asarray(v, dtype=dt) for k, v in grads.items()}


def save_checkpoint(path, model: ModelState, meta: dict | None = None) -> None:
    """Write an ``.npz`` archive: one array per parameter plus a JSON header.

    The header lives under the key ``__header__`` as a 0-d unicode array
    holding ``{"format", "config", "param_names", "meta"}``.
    """
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "param_names": list(model.params),
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header)), **model.params)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(ModelState, meta)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unknown checkpoint format {header.get('format')!r}")
        params = {name: data[name].copy() for name in header["param_names"]}
    return ModelState(ModelConfig(**header["config"]), params), header["meta"]
