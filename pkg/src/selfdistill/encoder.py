"""A miniature BERT-shaped text classifier, built on the autodiff tape.

Token embeddings + learned positions + a stack of small post-norm
transformer encoder layers + first-token pooling + a linear softmax head.
Every parameter lives in a flat named ``ParameterSet`` so the averaging and
distillation machinery can treat whole models as vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError, InputError, ShapeError

GROUP_ENCODER = "encoder"
GROUP_HEAD = "head"

_CHECKPOINT_MAGIC = "selfdistill-params-v1"


@dataclass(frozen=True)
class ModelConfig:
    """Size and regularization of the classifier."""

    vocab_size: int = 2000
    max_len: int = 64
    dim: int = 32
    n_layers: int = 2
    n_heads: int = 2
    ffn_dim: int = 128
    n_classes: int = 4
    dropout_p: float = 0.1

    def __post_init__(self):
        if min(self.vocab_size, self.max_len, self.dim, self.n_layers,
               self.n_heads, self.ffn_dim, self.n_classes) <= 0:
            raise ConfigError(f"all size fields must be positive: {self}")
        if self.dim % self.n_heads != 0:
            raise ConfigError(
                f"dim {self.dim} not divisible by n_heads {self.n_heads}"
            )
        if self.max_len < 2:
            raise ConfigError("max_len must be >= 2 (room for the CLS token)")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "max_len": self.max_len,
            "dim": self.dim, "n_layers": self.n_layers,
            "n_heads": self.n_heads, "ffn_dim": self.ffn_dim,
            "n_classes": self.n_classes, "dropout_p": self.dropout_p,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class ParameterSet:
    """Named flat map of parameter tensors with a group tag per entry.

    Closed under elementwise linear combination: any two sets built from the
    same ModelConfig share name order, shapes and dtypes.
    """

    def __init__(self, tensors: dict[str, Tensor], groups: dict[str, str]):
        if set(tensors) != set(groups):
            raise ShapeError("tensor and group name sets differ")
        self.tensors = dict(tensors)
        self.groups = dict(groups)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def group(self, name: str) -> str:
        return self.groups[name]

    def copy(self) -> "ParameterSet":
        """Deep copy detached from any tape (snapshots are constants)."""
        return ParameterSet(
            {n: Tensor(t.data.copy(), is_param=True) for n, t in self.tensors.items()},
            dict(self.groups),
        )

    def compatible_with(self, other: "ParameterSet") -> bool:
        return (
            self.tensors.keys() == other.tensors.keys()
            and all(self[n].data.shape == other[n].data.shape for n in self.tensors)
        )

    def require_compatible(self, other: "ParameterSet") -> None:
        if not self.compatible_with(other):
            raise ShapeError("parameter sets have different name sets or shapes")

    def watch_on(self, tape: Tape) -> None:
        tape.watch_all(self.tensors.values())


def init_params(config: ModelConfig, seed: int, dtype=np.float64) -> ParameterSet:
    """Deterministic initialization: N(0, 0.02) weights, zero biases, unit gains."""
    rng = np.random.default_rng(seed)
    std = 0.02
    tensors: dict[str, Tensor] = {}
    groups: dict[str, str] = {}

    def param(name, array, group=GROUP_ENCODER):
        tensors[name] = Tensor(np.asarray(array, dtype=dtype), is_param=True)
        groups[name] = group

    d, f = config.dim, config.ffn_dim
    param("tok_emb", rng.normal(0.0, std, (config.vocab_size, d)))
    param("pos_emb", rng.normal(0.0, std, (config.max_len, d)))
    for i in range(config.n_layers):
        p = f"enc{i}"
        for proj in ("wq", "wk", "wv", "wo"):
            param(f"{p}.attn.{proj}", rng.normal(0.0, std, (d, d)))
        # no key bias: softmax shift invariance makes it a dead parameter
        for proj in ("bq", "bv", "bo"):
            param(f"{p}.attn.{proj}", np.zeros(d))
        param(f"{p}.ln1.g", np.ones(d))
        param(f"{p}.ln1.b", np.zeros(d))
        param(f"{p}.ffn.w1", rng.normal(0.0, std, (d, f)))
        param(f"{p}.ffn.b1", np.zeros(f))
        param(f"{p}.ffn.w2", rng.normal(0.0, std, (f, d)))
        param(f"{p}.ffn.b2", np.zeros(d))
        param(f"{p}.ln2.g", np.ones(d))
        param(f"{p}.ln2.b", np.zeros(d))
    param("head.W", rng.normal(0.0, std, (config.n_classes, d)), group=GROUP_HEAD)
    return ParameterSet(tensors, groups)


def _check_batch(config: ModelConfig, ids: np.ndarray) -> None:
    if ids.ndim != 2:
        raise InputError(f"token ids must be [B, L], got shape {ids.shape}")
    if ids.shape[1] > config.max_len:
        raise InputError(
            f"sequence length {ids.shape[1]} exceeds max_len {config.max_len}"
        )
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise InputError(
            f"token id out of range [0, {config.vocab_size}): max={ids.max()}"
        )


def encode(params: ParameterSet, batch, config: ModelConfig,
           train_mode: bool = False, tape: Tape | None = None,
           rng: np.random.Generator | None = None) -> Tensor:
    """Pooled first-token representation h, shape [B, dim].

    In train mode, dropout (embeddings, attention probabilities, sublayer
    outputs) draws from ``rng``; eval mode is a pure function of
    (params, batch). Pass an open ``tape`` to record gradients.
    """
    ids = np.asarray(batch.token_ids)
    mask = np.asarray(batch.mask, dtype=params["tok_emb"].data.dtype)
    _check_batch(config, ids)
    p = config.dropout_p if train_mode else 0.0
    if p > 0.0 and rng is None:
        raise InputError("train_mode with dropout needs an rng stream")
    if tape is not None:
        params.watch_on(tape)

    b, length = ids.shape
    d, n_heads = config.dim, config.n_heads
    dh = d // n_heads

    x = ad.add(ad.embedding(params["tok_emb"], ids),
               ad.narrow_rows(params["pos_emb"], length))
    if p > 0.0:
        x = ad.dropout(x, p, rng)

    # keys at padded positions are hidden from every query
    mask_bias = Tensor((mask - 1.0)[:, None, None, :] * ad.MASK_PENALTY)

    for i in range(config.n_layers):
        pref = f"enc{i}"

        def heads(t):
            return ad.transpose(ad.reshape(t, (b, length, n_heads, dh)), (0, 2, 1, 3))

        q = heads(ad.add(ad.matmul(x, params[f"{pref}.attn.wq"]),
                         params[f"{pref}.attn.bq"]))
        k = heads(ad.matmul(x, params[f"{pref}.attn.wk"]))
        v = heads(ad.add(ad.matmul(x, params[f"{pref}.attn.wv"]),
                         params[f"{pref}.attn.bv"]))

        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))),
                        1.0 / np.sqrt(dh))
        attn = ad.softmax(ad.add(scores, mask_bias))
        if p > 0.0:
            attn = ad.dropout(attn, p, rng)
        ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)),
                         (b, length, d))
        att_out = ad.add(ad.matmul(ctx, params[f"{pref}.attn.wo"]),
                         params[f"{pref}.attn.bo"])
        if p > 0.0:
            att_out = ad.dropout(att_out, p, rng)
        x = ad.layer_norm(ad.add(x, att_out),
                          params[f"{pref}.ln1.g"], params[f"{pref}.ln1.b"])

        h1 = ad.gelu(ad.add(ad.matmul(x, params[f"{pref}.ffn.w1"]),
                            params[f"{pref}.ffn.b1"]))
        h2 = ad.add(ad.matmul(h1, params[f"{pref}.ffn.w2"]),
                    params[f"{pref}.ffn.b2"])
        if p > 0.0:
            h2 = ad.dropout(h2, p, rng)
        x = ad.layer_norm(ad.add(x, h2),
                          params[f"{pref}.ln2.g"], params[f"{pref}.ln2.b"])

    return ad.select_position(x, 0)


def classify(params: ParameterSet, batch, config: ModelConfig,
             train_mode: bool = False, tape: Tape | None = None,
             rng: np.random.Generator | None = None) -> Tensor:
    """Pre-softmax class scores W.h, shape [B, n_classes]."""
    h = encode(params, batch, config, train_mode=train_mode, tape=tape, rng=rng)
    return ad.matmul(h, ad.transpose(params["head.W"], (1, 0)))


def predict_proba(params: ParameterSet, batch, config: ModelConfig) -> np.ndarray:
    """Class probabilities in eval mode; rows sum to 1 within 1e-6."""
    logits = classify(params, batch, config, train_mode=False, tape=None)
    return ad.softmax(logits).data


# ---------------------------------------------------------------------------
# Checkpoint format: one JSON header line with (name, shape, dtype, group)
# entries, then the raw little-endian tensor bytes concatenated in header
# order. Round-trips bit-exactly and contains nothing volatile.
# ---------------------------------------------------------------------------


def save_params(params: ParameterSet, path) -> None:
    entries = []
    blobs = []
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data)
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.str,
            "group": params.group(name),
        })
        blobs.append(arr.tobytes())
    header = json.dumps({"format": _CHECKPOINT_MAGIC, "entries": entries},
                        sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_params(path) -> ParameterSet:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        body = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("format") != _CHECKPOINT_MAGIC:
        raise InputError(f"{path}: not a parameter checkpoint")
    tensors: dict[str, Tensor] = {}
    groups: dict[str, str] = {}
    offset = 0
    for entry in header["entries"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
        raw = body[offset:offset + nbytes]
        if len(raw) != nbytes:
            raise InputError(f"{path}: truncated checkpoint at {entry['name']}")
        offset += nbytes
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        tensors[entry["name"]] = Tensor(arr, is_param=True)
        groups[entry["name"]] = entry["group"]
    return ParameterSet(tensors, groups)
