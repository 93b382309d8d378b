"""Pose Transformer classifier with a single learnable decoder query.

Frame vectors (T x D) plus a learnable positional table go through a stack
of post-norm encoder layers. One learnable query vector is decoded against
the encoder output (self-attention, cross-attention, feed-forward, each
followed by residual + layer norm) and a one-hidden-layer MLP maps it to
class logits. D is 242 for real data; tests may shrink it.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

INIT_MODES = ("faithful", "standard")
CHECKPOINT_MAGIC = b"SPTR1"


class ConfigError(ValueError):
    pass


class SequenceLengthError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class SpoterConfig:
    num_classes: int
    input_dim: int = 242
    encoder_layers: int = 6
    decoder_layers: int = 6
    heads: int = 11
    ff_dim: int = 1024
    max_frames: int = 256
    dropout_rate: float = 0.0
    init_mode: str = "faithful"
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.input_dim < 1 or self.heads < 1 or self.input_dim % self.heads:
            raise ConfigError(f"heads ({self.heads}) must divide input_dim ({self.input_dim})")
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ConfigError("need at least one encoder and one decoder layer")
        if self.ff_dim < 1 or self.max_frames < 1:
            raise ConfigError("ff_dim and max_frames must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f"init_mode must be one of {INIT_MODES}")

    @property
    def head_dim(self) -> int:
        return self.input_dim // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SpoterConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _attention_shapes(prefix: str, d: int) -> list[tuple[str, tuple[int, ...]]]:
    out = []
    for p in ("q", "k", "v", "o"):
        out += [(f"{prefix}.w_{p}", (d, d)), (f"{prefix}.b_{p}", (d,))]
    return out


def _norm_shapes(prefix: str, d: int) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.gain", (d,)), (f"{prefix}.bias", (d,))]


def _ff_shapes(prefix: str, d: int, f: int) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.w1", (d, f)), (f"{prefix}.b1", (f,)), (f"{prefix}.w2", (f, d)), (f"{prefix}.b2", (d,))]


def param_shapes(cfg: SpoterConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list of every learnable array."""
    d, f = cfg.input_dim, cfg.ff_dim
    shapes = [("pos_encoding", (cfg.max_frames, d)), ("class_query", (1, d))]
    for i in range(cfg.encoder_layers):
        p = f"encoder.{i}"
        shapes += _attention_shapes(f"{p}.self_attn", d) + _norm_shapes(f"{p}.norm1", d)
        shapes += _ff_shapes(f"{p}.ff", d, f) + _norm_shapes(f"{p}.norm2", d)
    for i in range(cfg.decoder_layers):
        p = f"decoder.{i}"
        shapes += _attention_shapes(f"{p}.self_attn", d) + _norm_shapes(f"{p}.norm1", d)
        shapes += _attention_shapes(f"{p}.cross_attn", d) + _norm_shapes(f"{p}.norm2", d)
        shapes += _ff_shapes(f"{p}.ff", d, f) + _norm_shapes(f"{p}.norm3", d)
    shapes += [("head.w1", (d, d)), ("head.b1", (d,)), ("head.w2", (d, cfg.num_classes)), ("head.b2", (cfg.num_classes,))]
    return shapes


class SpoterParams:
    """Named learnable arrays, in :func:`param_shapes` order."""

    def __init__(self, arrays: dict[str, Tensor]):
        self.arrays = dict(arrays)

    def __getitem__(self, name: str) -> Tensor:
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    def tensors(self) -> list[Tensor]:
        return list(self.arrays.values())

    def items(self):
        return self.arrays.items()

    def num_values(self) -> int:
        return sum(t.size for t in self.arrays.values())

    def copy(self) -> "SpoterParams":
        return SpoterParams({k: Tensor(t.data.copy(), requires_grad=t.requires_grad, name=k) for k, t in self.arrays.items()})

    def zero_grad(self) -> None:
        for t in self.arrays.values():
            t.grad = None

    def check_shapes(self, cfg: SpoterConfig) -> None:
        expected = param_shapes(cfg)
        if [n for n, _ in expected] != list(self.arrays):
            raise ConfigError("parameter names do not match the config")
        for name, shape in expected:
            if self.arrays[name].shape != shape:
                raise ConfigError(f"{name}: shape {self.arrays[name].shape} != expected {shape}")


def init_params(cfg: SpoterConfig, rng: np.random.Generator) -> SpoterParams:
    """Draw every array.

    ``faithful``: each value i.i.d. U[0, 1), layer norms included.
    ``standard``: Glorot-uniform matrices, zero biases, unit gains,
    U(-0.1, 0.1) positional table and query.
    """
    arrays = {}
    for name, shape in param_shapes(cfg):
        if cfg.init_mode == "faithful":
            data = rng.random(shape)
        else:
            leaf = name.rsplit(".", 1)[-1]
            if len(shape) == 2 and name not in ("pos_encoding", "class_query"):
                a = math.sqrt(6.0 / (shape[0] + shape[1]))
                data = rng.uniform(-a, a, shape)
            elif name in ("pos_encoding", "class_query"):
                data = rng.uniform(-0.1, 0.1, shape)
            elif leaf == "gain":
                data = np.ones(shape)
            else:
                data = np.zeros(shape)
        arrays[name] = Tensor(data, requires_grad=True, name=name)
    return SpoterParams(arrays)


# -- forward ----------------------------------------------------------------


def attention(params: SpoterParams, prefix: str, query: Tensor, memory: Tensor, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention of (Lq, D) queries over (Lk, D) memory."""
    lq, d = query.shape
    lk = memory.shape[0]
    hd = d // heads
    p = lambda n: params[f"{prefix}.{n}"]  # noqa: E731
    q = dc.linear(query, p("w_q"), p("b_q")).reshape(lq, heads, hd).transpose(1, 0, 2)
    k = dc.linear(memory, p("w_k"), p("b_k")).reshape(lk, heads, hd).transpose(1, 2, 0)
    v = dc.linear(memory, p("w_v"), p("b_v")).reshape(lk, heads, hd).transpose(1, 0, 2)
    weights = dc.softmax(dc.scale(q @ k, 1.0 / math.sqrt(hd)), axis=-1)
    ctx = (weights @ v).transpose(1, 0, 2).reshape(lq, d)
    return dc.linear(ctx, p("w_o"), p("b_o"))


def _feed_forward(params: SpoterParams, prefix: str, x: Tensor) -> Tensor:
    h = dc.relu(dc.linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return dc.linear(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _norm(params: SpoterParams, prefix: str, x: Tensor, eps: float) -> Tensor:
    return dc.layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"], eps)


def forward(
    params: SpoterParams,
    cfg: SpoterConfig,
    x,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Logits of shape (num_classes,) for one (T, input_dim) sequence."""
    x = dc.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise dc.ShapeError(f"expected input of shape (T, {cfg.input_dim}), got {x.shape}")
    T = x.shape[0]
    if not 1 <= T <= cfg.max_frames:
        raise SequenceLengthError(f"sequence has {T} frames; supported range is 1..{cfg.max_frames}")
    drop_rate = cfg.dropout_rate if train_mode else 0.0
    if drop_rate > 0 and rng is None:
        raise ValueError("dropout in train mode needs an rng")
    drop = (lambda t: dc.dropout(t, drop_rate, rng)) if drop_rate > 0 else (lambda t: t)
    eps = cfg.layer_norm_eps

    h = x + params["pos_encoding"][0:T]
    for i in range(cfg.encoder_layers):
        p = f"encoder.{i}"
        h = _norm(params, f"{p}.norm1", h + drop(attention(params, f"{p}.self_attn", h, h, cfg.heads)), eps)
        h = _norm(params, f"{p}.norm2", h + drop(_feed_forward(params, f"{p}.ff", h)), eps)

    q = params["class_query"]
    for i in range(cfg.decoder_layers):
        p = f"decoder.{i}"
        q = _norm(params, f"{p}.norm1", q + drop(attention(params, f"{p}.self_attn", q, q, cfg.heads)), eps)
        q = _norm(params, f"{p}.norm2", q + drop(attention(params, f"{p}.cross_attn", q, h, cfg.heads)), eps)
        q = _norm(params, f"{p}.norm3", q + drop(_feed_forward(params, f"{p}.ff", q)), eps)

    z = dc.relu(dc.linear(q, params["head.w1"], params["head.b1"]))
    return dc.linear(z, params["head.w2"], params["head.b2"]).reshape(cfg.num_classes)


def predict_logits(params: SpoterParams, cfg: SpoterConfig, x) -> np.ndarray:
    with dc.no_grad():
        return forward(params, cfg, x, train_mode=False).data


def predict_topk(logits, k: int) -> list[int]:
    """Ids of the k largest logits, descending, ties to the lower id."""
    logits = np.asarray(logits.data if isinstance(logits, Tensor) else logits)
    n = logits.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    order = np.lexsort((np.arange(n), -logits))
    return [int(i) for i in order[:k]]


def topk_matrix(logits: np.ndarray, k: int) -> np.ndarray:
    """Row-wise :func:`predict_topk` for a (N, C) matrix."""
    logits = np.asarray(logits)
    n, c = logits.shape
    if not 1 <= k <= c:
        raise ValueError(f"k must lie in [1, {c}], got {k}")
    # stable sort on negated logits keeps lower ids first among ties
    return np.argsort(-logits, axis=1, kind="stable")[:, :k]


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(
    params: SpoterParams,
    cfg: SpoterConfig,
    path: str | Path,
    extra: dict | None = None,
) -> None:
    """Write ``SPTR1`` + u64 LE metadata length + JSON metadata + float32 LE arrays."""
    params.check_shapes(cfg)
    entries, blobs, offset = [], [], 0
    for name, t in params.items():
        blob = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    meta = {"config": cfg.to_dict(), "arrays": entries}
    if extra:
        meta["extra"] = extra
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


@dataclass
class Checkpoint:
    params: SpoterParams
    config: SpoterConfig
    extra: dict


def read_checkpoint(path: str | Path, expected: SpoterConfig | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes; not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointError("truncated checkpoint header")
    (n,) = struct.unpack("<Q", raw[pos : pos + 8])
    pos += 8
    if len(raw) < pos + n:
        raise CheckpointError("truncated checkpoint metadata")
    try:
        meta = json.loads(raw[pos : pos + n].decode("utf-8"))
        cfg = SpoterConfig.from_dict(meta["config"])
        entries = meta["arrays"]
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"unreadable checkpoint metadata: {e}") from None
    data = raw[pos + n :]
    expected_shapes = dict(param_shapes(expected or cfg))
    if [e["name"] for e in entries] != list(expected_shapes):
        raise CheckpointError("checkpoint arrays do not match the expected configuration")
    arrays = {}
    for e in entries:
        shape = tuple(e["shape"])
        if shape != expected_shapes[e["name"]]:
            raise CheckpointError(f"{e['name']}: shape {shape} != expected {expected_shapes[e['name']]}")
        size = 4 * math.prod(shape)
        start = e["offset"]
        if start + size > len(data):
            raise CheckpointError(f"truncated data for {e['name']}")
        arr = np.frombuffer(data, dtype="<f4", count=size // 4, offset=start).astype(np.float64).reshape(shape)
        arrays[e["name"]] = Tensor(arr, requires_grad=True, name=e["name"])
    return Checkpoint(SpoterParams(arrays), cfg, meta.get("extra", {}))


def load_checkpoint(path: str | Path, expected: SpoterConfig | None = None) -> tuple[SpoterParams, SpoterConfig]:
    ck = read_checkpoint(path, expected)
    return ck.params, ck.config


class SpoterModel:
    """Config + params + the input preprocessing the params were trained with."""

    def __init__(self, config: SpoterConfig, params: SpoterParams, normalize_inputs: bool = True):
        params.check_shapes(config)
        self.config = config
        self.params = params
        self.normalize_inputs = normalize_inputs

    @classmethod
    def create(cls, config: SpoterConfig, seed: int = 0, normalize_inputs: bool = True) -> "SpoterModel":
        return cls(config, init_params(config, np.random.default_rng(seed)), normalize_inputs)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def forward(self, x, train_mode: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        return forward(self.params, self.config, x, train_mode, rng)

    def logits(self, x) -> np.ndarray:
        return predict_logits(self.params, self.config, x)

    def logits_batch(self, xs, threads: int = 1) -> np.ndarray:
        """Stack logits for many encoded sequences; rows follow input order."""
        xs = list(xs)
        if threads > 1 and len(xs) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(self.logits, xs))
        else:
            rows = [self.logits(x) for x in xs]
        return np.stack(rows) if rows else np.zeros((0, self.num_classes))

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        save_checkpoint(self.params, self.config, path, {"normalize_inputs": self.normalize_inputs, **(extra or {})})

    @classmethod
    def load(cls, path: str | Path) -> tuple["SpoterModel", dict]:
        ck = read_checkpoint(path)
        return cls(ck.config, ck.params, bool(ck.extra.get("normalize_inputs", True))), ck.extra
