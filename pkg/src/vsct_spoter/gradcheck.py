"""Central finite-difference gradient checks for diffcore ops and the model."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

# Arrays whose analytic and numeric gradients both have a norm below this are
# treated as exactly zero (e.g. key-projection biases, which softmax ignores).
ZERO_FLOOR = 1e-8

OP_TOL = 1e-6
MODEL_TOL = 1e-4


def numeric_gradient(f: Callable[[], float], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """d f / d t by central differences, perturbing ``t.data`` in place."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    with dc.no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), or 0 when both are below ``ZERO_FLOOR``."""
    na, nn = np.linalg.norm(analytic), np.linalg.norm(numeric)
    scale = max(na, nn)
    if scale < ZERO_FLOOR:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    h: float = 1e-5,
) -> list[float]:
    """Relative error of the analytic gradient of ``loss_fn()`` for each tensor."""
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    with dc.Tape():
        loss = loss_fn()
        dc.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    scalar = lambda: float(loss_fn().data)  # noqa: E731
    return [relative_error(a, numeric_gradient(scalar, t, h)) for a, t in zip(analytic, tensors)]


def _projection(rng, shape, scale=1.0):
    """Random weights for a linear functional so losses are not symmetric."""
    return rng.normal(0.0, scale, shape)


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 2.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def op_suite(seed: int = 0) -> dict[str, Callable[[], float]]:
    """Name -> zero-argument check returning the max relative error."""
    rng = np.random.default_rng(seed)

    def weighted(out: Tensor, w: np.ndarray) -> Tensor:
        return (out * Tensor(w)).sum()

    def matmul():
        a, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(4, 2)))
        w = _projection(rng, (3, 2))
        errs = check_gradients(lambda: weighted(dc.matmul(a, b), w), [a, b])
        a3, b3 = Tensor(rng.normal(size=(2, 3, 4))), Tensor(rng.normal(size=(2, 4, 5)))
        w3 = _projection(rng, (2, 3, 5))
        return max(errs + check_gradients(lambda: weighted(dc.matmul(a3, b3), w3), [a3, b3]))

    def softmax():
        x = Tensor(rng.normal(size=(5,)))
        w = _projection(rng, (5,))
        x2 = Tensor(rng.normal(size=(3, 4)))
        w2 = _projection(rng, (3, 4))
        return max(
            check_gradients(lambda: weighted(dc.softmax(x), w), [x])
            + check_gradients(lambda: weighted(dc.softmax(x2, axis=0), w2), [x2])
        )

    def log_softmax():
        x = Tensor(rng.normal(size=(3, 5)))
        w = _projection(rng, (3, 5))
        return max(check_gradients(lambda: weighted(dc.log_softmax(x), w), [x]))

    def cross_entropy():
        x = Tensor(rng.normal(size=(6,)))
        xb = Tensor(rng.normal(size=(4, 6)))
        tb = rng.integers(0, 6, 4)
        return max(
            check_gradients(lambda: dc.cross_entropy(x, 2), [x])
            + check_gradients(lambda: dc.cross_entropy(xb, tb), [xb])
        )

    def layer_norm():
        x = Tensor(rng.normal(size=(4, 6)))
        g, b = Tensor(rng.normal(size=(6,))), Tensor(rng.normal(size=(6,)))
        w = _projection(rng, (4, 6))
        return max(check_gradients(lambda: weighted(dc.layer_norm(x, g, b), w), [x, g, b]))

    def linear():
        x, W, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(4, 5))), Tensor(rng.normal(size=(5,)))
        w = _projection(rng, (3, 5))
        return max(check_gradients(lambda: weighted(dc.linear(x, W, b), w), [x, W, b]))

    def relu():
        x = Tensor(_away_from_zero(rng, (4, 5)))
        w = _projection(rng, (4, 5))
        return max(check_gradients(lambda: weighted(dc.relu(x), w), [x]))

    def add():
        a, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(4,)))
        w = _projection(rng, (3, 4))
        return max(check_gradients(lambda: weighted(dc.add(a, b), w) + weighted(dc.mul(a, b), w), [a, b]))

    def scale():
        x = Tensor(rng.normal(size=(3, 3)))
        w = _projection(rng, (3, 3))
        return max(check_gradients(lambda: weighted(dc.scale(x, -2.5), w), [x]))

    def concat():
        a, b = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(4, 3)))
        w = _projection(rng, (6, 3))
        return max(check_gradients(lambda: weighted(dc.concat([a, b], axis=0), w), [a, b]))

    def transpose():
        x = Tensor(rng.normal(size=(2, 3, 4)))
        w = _projection(rng, (4, 2, 3))
        y = Tensor(rng.normal(size=(3, 5)))
        w2 = _projection(rng, (5, 3))
        return max(
            check_gradients(lambda: weighted(dc.transpose(x, (2, 0, 1)), w), [x])
            + check_gradients(lambda: weighted(dc.transpose(y), w2), [y])
        )

    def reshape():
        x = Tensor(rng.normal(size=(2, 6)))
        w = _projection(rng, (3, 4))
        return max(check_gradients(lambda: weighted(dc.reshape(x, (3, 4)), w), [x]))

    def index():
        x = Tensor(rng.normal(size=(6, 3)))
        w = _projection(rng, (2, 3))
        return max(check_gradients(lambda: weighted(x[1:3], w), [x]))

    def spoter():
        return max(spoter_gradient_errors(seed=seed).values())

    return {
        "matmul": matmul,
        "softmax": softmax,
        "log_softmax": log_softmax,
        "cross_entropy": cross_entropy,
        "layer_norm": layer_norm,
        "linear": linear,
        "relu": relu,
        "add": add,
        "scale": scale,
        "concat": concat,
        "transpose": transpose,
        "reshape": reshape,
        "index": index,
        "spoter": spoter,
    }


def default_tolerance(op: str) -> float:
    return MODEL_TOL if op == "spoter" else OP_TOL


def spoter_gradient_errors(
    seed: int = 0,
    init_mode: str = "standard",
    input_dim: int = 8,
    heads: int = 2,
    num_classes: int = 3,
    frames: int = 4,
    h: float = 1e-5,
) -> dict[str, float]:
    """Per-parameter relative error of d(cross-entropy)/d(param) on a toy model."""
    from .model import SpoterConfig, forward, init_params

    cfg = SpoterConfig(
        num_classes=num_classes,
        input_dim=input_dim,
        encoder_layers=1,
        decoder_layers=1,
        heads=heads,
        ff_dim=16,
        max_frames=frames,
        init_mode=init_mode,
    )
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    if init_mode == "standard":
        # move biases/gains off their symmetric starting values
        for name, t in params.items():
            if t.ndim == 1:
                t.data += rng.normal(0.0, 0.3, t.shape)
    x = Tensor(rng.uniform(0.0, 1.0, (frames, input_dim)))
    target = int(rng.integers(num_classes))
    names = list(params)
    errs = check_gradients(lambda: dc.cross_entropy(forward(params, cfg, x), target), params.tensors(), h)
    return dict(zip(names, errs))
