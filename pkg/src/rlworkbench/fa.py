"""Differentiable function approximators built on :mod:`rlworkbench.autodiff`.

An :class:`Approximator` couples an architecture descriptor with a flat
:class:`ParamVector`. ``apply(p, x)`` runs the model on a differentiable
parameter node and ``forward(x)`` runs it on plain arrays. Heads:

``scalar``    one output per input row (state values)
``vector``    one output per action (Q heads, logits are also returned raw)
``softmax``   action distribution; ``apply`` returns the logits
``gaussian``  mean and clamped log-std, concatenated on the last axis
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .rng import make_stream

__all__ = [
    "ParamVector",
    "Approximator",
    "TargetCopy",
    "grad",
    "joint_grad",
    "sgd_step",
    "ema_update",
    "clip_grad_norm",
    "AdaptiveOptimizer",
    "save_checkpoint",
    "load_checkpoint",
    "LOG_STD_MIN",
    "LOG_STD_MAX",
    "CHECKPOINT_MAGIC",
]

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
CHECKPOINT_MAGIC = b"RLWBCKPT"


@dataclass
class ParamVector:
    """Flat parameter array with named slices."""

    data: np.ndarray
    layout: list = field(default_factory=list)  # (name, shape, offset)

    @classmethod
    def from_shapes(cls, shapes: list) -> "ParamVector":
        layout, off = [], 0
        for name, shape in shapes:
            layout.append((name, tuple(shape), off))
            off += int(np.prod(shape))
        return cls(np.zeros(off), layout)

    @property
    def size(self) -> int:
        return self.data.size

    def view(self, name: str) -> np.ndarray:
        for n, shape, off in self.layout:
            if n == name:
                return self.data[off: off + int(np.prod(shape))].reshape(shape)
        raise KeyError(name)

    def slices(self, p):
        """Map every named slice of a flat array or Var to its shaped piece."""
        out = {}
        for n, shape, off in self.layout:
            size = int(np.prod(shape))
            piece = p[off: off + size]
            out[n] = piece.reshape(shape)
        return out

    def copy(self) -> "ParamVector":
        return ParamVector(self.data.copy(), list(self.layout))


_ACT = {"relu": ad.relu, "tanh": ad.tanh}


class Approximator:
    """Linear or multilayer model over a flat parameter vector.

    Parameters
    ----------
    arch : dict
        ``{"kind": "linear"|"mlp", "in_dim", "out_dim", "hidden", "activation",
        "head", "bias"}``.
    params : ParamVector
    """

    def __init__(self, arch: dict, params: ParamVector):
        self.arch = dict(arch)
        self.params = params
        self._check()

    # construction ----------------------------------------------------------
    @classmethod
    def linear(cls, in_dim: int, out_dim: int = 1, head: str = "scalar", bias: bool = False,
               init: str = "zeros", seed: int = 0) -> "Approximator":
        """Linear-in-features model ``x @ W (+ b)``.

        ``init="zeros"`` (default) or ``"uniform"`` for +-1/sqrt(in_dim).
        """
        arch = {"kind": "linear", "in_dim": in_dim, "out_dim": out_dim, "hidden": [],
                "activation": "none", "head": head, "bias": bias}
        shapes = [("W0", (in_dim, _raw_out(head, out_dim)))]
        if bias:
            shapes.append(("b0", (_raw_out(head, out_dim),)))
        pv = ParamVector.from_shapes(shapes)
        if init == "uniform":
            _init_uniform(pv, arch, seed)
        return cls(arch, pv)

    @classmethod
    def mlp(cls, in_dim: int, hidden=(16, 16), out_dim: int = 1, activation: str = "relu",
            head: str = "scalar", seed: int = 0) -> "Approximator":
        """Fully connected network with biases, initialized +-1/sqrt(fan_in)."""
        arch = {"kind": "mlp", "in_dim": in_dim, "out_dim": out_dim, "hidden": list(hidden),
                "activation": activation, "head": head, "bias": True}
        dims = [in_dim] + list(hidden) + [_raw_out(head, out_dim)]
        shapes = []
        for i in range(len(dims) - 1):
            shapes += [(f"W{i}", (dims[i], dims[i + 1])), (f"b{i}", (dims[i + 1],))]
        pv = ParamVector.from_shapes(shapes)
        _init_uniform(pv, arch, seed)
        return cls(arch, pv)

    def _check(self):
        a = self.arch
        if a["head"] not in ("scalar", "vector", "softmax", "gaussian"):
            raise ValueError(f"unknown head {a['head']!r}")
        if a["head"] == "scalar" and a["out_dim"] != 1:
            raise ValueError("scalar head needs out_dim 1")
        if a["kind"] == "mlp" and a["activation"] not in _ACT:
            raise ValueError(f"unknown activation {a['activation']!r}")

    def clone(self) -> "Approximator":
        return Approximator(self.arch, self.params.copy())

    # evaluation --------------------------------------------------------------
    def apply(self, p, x):
        """Raw head output of the model with parameters ``p`` (array or Var)."""
        a = self.arch
        x_arr = x.value if isinstance(x, ad.Var) else np.asarray(x, dtype=float)
        if x_arr.shape[-1] != a["in_dim"]:
            raise ValueError(f"input dim {x_arr.shape[-1]} != {a['in_dim']}")
        pv = p if isinstance(p, ad.Var) else ad.Var(np.asarray(p, dtype=float))
        w = self.params.slices(pv)
        h = ad.as_var(x)
        n_layers = len(a["hidden"]) + 1
        for i in range(n_layers):
            h = h @ w[f"W{i}"]
            if a["bias"]:
                h = h + w[f"b{i}"]
            if i < n_layers - 1:
                h = _ACT[a["activation"]](h)
        if a["head"] == "scalar":
            h = h[..., 0]
        elif a["head"] == "gaussian":
            d = a["out_dim"]
            mean = h[..., :d]
            log_std = ad.clip(h[..., d:], LOG_STD_MIN, LOG_STD_MAX)
            h = ad.concat([mean, log_std], axis=-1)
        return h

    def forward(self, x, params=None) -> np.ndarray:
        """Deterministic output. Softmax heads return probabilities."""
        p = self.params.data if params is None else np.asarray(params)
        out = self.apply(p, x).value
        if self.arch["head"] == "softmax":
            z = out - out.max(axis=-1, keepdims=True)
            e = np.exp(z)
            out = e / e.sum(axis=-1, keepdims=True)
        return out

    __call__ = forward


def _raw_out(head: str, out_dim: int) -> int:
    return 2 * out_dim if head == "gaussian" else out_dim


def _init_uniform(pv: ParamVector, arch: dict, seed: int) -> None:
    for li, (name, shape, off) in enumerate(pv.layout):
        fan_in = shape[0] if name.startswith("W") else pv.view("W" + name[1:]).shape[0]
        lim = 1.0 / np.sqrt(fan_in)
        rng = make_stream(seed, li, "init")
        size = int(np.prod(shape))
        pv.data[off: off + size] = rng.uniform(-lim, lim, size)


def grad(approx: Approximator, loss_fn, params=None):
    """Reverse-mode gradient of a scalar loss with respect to the parameters.

    ``loss_fn`` receives a callable ``model(x)`` that evaluates the
    approximator on a differentiable copy of its parameters, and returns a
    scalar :class:`~rlworkbench.autodiff.Var`.

    Returns
    -------
    g : ndarray
        Flat gradient with the shape of ``approx.params.data``.
    loss : float
    """
    data = approx.params.data if params is None else params
    p = ad.Var(np.array(data, dtype=float), requires_grad=True)
    loss = loss_fn(lambda x: approx.apply(p, x))
    loss = ad.as_var(loss)
    if loss.value.size != 1:
        raise ValueError("loss must be a scalar")
    loss.backward()
    g = p.grad if p.grad is not None else np.zeros_like(p.value)
    return g.reshape(p.value.shape), float(loss.value)


def joint_grad(approxs: list, loss_fn):
    """Gradients of one scalar loss with respect to several approximators.

    ``loss_fn`` receives a list of model callables, one per approximator.
    Returns ``(list of flat gradients, loss)``.
    """
    ps = [ad.Var(np.array(a.params.data, dtype=float), requires_grad=True) for a in approxs]
    models = [(lambda x, a=a, p=p: a.apply(p, x)) for a, p in zip(approxs, ps)]
    loss = ad.as_var(loss_fn(models))
    if loss.value.size != 1:
        raise ValueError("loss must be a scalar")
    loss.backward()
    grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in ps]
    return grads, float(loss.value)


def clip_grad_norm(g: np.ndarray, max_norm: float = 10.0) -> np.ndarray:
    n = float(np.linalg.norm(g))
    if n > max_norm > 0:
        return g * (max_norm / n)
    return g


def sgd_step(params, g, eta: float):
    """Return ``params - eta * g``. A non-finite gradient skips the step.

    Returns ``(new_params, ok)``.
    """
    params = np.asarray(params, dtype=float)
    if not np.all(np.isfinite(g)):
        return params.copy(), False
    return params - eta * g, True


class AdaptiveOptimizer:
    """Per-coordinate RMS-scaled steps with optional momentum.

    ``beta1=0`` gives bias-corrected RMS scaling. ``beta1=0.9`` gives the
    usual Adam update.
    """

    def __init__(self, eta: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.eta, self.beta1, self.beta2, self.eps = eta, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, g):
        params = np.asarray(params, dtype=float)
        if not np.all(np.isfinite(g)):
            return params.copy(), False
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mh = self.m / (1 - self.beta1 ** self.t) if self.beta1 > 0 else self.m
        vh = self.v / (1 - self.beta2 ** self.t)
        return params - self.eta * mh / (np.sqrt(vh) + self.eps), True


@dataclass
class TargetCopy:
    """Slow shadow of a parameter vector. It never receives gradients."""

    params: np.ndarray
    rho: float = 0.995

    @classmethod
    def of(cls, approx: Approximator, rho: float = 0.995) -> "TargetCopy":
        return cls(approx.params.data.copy(), rho)


def ema_update(target: TargetCopy, params, rho: float | None = None) -> TargetCopy:
    """w_bar <- rho w_bar + (1 - rho) w."""
    rho = target.rho if rho is None else rho
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    params = np.asarray(params, dtype=float)
    if params.shape != target.params.shape:
        raise ValueError("shape mismatch")
    if rho == 0.0:
        new = params.copy()
    elif rho == 1.0:
        new = target.params.copy()
    else:
        new = rho * target.params + (1.0 - rho) * params
    return TargetCopy(new, target.rho)


# checkpoints -------------------------------------------------------------------
# layout: magic (8 bytes) | u32 version | u32 descriptor length | descriptor
# (UTF-8 JSON) | u64 parameter count | float64 little-endian parameters


def save_checkpoint(approx: Approximator) -> bytes:
    desc = json.dumps({"arch": approx.arch, "layout": [[n, list(s), o] for n, s, o in
                                                        approx.params.layout]},
                      sort_keys=True).encode("utf-8")
    head = CHECKPOINT_MAGIC + struct.pack("<II", 1, len(desc)) + desc
    body = struct.pack("<Q", approx.params.size) + approx.params.data.astype("<f8").tobytes()
    return head + body


def load_checkpoint(blob: bytes) -> Approximator:
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint")
    version, n = struct.unpack("<II", blob[8:16])
    if version != 1:
        raise ValueError(f"unsupported checkpoint version {version}")
    desc = json.loads(blob[16:16 + n].decode("utf-8"))
    off = 16 + n
    (count,) = struct.unpack("<Q", blob[off: off + 8])
    data = np.frombuffer(blob[off + 8: off + 8 + 8 * count], dtype="<f8").astype(float)
    if data.size != count:
        raise ValueError("truncated checkpoint")
    layout = [(name, tuple(shape), o) for name, shape, o in desc["layout"]]
    return Approximator(desc["arch"], ParamVector(data, layout))
