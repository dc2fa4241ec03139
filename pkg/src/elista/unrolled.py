"""Unrolled networks: LISTA, untied ELISTA and tied ELISTA.

All networks start from ``x^0 = 0`` and accept ``y`` as a vector ``(m,)`` or
a column-stacked batch ``(m, B)``.

LISTA layer::

    x^{t+1} = ST(W1[t] @ y + W2[t] @ x^t, theta[t])

ELISTA layer (untied; the tied form uses ``W1[t] = alpha1[t] * W`` and
``W2[t] = alpha2[t] * W`` with one shared ``W``)::

    x^{t+1/2} = ST(x^t - W1[t] @ (A @ x^t - y),       theta1[t])
    x^{t+1}   = ST(x^t - W2[t] @ (A @ x^{t+1/2} - y), theta2[t])

The base point ``x^t`` reaches both stages through an identity path, which
is the residual block structure of the network.
"""

import os
from dataclasses import dataclass, field, fields

import numpy as np

from .classical import gradient_step_operators, ista_operators
from .prox import soft_threshold

CHECKPOINT_VERSION = 1
KINDS = ("lista", "elista_untied", "elista_tied")


class _Params:
    kind = None

    def tensors(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_tensors(cls, tensors):
        return cls(**{k: np.array(v, dtype=np.float64) for k, v in tensors.items()})

    def copy(self):
        return self.from_tensors(self.tensors())

    @property
    def depth(self):
        return len(self.theta1) if hasattr(self, "theta1") else len(self.theta)

    def truncated(self, depth):
        """The first ``depth`` layers (shared tensors are kept whole)."""
        per_layer = self.per_layer_names
        return self.from_tensors(
            {k: (v[:depth] if k in per_layer else v) for k, v in self.tensors().items()}
        )


@dataclass
class ListaParams(_Params):
    W1: np.ndarray  # (T, n, m)
    W2: np.ndarray  # (T, n, n)
    theta: np.ndarray  # (T,)
    kind = "lista"
    per_layer_names = ("W1", "W2", "theta")

    def __post_init__(self):
        T, n, m = self.W1.shape
        if T < 1:
            raise ValueError("depth T must be >= 1")
        if self.W2.shape != (T, n, n) or self.theta.shape != (T,):
            raise ValueError(
                f"inconsistent LISTA shapes W1={self.W1.shape} W2={self.W2.shape} "
                f"theta={self.theta.shape}"
            )
        if np.any(self.theta < 0):
            raise ValueError("thresholds must be nonnegative")

    @property
    def shape(self):
        return self.W1.shape[2], self.W1.shape[1]


@dataclass
class ElistaUntiedParams(_Params):
    W1: np.ndarray  # (T, n, m)
    W2: np.ndarray  # (T, n, m)
    theta1: np.ndarray  # (T,)
    theta2: np.ndarray  # (T,)
    kind = "elista_untied"
    per_layer_names = ("W1", "W2", "theta1", "theta2")

    def __post_init__(self):
        T = self.W1.shape[0]
        if T < 1:
            raise ValueError("depth T must be >= 1")
        if self.W2.shape != self.W1.shape or self.theta1.shape != (T,) or self.theta2.shape != (T,):
            raise ValueError("inconsistent untied ELISTA shapes")
        if np.any(self.theta1 < 0) or np.any(self.theta2 < 0):
            raise ValueError("thresholds must be nonnegative")

    @property
    def shape(self):
        return self.W1.shape[2], self.W1.shape[1]


@dataclass
class ElistaTiedParams(_Params):
    W: np.ndarray  # (n, m)
    alpha1: np.ndarray  # (T,)
    alpha2: np.ndarray  # (T,)
    theta1: np.ndarray  # (T,)
    theta2: np.ndarray  # (T,)
    kind = "elista_tied"
    per_layer_names = ("alpha1", "alpha2", "theta1", "theta2")

    def __post_init__(self):
        T = self.alpha1.shape[0] if self.alpha1.ndim == 1 else -1
        if T < 1:
            raise ValueError("depth T must be >= 1")
        if self.W.ndim != 2 or any(
            getattr(self, k).shape != (T,) for k in ("alpha2", "theta1", "theta2")
        ):
            raise ValueError("inconsistent tied ELISTA shapes")
        if np.any(self.theta1 < 0) or np.any(self.theta2 < 0):
            raise ValueError("thresholds must be nonnegative")

    @property
    def shape(self):
        return self.W.shape[1], self.W.shape[0]

    def untie(self):
        """Equivalent untied parameters with ``W_k[t] = alpha_k[t] * W``."""
        return ElistaUntiedParams(
            np.stack([a * self.W for a in self.alpha1]),
            np.stack([a * self.W for a in self.alpha2]),
            self.theta1.copy(),
            self.theta2.copy(),
        )


PARAM_TYPES = {cls.kind: cls for cls in (ListaParams, ElistaUntiedParams, ElistaTiedParams)}


@dataclass
class LayerTrace:
    """Per-layer intermediates of one forward pass (needed for backprop)."""

    x: list = field(default_factory=list)  # x^0 .. x^T
    half: list = field(default_factory=list)  # x^{t+1/2}, ELISTA only
    pre1: list = field(default_factory=list)  # argument of the first ST
    pre2: list = field(default_factory=list)  # argument of the second ST, ELISTA only
    resid: list = field(default_factory=list)  # A x^t - y
    half_resid: list = field(default_factory=list)  # A x^{t+1/2} - y


# -- initialization ------------------------------------------------------------

def init_lista(dictionary, T, lam, step_scale=1.0):
    """``W1 = A^T/L``, ``W2 = I - A^T A/L``, ``theta = lam/L`` in every layer."""
    W1, W2, theta = ista_operators(dictionary, lam, step_scale)
    return ListaParams(
        np.stack([W1] * T), np.stack([W2] * T), np.full(T, theta)
    )


def init_elista_untied(dictionary, T, lam, step_scale=1.0):
    W, theta = gradient_step_operators(dictionary, lam, step_scale)
    return ElistaUntiedParams(
        np.stack([W] * T), np.stack([W] * T), np.full(T, theta), np.full(T, theta)
    )


def init_elista_tied(dictionary, T, lam, step_scale=1.0):
    """Shared ``W = A^T/L``, ``alpha = 1``, ``theta = lam/L``."""
    W, theta = gradient_step_operators(dictionary, lam, step_scale)
    return ElistaTiedParams(
        W.copy(), np.ones(T), np.ones(T), np.full(T, theta), np.full(T, theta)
    )


def init_params(kind, dictionary, T, lam, step_scale=1.0):
    try:
        init = {"lista": init_lista, "elista_untied": init_elista_untied,
                "elista_tied": init_elista_tied}[kind]
    except KeyError:
        raise ValueError(f"unknown network kind {kind!r}; expected one of {KINDS}") from None
    return init(dictionary, T, lam, step_scale)


# -- forward passes ------------------------------------------------------------

def _prepare_y(y, m):
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != m:
        raise ValueError(f"y has {y.shape[0]} rows, network expects m={m}")
    return y


def lista_forward(params, y, record=False):
    m, n = params.shape
    y = _prepare_y(y, m)
    x = np.zeros((n,) + y.shape[1:])
    trace = LayerTrace(x=[x]) if record else None
    for t in range(params.depth):
        u = params.W1[t] @ y + params.W2[t] @ x
        x = soft_threshold(u, params.theta[t])
        if record:
            trace.pre1.append(u)
            trace.x.append(x)
    return x, trace


def _elista_layers(W1s, W2s, theta1, theta2, A, y, record):
    n, m = A.shape[1], A.shape[0]
    x = np.zeros((n,) + y.shape[1:])
    trace = LayerTrace(x=[x]) if record else None
    for t in range(len(theta1)):
        r = A @ x - y
        u1 = x - W1s(t) @ r
        half = soft_threshold(u1, theta1[t])
        s = A @ half - y
        u2 = x - W2s(t) @ s
        x = soft_threshold(u2, theta2[t])
        if record:
            trace.resid.append(r)
            trace.pre1.append(u1)
            trace.half.append(half)
            trace.half_resid.append(s)
            trace.pre2.append(u2)
            trace.x.append(x)
    return x, trace


def _check_A(params, A):
    A = np.asarray(A, dtype=np.float64)
    m, n = params.shape
    if A.shape != (m, n):
        raise ValueError(f"A has shape {A.shape}, network expects ({m}, {n})")
    return A


def elista_forward_untied(params, A, y, record=False):
    A = _check_A(params, A)
    y = _prepare_y(y, A.shape[0])
    return _elista_layers(
        lambda t: params.W1[t], lambda t: params.W2[t],
        params.theta1, params.theta2, A, y, record,
    )


def elista_forward_tied(params, A, y, record=False):
    A = _check_A(params, A)
    y = _prepare_y(y, A.shape[0])
    W = params.W
    # scale the matrix (not the product) so this matches the untied form exactly
    return _elista_layers(
        lambda t: params.alpha1[t] * W, lambda t: params.alpha2[t] * W,
        params.theta1, params.theta2, A, y, record,
    )


def forward(params, A, y, record=False):
    if params.kind == "lista":
        return lista_forward(params, y, record)
    if params.kind == "elista_untied":
        return elista_forward_untied(params, A, y, record)
    return elista_forward_tied(params, A, y, record)


def param_count(kind, m, n, T):
    """Number of learnable scalars."""
    if min(m, n, T) < 1:
        raise ValueError(f"m, n, T must all be >= 1, got m={m}, n={n}, T={T}")
    if kind == "lista":
        return T * (n * m + n * n + 1)
    if kind == "elista_untied":
        return T * (2 * n * m + 2)
    if kind == "elista_tied":
        return n * m + 4 * T
    raise ValueError(f"unknown network kind {kind!r}; expected one of {KINDS}")


# -- serialization -------------------------------------------------------------

def save_params(path, params, **extra):
    np.savez(
        path,
        format_version=CHECKPOINT_VERSION,
        kind=params.kind,
        **{f"param/{k}": v for k, v in params.tensors().items()},
        **{f"extra/{k}": v for k, v in extra.items()},
    )


def load_params(path):
    """Returns ``(params, extra)``."""
    with np.load(path, allow_pickle=False) as f:
        version = int(f["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        cls = PARAM_TYPES[str(f["kind"])]
        tensors = {k[6:]: f[k] for k in f.files if k.startswith("param/")}
        extra = {k[6:]: np.array(f[k]) for k in f.files if k.startswith("extra/")}
        return cls.from_tensors(tensors), extra


def dump_params_csv(directory, params):
    """One CSV per tensor; 3-D tensors are written as ``(T*n) x m`` blocks."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for name, v in params.tensors().items():
        path = os.path.join(directory, f"{params.kind}_{name}.csv")
        arr = v.reshape(-1, v.shape[-1]) if v.ndim >= 2 else v[None, :]
        np.savetxt(path, arr, delimiter=",", fmt="%.17g", header=f"shape={'x'.join(map(str, v.shape))}")
        paths.append(path)
    return paths
