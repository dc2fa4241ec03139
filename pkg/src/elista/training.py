"""Supervised, layer-by-layer training of the unrolled networks.

Gradients are computed by hand-written reverse-mode differentiation through
the recorded forward trace; the soft-threshold derivative is taken as 0 at
its kinks.

Schedule (per stage ``t``, which enables layers ``0..t``): first the new
layer's parameters are trained at ``lr_init``, then all enabled parameters
are fine-tuned once per factor in ``lr_decay_factors``. Each phase ends when
the best validation loss stops improving by ``improve_tol`` (relative) over
``patience`` validation checks, or after ``samples_per_stage // batch_size``
steps. The best-validation parameters of each phase are kept.
"""

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .classical import default_lambda
from .problem import Dictionary, sample_batch, sample_set
from .unrolled import (
    PARAM_TYPES,
    forward,
    init_params,
    load_params,
    save_params,
)

log = logging.getLogger(__name__)

LOG_COLUMNS = ("stage", "step", "train_loss", "val_nmse_db", "lr")
KINK_MARGIN = 1e-3


class TrainingDivergedError(RuntimeError):
    pass


class StaleTraceError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    samples_per_stage: int = 64 * 4000
    lr_init: float = 5e-4
    lr_decay_factors: tuple = (1.0, 0.2, 0.02)
    validation_size: int = 1000
    val_every: int = 10
    patience: int = 50
    improve_tol: float = 1e-4
    seed: int = 0
    lam: float | None = None

    def __post_init__(self):
        for name in ("batch_size", "samples_per_stage", "validation_size", "val_every", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr_init < 0:
            raise ValueError(f"lr_init must be nonnegative, got {self.lr_init}")
        f = list(self.lr_decay_factors)
        if not f or any(not 0 < v <= 1 for v in f) or f != sorted(f, reverse=True):
            raise ValueError(f"lr_decay_factors must be nonincreasing values in (0, 1], got {f}")


def loss(x_hat, x_star):
    """``0.5*||x_hat - x_star||^2``; for column batches, the mean over columns."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_hat.shape != x_star.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {x_star.shape}")
    d = x_hat - x_star
    batch = 1 if d.ndim == 1 else d.shape[1]
    return float(0.5 * np.sum(d * d) / batch)


def _outer(a, b):
    return np.outer(a, b) if a.ndim == 1 else a @ b.T


def _check_trace(params, trace):
    if trace is None:
        raise StaleTraceError("backward needs a trace recorded with record=True")
    T = params.depth
    n = params.shape[1]
    if len(trace.x) != T + 1 or len(trace.pre1) != T or trace.x[0].shape[0] != n:
        raise StaleTraceError(
            f"trace has {len(trace.x) - 1} layers of size {trace.x[0].shape[0]}, "
            f"params have {T} layers of size {n}"
        )
    if params.kind != "lista" and len(trace.pre2) != T:
        raise StaleTraceError("trace was recorded by a LISTA forward pass, params are ELISTA")


def backward(params, A, y, x_star, trace):
    """Gradient of :func:`loss` w.r.t. every tensor in ``params.tensors()``."""
    _check_trace(params, trace)
    y = np.asarray(y, dtype=np.float64)
    batch = 1 if y.ndim == 1 else y.shape[1]
    g = (trace.x[-1] - x_star) / batch
    grads = {k: np.zeros_like(v) for k, v in params.tensors().items()}
    T = params.depth

    if params.kind == "lista":
        for t in reversed(range(T)):
            u = trace.pre1[t]
            du = g * (np.abs(u) > params.theta[t])
            grads["theta"][t] = -np.sum(du * np.sign(u))
            grads["W1"][t] = _outer(du, y)
            grads["W2"][t] = _outer(du, trace.x[t])
            g = params.W2[t].T @ du
        return grads

    tied = params.kind == "elista_tied"
    A = np.asarray(A, dtype=np.float64)
    th1 = params.theta1
    th2 = params.theta2
    for t in reversed(range(T)):
        if tied:
            W1 = params.alpha1[t] * params.W
            W2 = params.alpha2[t] * params.W
        else:
            W1, W2 = params.W1[t], params.W2[t]
        u2 = trace.pre2[t]
        du2 = g * (np.abs(u2) > th2[t])
        grads["theta2"][t] = -np.sum(du2 * np.sign(u2))
        dW2 = -_outer(du2, trace.half_resid[t])
        dhalf = A.T @ -(W2.T @ du2)

        u1 = trace.pre1[t]
        du1 = dhalf * (np.abs(u1) > th1[t])
        grads["theta1"][t] = -np.sum(du1 * np.sign(u1))
        dW1 = -_outer(du1, trace.resid[t])
        g = du2 + du1 - A.T @ (W1.T @ du1)

        if tied:
            grads["alpha1"][t] = np.sum(dW1 * params.W)
            grads["alpha2"][t] = np.sum(dW2 * params.W)
            grads["W"] += params.alpha1[t] * dW1 + params.alpha2[t] * dW2
        else:
            grads["W1"][t] = dW1
            grads["W2"][t] = dW2
    return grads


def kink_fraction(params, trace, margin=KINK_MARGIN):
    """Share of pre-activations within ``margin`` of a threshold."""
    thetas = [params.theta] if params.kind == "lista" else [params.theta1, params.theta2]
    pres = [trace.pre1] if params.kind == "lista" else [trace.pre1, trace.pre2]
    near = total = 0
    for th, pre in zip(thetas, pres):
        for t, u in enumerate(pre):
            near += int(np.sum(np.abs(np.abs(u) - th[t]) < margin))
            total += u.size
    return near / max(total, 1)


def min_kink_distance(params, trace):
    thetas = [params.theta] if params.kind == "lista" else [params.theta1, params.theta2]
    pres = [trace.pre1] if params.kind == "lista" else [trace.pre1, trace.pre2]
    return min(
        float(np.min(np.abs(np.abs(u) - th[t]))) for th, pre in zip(thetas, pres)
        for t, u in enumerate(pre)
    )


def clamp_thresholds(params):
    for name in ("theta", "theta1", "theta2"):
        if hasattr(params, name):
            np.maximum(getattr(params, name), 0.0, out=getattr(params, name))


class Adam:
    """Per-parameter first/second-moment optimizer over a masked subset."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.k = 0

    def step(self, params, grads, masks):
        """Update ``params`` in place; ``masks[name]`` selects entries to train."""
        self.k += 1
        c1 = 1 - self.beta1 ** self.k
        c2 = 1 - self.beta2 ** self.k
        for name, mask in masks.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * np.square(g)
            upd = np.sqrt(v)
            upd *= 1 / np.sqrt(c2)
            upd += self.eps
            np.divide(m, upd, out=upd)
            upd *= self.lr / c1
            p = getattr(params, name)
            if mask is None:
                p -= upd
            else:
                p[mask] -= upd[mask]
        clamp_thresholds(params)


def _truncate(params, depth):
    """View of the first ``depth`` layers sharing memory with ``params``."""
    cls = type(params)
    t = {k: (v[:depth] if k in cls.per_layer_names else v) for k, v in params.tensors().items()}
    return cls(**t)


def _masks(params, depth, new_layer_only):
    cls = type(params)
    if new_layer_only:
        return {k: depth - 1 for k in cls.per_layer_names}
    return {k: (slice(0, depth) if k in cls.per_layer_names else None)
            for k in params.tensors()}


def _nmse_db(X_hat, X):
    return float(10 * np.log10(max(np.sum((X_hat - X) ** 2) / np.sum(X ** 2), 1e-32)))


@dataclass
class TrainResult:
    params: object
    log: list = field(default_factory=list)
    stage_summary: list = field(default_factory=list)
    lam: float = 0.0

    def write_log(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for row in self.log:
                w.writerow([row[c] for c in LOG_COLUMNS])


def _validate(params, A, Yv, Xv, stage):
    X_hat, _ = forward(params, A, Yv)
    val = loss(X_hat, Xv)
    if not np.isfinite(val):
        raise TrainingDivergedError(
            f"validation loss became non-finite in stage {stage}; "
            "lower lr_init or check the dictionary scaling"
        )
    return val, _nmse_db(X_hat, Xv)


def _run_phase(params, A, sampler, rng, Yv, Xv, cfg, stage, depth, lr, new_only, result):
    sub = _truncate(params, depth)
    opt = Adam(lr)
    masks = _masks(params, depth, new_only)
    best_val, best_db = _validate(sub, A, Yv, Xv, stage)
    best = params.copy()
    history = [best_val]
    max_steps = max(cfg.samples_per_stage // cfg.batch_size, 1)
    for step in range(1, max_steps + 1):
        X, Y = sampler(rng, cfg.batch_size)
        X_hat, trace = forward(sub, A, Y, record=True)
        train_loss = loss(X_hat, X)
        grads = backward(sub, A, Y, X, trace)
        full = {k: np.zeros_like(v) for k, v in params.tensors().items()}
        for k, v in grads.items():
            if k in type(params).per_layer_names:
                full[k][:depth] = v
            else:
                full[k] = v
        opt.step(params, full, masks)
        if step % cfg.val_every:
            continue
        val, db = _validate(sub, A, Yv, Xv, stage)
        if val < best_val:
            best_val, best_db = val, db
            best = params.copy()
        history.append(best_val)
        result.log.append({
            "stage": stage, "step": step, "train_loss": train_loss,
            "val_nmse_db": db, "lr": lr, "kink_fraction": kink_fraction(sub, trace),
        })
        if len(history) > cfg.patience:
            ref = history[-1 - cfg.patience]
            if ref - best_val <= cfg.improve_tol * abs(ref):
                break
    for k, v in best.tensors().items():
        getattr(params, k)[...] = v
    return best_val, best_db


def train_network(kind, A, sampler, cfg, T, lam=None, L=None, init=None,
                  checkpoint_path=None, resume=False, validation=None):
    """Stage-wise training against an arbitrary sample source.

    ``sampler(rng, batch) -> (X, Y)`` draws fresh column batches.
    ``init`` overrides the classical initialization (which needs ``L``).
    """
    ss = np.random.SeedSequence(cfg.seed)
    val_ss, train_ss = ss.spawn(2)
    if validation is None:
        Xv, Yv = sampler(np.random.default_rng(val_ss), cfg.validation_size)
    else:
        Xv, Yv = validation
    rng = np.random.default_rng(train_ss)

    if lam is None:
        lam = default_lambda(A, Yv) if cfg.lam is None else cfg.lam
    if init is None:
        d = Dictionary(A, float(np.linalg.norm(A, 2) ** 2) if L is None else L, 1.0)
        init = init_params(kind, d, T, lam)
    params = init.copy()
    result = TrainResult(params, lam=lam)
    start = 0
    if resume and checkpoint_path is not None:
        start = _load_progress(checkpoint_path, params, rng, result) + 1

    for stage in range(start, T):
        depth = stage + 1
        phases = [(cfg.lr_init, True)] + [(cfg.lr_init * f, False) for f in cfg.lr_decay_factors]
        for lr, new_only in phases:
            val, db = _run_phase(params, A, sampler, rng, Yv, Xv, cfg, stage, depth,
                                 lr, new_only, result)
        result.stage_summary.append({"stage": stage, "val_loss": val, "val_nmse_db": db})
        log.info("stage %d/%d: val NMSE %.2f dB", depth, T, db)
        if checkpoint_path is not None:
            _save_progress(checkpoint_path, params, rng, result, stage)
    result.params = params
    return result


def train_stagewise(kind, dictionary, cls, snr_db, cfg, T, **kwargs):
    """Train a ``kind`` network of depth ``T`` on online samples from ``cls``."""
    if kind not in PARAM_TYPES:
        raise ValueError(f"unknown network kind {kind!r}")

    def sampler(rng, batch):
        X, Y, _ = sample_batch(dictionary, cls, batch, snr_db, rng)
        return X, Y

    validation = sample_set(dictionary, cls, cfg.validation_size, snr_db, cfg.seed + 1_000_003)[:2]
    return train_network(kind, dictionary.A, sampler, cfg, T, L=dictionary.L,
                         validation=validation, **kwargs)


def _save_progress(path, params, rng, result, stage):
    save_params(
        path, params,
        stage=stage,
        lam=result.lam,
        rng_state=json.dumps(rng.bit_generator.state),
        log=json.dumps(result.log),
        stage_summary=json.dumps(result.stage_summary),
    )


def _load_progress(path, params, rng, result):
    saved, extra = load_params(path)
    if saved.kind != params.kind:
        raise ValueError(f"{path} holds a {saved.kind} checkpoint, expected {params.kind}")
    for k, v in saved.tensors().items():
        getattr(params, k)[...] = v
    rng.bit_generator.state = json.loads(str(extra["rng_state"]))
    result.log[:] = json.loads(str(extra["log"]))
    result.stage_summary[:] = json.loads(str(extra["stage_summary"]))
    result.lam = float(extra["lam"])
    return int(extra["stage"])
