"""ISTA and the extended extragradient (EEG) method for the Lasso.

Both solvers accept a single observation ``y`` of shape ``(m,)`` or a batch
of column-stacked observations of shape ``(m, B)``. Iterations are written
in the recurrent form used by the unrolled networks (``W1 @ y + W2 @ x`` for
ISTA, ``x - W @ (A @ x - y)`` for EEG) so that a network at its classical
initialization reproduces these solvers bit for bit.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .prox import soft_threshold


@dataclass(frozen=True)
class SolverConfig:
    lam: float | None = None
    max_iters: int = 16
    step_scale: float = 1.0
    record_trajectory: bool = True

    def __post_init__(self):
        if self.lam is not None and self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not 0.0 < self.step_scale < 2.0:
            raise ValueError(f"step_scale must lie in (0, 2), got {self.step_scale}")


@dataclass
class Trajectory:
    iterates: list = field(default_factory=list)
    half_iterates: list | None = None
    objective_values: list = field(default_factory=list)
    lam: float = 0.0

    @property
    def final(self):
        return self.iterates[-1]


def default_lambda(A, y):
    """``0.1 * ||A.T y||_inf``, averaged over columns for a batch."""
    g = np.abs(A.T @ y)
    return float(0.1 * np.mean(g.max(axis=0)))


def lasso_objective(A, y, x, lam):
    """``0.5*||y - A x||^2 + lam*||x||_1`` (summed over batch columns)."""
    r = y - A @ x
    return float(0.5 * np.sum(r * r) + lam * np.sum(np.abs(x)))


def gradient_step_operators(dictionary, lam, step_scale=1.0):
    """Step matrix ``(step/L) A^T`` and threshold ``lam*step/L``.

    Every solver and every network initialization derives its matrices
    from here so that the floating-point values agree exactly.
    """
    step = step_scale / dictionary.L
    W = np.ascontiguousarray(step * dictionary.A.T)
    return W, lam * step


def ista_operators(dictionary, lam, step_scale=1.0):
    """``(W1, W2, theta)`` with ``W1 = (step/L) A^T`` and ``W2 = I - W1 A``."""
    W1, theta = gradient_step_operators(dictionary, lam, step_scale)
    W2 = np.eye(dictionary.n) - W1 @ dictionary.A
    return W1, W2, theta


def _check(dictionary, y, x0):
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != dictionary.m:
        raise ValueError(f"y has {y.shape[0]} rows, dictionary has m={dictionary.m}")
    if x0 is None:
        x0 = np.zeros((dictionary.n,) + y.shape[1:])
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (dictionary.n,) + y.shape[1:]:
        raise ValueError(f"x0 shape {x0.shape} does not match n={dictionary.n} and y {y.shape}")
    return y, x0


def ista_solve(dictionary, y, cfg=SolverConfig(), x0=None, form="recurrent"):
    """Proximal gradient descent on the Lasso.

    ``form="recurrent"`` evaluates ``ST(W1 @ y + W2 @ x)`` (the LISTA layer
    at its initialization); ``form="gradient"`` evaluates
    ``ST(x - W @ (A @ x - y))`` (the EEG half step). The two agree up to
    rounding.
    """
    y, x = _check(dictionary, y, x0)
    A = dictionary.A
    lam = default_lambda(A, y) if cfg.lam is None else cfg.lam
    if form == "recurrent":
        W1, W2, theta = ista_operators(dictionary, lam, cfg.step_scale)
        b = W1 @ y

        def step(x):
            return soft_threshold(b + W2 @ x, theta)
    elif form == "gradient":
        W, theta = gradient_step_operators(dictionary, lam, cfg.step_scale)

        def step(x):
            return soft_threshold(x - W @ (A @ x - y), theta)
    else:
        raise ValueError(f"unknown ISTA form {form!r}")
    traj = Trajectory(lam=lam)
    if cfg.record_trajectory:
        traj.iterates.append(x)
        traj.objective_values.append(lasso_objective(A, y, x, lam))
    for _ in range(cfg.max_iters):
        x = step(x)
        if cfg.record_trajectory:
            traj.iterates.append(x)
            traj.objective_values.append(lasso_objective(A, y, x, lam))
    if not cfg.record_trajectory:
        traj.iterates = [x]
        traj.objective_values = [lasso_objective(A, y, x, lam)]
    return traj


def eeg_solve(dictionary, y, cfg=SolverConfig(), x0=None, grad_at_base=False):
    """Extragradient iteration.

    Each step takes a trial proximal-gradient step to the half point, then
    restarts from the *base* point using the gradient at the half point.
    ``grad_at_base=True`` reuses the base-point gradient for the second
    stage, which collapses the method to ISTA (diagnostic only).
    """
    y, x = _check(dictionary, y, x0)
    A = dictionary.A
    lam = default_lambda(A, y) if cfg.lam is None else cfg.lam
    W, theta = gradient_step_operators(dictionary, lam, cfg.step_scale)
    traj = Trajectory(half_iterates=[], lam=lam)
    if cfg.record_trajectory:
        traj.iterates.append(x)
        traj.objective_values.append(lasso_objective(A, y, x, lam))
    for _ in range(cfg.max_iters):
        g = W @ (A @ x - y)
        half = soft_threshold(x - g, theta)
        if not grad_at_base:
            g = W @ (A @ half - y)
        x = soft_threshold(x - g, theta)
        if cfg.record_trajectory:
            traj.half_iterates.append(half)
            traj.iterates.append(x)
            traj.objective_values.append(lasso_objective(A, y, x, lam))
    if not cfg.record_trajectory:
        traj.iterates = [x]
        traj.half_iterates = [half]
        traj.objective_values = [lasso_objective(A, y, x, lam)]
    return traj


def trajectory_to_csv(path, traj, reference=None):
    """Write ``iteration, objective[, l2_error]`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective"] + (["l2_error"] if reference is not None else []))
        for t, (x, obj) in enumerate(zip(traj.iterates, traj.objective_values)):
            row = [t, repr(obj)]
            if reference is not None:
                row.append(repr(float(np.linalg.norm(x - reference))))
            w.writerow(row)
