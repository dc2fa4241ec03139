"""Soft-thresholding and spectral/coherence helpers shared by every solver."""

import numpy as np

POWER_ITER_CAP = 10_000


class ConvergenceError(RuntimeError):
    pass


def soft_threshold(u, theta):
    """Componentwise ``sign(u) * max(|u| - theta, 0)``.

    Coordinates with ``|u| <= theta`` come out as exact zeros.
    """
    if (theta < 0) if np.isscalar(theta) else np.any(np.asarray(theta) < 0):
        raise ValueError(f"threshold must be nonnegative, got {theta}")
    u = np.asarray(u, dtype=np.float64)
    return np.sign(u) * np.maximum(np.abs(u) - theta, 0.0)


def soft_threshold_jvp(u, theta):
    """Partial derivatives of :func:`soft_threshold`.

    Returns ``(d_by_du, d_by_dtheta)``. At the kink ``|u| == theta`` both
    derivatives are taken as 0, matching the exact zero the operator
    outputs there.
    """
    u = np.asarray(u, dtype=np.float64)
    active = np.abs(u) > theta
    d_by_du = active.astype(np.float64)
    d_by_dtheta = np.where(active, -np.sign(u), 0.0)
    return d_by_du, d_by_dtheta


def spectral_norm_sq(A, tol=1e-10, max_iters=POWER_ITER_CAP):
    """Largest eigenvalue of ``A.T @ A`` by power iteration.

    Starts from the normalized all-ones vector so the result is
    deterministic. Raises :class:`ConvergenceError` if the Rayleigh
    quotient has not settled to ``tol`` (relative) after ``max_iters``.
    """
    A = np.asarray(A, dtype=np.float64)
    if not np.any(A):
        raise ValueError("spectral_norm_sq needs a nonzero matrix")
    n = A.shape[1]
    v = np.ones(n) / np.sqrt(n)
    # all-ones can be orthogonal to the top singular vector; nudge it off
    if np.linalg.norm(A @ v) == 0.0:
        v = np.arange(1, n + 1, dtype=np.float64)
        v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(max_iters):
        w = A.T @ (A @ v)
        lam = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            raise ConvergenceError("power iteration collapsed to the zero vector")
        v = w / nrm
        if abs(lam - prev) <= tol * abs(lam):
            # the Rayleigh quotient converges at twice the rate of the vector
            return float(v @ (A.T @ (A @ v)))
        prev = lam
    raise ConvergenceError(
        f"power iteration did not reach relative tol {tol} in {max_iters} iterations"
    )


def mutual_coherence(A):
    """Largest absolute normalized inner product between distinct columns."""
    A = np.asarray(A, dtype=np.float64)
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        raise ValueError(f"zero column(s) at {np.flatnonzero(norms == 0).tolist()}")
    if A.shape[1] < 2:
        return 0.0
    G = np.abs((A / norms).T @ (A / norms))
    np.fill_diagonal(G, 0.0)
    return float(min(G.max(), 1.0))
