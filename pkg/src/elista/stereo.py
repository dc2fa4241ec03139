"""Robust photometric stereo with a sparse error term.

Per pixel, ``o = rho * L @ w + e`` with ``e`` sparse (shadows, specular
highlights, outliers). Multiplying by an orthonormal basis ``P`` of the
orthogonal complement of ``range(L)`` removes the Lambertian term, leaving
the sparse coding problem ``P @ o = P @ e``. Once ``e`` is estimated the
normal follows from the pseudo-inverse: ``w ~ pinv(L) @ (o - e)``.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .classical import SolverConfig, default_lambda, ista_solve
from .problem import Dictionary
from .unrolled import forward

UNIT_TOL = 1e-6


class RankDeficientLightingError(ValueError):
    pass


class ZeroNormalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LightingRig:
    L: np.ndarray  # (q, 3), unit rows

    def __post_init__(self):
        L = np.asarray(self.L, dtype=np.float64)
        if L.ndim != 2 or L.shape[1] != 3:
            raise ValueError(f"lighting matrix must be q x 3, got {L.shape}")
        if not np.allclose(np.linalg.norm(L, axis=1), 1.0, atol=1e-12):
            raise ValueError("lighting directions must be unit vectors")
        object.__setattr__(self, "L", L)

    @property
    def q(self):
        return self.L.shape[0]


def random_rig(q, seed, max_polar_deg=50.0):
    """``q`` light directions drawn uniformly from a cone around +z."""
    rng = np.random.default_rng(seed)
    cos_max = np.cos(np.radians(max_polar_deg))
    z = rng.uniform(cos_max, 1.0, q)
    phi = rng.uniform(0.0, 2 * np.pi, q)
    r = np.sqrt(1 - z * z)
    L = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return LightingRig(L / np.linalg.norm(L, axis=1, keepdims=True))


@dataclass(frozen=True)
class PixelObservation:
    o: np.ndarray
    rho: float = 1.0
    w_true: np.ndarray | None = None
    e_true: np.ndarray | None = None


def build_projector(rig):
    """Rows form an orthonormal basis of the complement of ``range(L)``.

    Accepts a :class:`LightingRig` or a raw ``q x 3`` matrix. Each row is
    signed so its largest-magnitude entry is positive.
    """
    L = rig.L if isinstance(rig, LightingRig) else np.asarray(rig, dtype=np.float64)
    q = L.shape[0]
    if q < 4:
        raise RankDeficientLightingError(f"need q >= 4 lights for a nontrivial complement, got q={q}")
    U, sv, _ = np.linalg.svd(L, full_matrices=True)
    if sv[2] <= sv[0] * q * np.finfo(float).eps * 10:
        raise RankDeficientLightingError(f"lighting matrix has rank < 3 (singular values {sv})")
    P = U[:, 3:].T.copy()
    flip = P[np.arange(P.shape[0]), np.argmax(np.abs(P), axis=1)] < 0
    P[flip] *= -1
    return P


def ista_solver(max_iters=1000, lam=None, lam_scale=0.1):
    """Sparse-error solver handle running ISTA on ``P @ e = y``.

    ``lam=None`` uses ``lam_scale * ||P^T y||_inf`` per batch.
    """

    def solve(dictionary, Y):
        l = lam if lam is not None else lam_scale / 0.1 * default_lambda(dictionary.A, Y)
        cfg = SolverConfig(lam=l, max_iters=max_iters, record_trajectory=False)
        return ista_solve(dictionary, Y, cfg).final

    return solve


def network_solver(params):
    def solve(dictionary, Y):
        return forward(params, dictionary.A, Y)[0]

    return solve


def _normals_from(L, O, E):
    G = np.linalg.pinv(L) @ (O - E)
    rho = np.linalg.norm(G, axis=0)
    if np.any(rho == 0):
        raise ZeroNormalError("pinv(L) @ (o - e_hat) vanished; the normal is undefined")
    return G / rho, rho


def recover_pixels(rig, projector, O, solver):
    """Batch version of :func:`recover_pixel` over columns of ``O`` (q x N).

    Returns ``(W_hat, E_hat, rho_hat)``.
    """
    O = np.asarray(O, dtype=np.float64)
    if O.shape[0] != rig.q:
        raise ValueError(f"observations have {O.shape[0]} rows, rig has q={rig.q}")
    d = Dictionary(projector, 1.0, 1.0)
    E = solver(d, projector @ O)
    W, rho = _normals_from(rig.L, O, E)
    return W, E, rho


def recover_pixel(rig, projector, o, solver):
    """``(w_hat, e_hat)`` for one pixel's intensity vector ``o``."""
    W, E, _ = recover_pixels(rig, projector, np.asarray(o, dtype=np.float64)[:, None], solver)
    return W[:, 0], E[:, 0]


def angular_errors(w_hats, w_trues):
    w_hats = np.atleast_2d(np.asarray(w_hats, dtype=np.float64))
    w_trues = np.atleast_2d(np.asarray(w_trues, dtype=np.float64))
    if w_hats.shape != w_trues.shape:
        raise ValueError(f"batch shapes differ: {w_hats.shape} vs {w_trues.shape}")
    for name, w in (("estimated", w_hats), ("true", w_trues)):
        if np.any(np.abs(np.linalg.norm(w, axis=1) - 1) > UNIT_TOL):
            raise ValueError(f"{name} normals must be unit vectors (tolerance {UNIT_TOL})")
    return np.arccos(np.clip(np.sum(w_hats * w_trues, axis=1), -1.0, 1.0))


def mean_angular_error(w_hats, w_trues):
    """Mean angle in radians between paired unit vectors (rows)."""
    return float(np.mean(angular_errors(w_hats, w_trues)))


@dataclass
class Scene:
    rig: LightingRig
    normals: np.ndarray  # (N, 3)
    O: np.ndarray  # (q, N)
    E: np.ndarray  # (q, N)
    rho: float
    mask: np.ndarray  # (res, res) bool, pixel grid coverage
    n_corrupt: int

    def pixels(self):
        return [PixelObservation(self.O[:, i], self.rho, self.normals[i], self.E[:, i])
                for i in range(self.O.shape[1])]


def _observe(L, normals, rho, corruption_frac, rng):
    """Intensities with attached shadows and sparse corruption folded into E."""
    q = L.shape[0]
    clean = rho * (L @ normals.T)
    E = np.maximum(-clean, 0.0)  # clamping deficit of attached shadows
    k = int(round(corruption_frac * q))
    if k:
        N = normals.shape[0]
        level = np.mean(np.maximum(clean, 0.0), axis=0)
        idx = np.argsort(rng.random((q, N)), axis=0)[:k]
        mag = rng.uniform(-2.0, 2.0, (k, N)) * level
        np.add.at(E, (idx, np.broadcast_to(np.arange(N), idx.shape)), mag)
    return clean + E, E, k


def synth_scene(shape, resolution, rig, corruption_frac, seed, rho=1.0):
    """Orthographic view of a unit sphere on a ``resolution^2`` grid."""
    if shape != "sphere":
        raise ValueError(f"unsupported shape {shape!r}; only 'sphere' is available")
    if not 0.0 <= corruption_frac < 1.0:
        raise ValueError(f"corruption_frac must lie in [0, 1), got {corruption_frac}")
    c = (np.arange(resolution) + 0.5) / resolution * 2 - 1
    gx, gy = np.meshgrid(c, -c)
    mask = gx ** 2 + gy ** 2 < 1.0
    x, y = gx[mask], gy[mask]
    normals = np.column_stack([x, y, np.sqrt(1 - x * x - y * y)])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    O, E, k = _observe(rig.L, normals, rho, corruption_frac, np.random.default_rng(seed))
    return Scene(rig, normals, O, E, rho, mask, k)


def random_normals(count, rng):
    """Normals of a sphere seen head-on, sampled uniformly over the image disk."""
    r = np.sqrt(rng.random(count))
    phi = rng.uniform(0, 2 * np.pi, count)
    x, y = r * np.cos(phi), r * np.sin(phi)
    w = np.column_stack([x, y, np.sqrt(np.maximum(1 - x * x - y * y, 0.0))])
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def pixel_sampler(rig, projector, corruption_frac, rho=1.0):
    """``sampler(rng, batch) -> (E, P @ O)`` for training the error estimators."""

    def sample(rng, batch):
        O, E, _ = _observe(rig.L, random_normals(batch, rng), rho, corruption_frac, rng)
        return E, projector @ O

    return sample


def write_results_csv(path, normals, w_hats):
    errs = angular_errors(w_hats, normals)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pixel", "true_x", "true_y", "true_z", "est_x", "est_y", "est_z", "angular_error"])
        for i, (a, b, e) in enumerate(zip(normals, w_hats, errs)):
            w.writerow([i, *map(repr, map(float, a)), *map(repr, map(float, b)), repr(float(e))])


def write_normal_map_ppm(path, mask, normals):
    """Binary PPM with RGB = (normal + 1) / 2; background is black."""
    img = np.zeros(mask.shape + (3,), dtype=np.uint8)
    img[mask] = np.clip(np.round((normals + 1) / 2 * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6 {mask.shape[1]} {mask.shape[0]} 255\n".encode())
        fh.write(img.tobytes())
