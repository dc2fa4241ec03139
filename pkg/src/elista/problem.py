"""Synthetic dictionaries, sparse signals and noisy observations.

The dictionary is built as ``U @ diag(sigma) @ V.T`` with Haar-like
orthonormal factors and singular values log-spaced from 1 down to
``1/kappa``, so the condition number is exact by construction.
"""

from dataclasses import dataclass, field

import numpy as np

CONTAINER_VERSION = 1


@dataclass(frozen=True)
class Dictionary:
    A: np.ndarray
    L: float
    kappa: float
    seed: int | None = None
    lipschitz_convention: str = "squared"

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]

    @classmethod
    def from_matrix(cls, A, seed=None, lipschitz_convention="squared"):
        """Wrap an arbitrary matrix, computing L and kappa from its SVD.

        ``lipschitz_convention="squared"`` gives ``L = sigma_max**2`` (the
        Lipschitz constant of the gradient of ``0.5*||y - A x||^2``);
        ``"literal"`` gives ``L = sigma_max``.
        """
        A = np.array(A, dtype=np.float64)
        if A.ndim != 2:
            raise ValueError("dictionary must be a 2-D matrix")
        if not np.all(np.isfinite(A)):
            raise ValueError("dictionary has non-finite entries")
        sv = np.linalg.svd(A, compute_uv=False)
        nz = sv[sv > sv[0] * max(A.shape) * np.finfo(float).eps]
        if nz.size == 0:
            raise ValueError("dictionary is the zero matrix")
        if lipschitz_convention == "squared":
            L = float(sv[0] ** 2)
        elif lipschitz_convention == "literal":
            L = float(sv[0])
        else:
            raise ValueError(f"unknown lipschitz convention {lipschitz_convention!r}")
        A.setflags(write=False)
        return cls(A, L, float(nz[0] / nz[-1]), seed, lipschitz_convention)


@dataclass(frozen=True)
class SignalClass:
    """Bounded sparse signals: ``|x_i| <= B`` and ``||x||_0 <= s``."""

    B: float = 1.0
    s: int = 50
    support_prob: float = 0.1

    def __post_init__(self):
        if not self.B > 0:
            raise ValueError(f"B must be positive, got {self.B}")
        if int(self.s) != self.s or self.s < 2:
            raise ValueError(f"s must be an integer >= 2, got {self.s}")
        if not 0.0 < self.support_prob < 1.0:
            raise ValueError(f"support_prob must lie in (0, 1), got {self.support_prob}")


@dataclass(frozen=True)
class SparseSample:
    x_star: np.ndarray
    y: np.ndarray
    noise: np.ndarray
    snr_db: float = field(default=np.inf)


def _rng(seed):
    return np.random.default_rng(seed)


def gen_dictionary(m, n, kappa, seed, lipschitz_convention="squared"):
    if m <= 0 or m >= n:
        raise ValueError(f"need 0 < m < n, got m={m}, n={n}")
    if not kappa >= 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    rng = _rng(seed)
    U, _ = np.linalg.qr(rng.standard_normal((m, m)))
    V, _ = np.linalg.qr(rng.standard_normal((n, m)))
    sigma = np.logspace(0.0, -np.log10(kappa), m)
    A = (U * sigma) @ V.T
    return Dictionary.from_matrix(A, seed=seed, lipschitz_convention=lipschitz_convention)


def _draw_signal(cls, n, rng):
    support = np.flatnonzero(rng.random(n) < cls.support_prob)
    if support.size > cls.s:
        support = np.sort(rng.choice(support, size=cls.s, replace=False))
    vals = rng.standard_normal(support.size)
    bad = np.abs(vals) > cls.B
    while np.any(bad):
        vals[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(vals) > cls.B
    x = np.zeros(n)
    x[support] = vals
    return x


def sample_signal(cls, n, seed):
    """One draw from the bounded sparse class.

    Each coordinate is on with probability ``cls.support_prob``; surplus
    support beyond ``cls.s`` is dropped uniformly at random. Magnitudes are
    standard normal, resampled until they fall inside ``[-B, B]``.
    """
    if n < cls.s:
        raise ValueError(f"n={n} is smaller than the sparsity bound s={cls.s}")
    return _draw_signal(cls, n, _rng(seed))


def _scaled_noise(clean, snr_db, rng):
    if np.isinf(snr_db):
        return np.zeros_like(clean)
    energy = float(clean @ clean)
    if energy == 0.0:
        raise ValueError("SNR is undefined for a zero clean signal (A @ x_star == 0)")
    z = rng.standard_normal(clean.shape)
    return z * np.sqrt(energy / (float(z @ z) * 10.0 ** (snr_db / 10.0)))


def observe(dictionary, x_star, snr_db, seed):
    """``y = A @ x_star + noise`` with the SNR hit exactly for this draw."""
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_star.shape != (dictionary.n,):
        raise ValueError(f"x_star must have shape ({dictionary.n},), got {x_star.shape}")
    if not (snr_db > 0 or np.isinf(snr_db)) or snr_db == -np.inf:
        raise ValueError(f"snr_db must be positive or +inf, got {snr_db}")
    clean = dictionary.A @ x_star
    noise = _scaled_noise(clean, snr_db, _rng(seed))
    return SparseSample(x_star, clean + noise, noise, float(snr_db))


def _draw_signals(cls, n, batch, rng):
    """Column batch with the same law as :func:`_draw_signal`, vectorized."""
    mask = rng.random((n, batch)) < cls.support_prob
    over = np.flatnonzero(mask.sum(axis=0) > cls.s)
    if over.size:
        keys = rng.random((n, over.size))
        keys[~mask[:, over]] = np.inf
        rank = np.argsort(np.argsort(keys, axis=0), axis=0)
        mask[:, over] &= rank < cls.s
    vals = rng.standard_normal(int(mask.sum()))
    bad = np.flatnonzero(np.abs(vals) > cls.B)
    while bad.size:
        vals[bad] = rng.standard_normal(bad.size)
        bad = bad[np.abs(vals[bad]) > cls.B]
    X = np.zeros((n, batch))
    X[mask] = vals
    return X


def sample_batch(dictionary, cls, batch, snr_db, rng):
    """Column-stacked batch ``(X, Y, noise)`` drawn from a shared generator.

    Used for online training batches; every draw advances ``rng``. Columns
    with a zero clean signal get zero noise.
    """
    X = _draw_signals(cls, dictionary.n, batch, rng)
    clean = dictionary.A @ X
    if np.isinf(snr_db):
        return X, clean, np.zeros_like(clean)
    z = rng.standard_normal(clean.shape)
    energy = np.sum(clean * clean, axis=0)
    scale = np.sqrt(energy / (np.sum(z * z, axis=0) * 10.0 ** (snr_db / 10.0)))
    noise = z * scale
    return X, clean + noise, noise


def sample_set(dictionary, cls, count, snr_db, seed):
    """Reproducible batch where sample ``j`` depends only on ``(seed, j)``.

    Samples are generated independently, so the result does not depend on
    how the work is split.
    """
    n = dictionary.n
    X = np.empty((n, count))
    Y = np.empty((dictionary.m, count))
    N = np.zeros((dictionary.m, count))
    for j in range(count):
        rng = _rng([seed, j])
        x = _draw_signal(cls, n, rng)
        clean = dictionary.A @ x
        if not np.isinf(snr_db) and np.any(clean):
            N[:, j] = _scaled_noise(clean, snr_db, rng)
        X[:, j] = x
        Y[:, j] = clean + N[:, j]
    return X, Y, N


# -- serialization -----------------------------------------------------------

def save_dictionary(path, dictionary):
    np.savez(
        path,
        format_version=CONTAINER_VERSION,
        A=dictionary.A,
        L=dictionary.L,
        kappa=dictionary.kappa,
        seed=-1 if dictionary.seed is None else dictionary.seed,
        lipschitz_convention=dictionary.lipschitz_convention,
    )


def load_dictionary(path):
    with np.load(path) as f:
        if int(f["format_version"]) != CONTAINER_VERSION:
            raise ValueError(f"{path}: unsupported container version {int(f['format_version'])}")
        seed = int(f["seed"])
        return Dictionary(
            np.array(f["A"]),
            float(f["L"]),
            float(f["kappa"]),
            None if seed < 0 else seed,
            str(f["lipschitz_convention"]),
        )


def dictionary_to_csv(path, dictionary):
    """Row-major matrix with a ``# m=..,n=..,kappa=..,seed=..`` header line."""
    header = (
        f"m={dictionary.m},n={dictionary.n},kappa={dictionary.kappa!r},"
        f"seed={dictionary.seed},L={dictionary.L!r}"
    )
    np.savetxt(path, dictionary.A, delimiter=",", header=header, fmt="%.17g")


def dictionary_from_csv(path):
    with open(path) as fh:
        header = fh.readline().lstrip("#").strip()
    meta = dict(kv.split("=", 1) for kv in header.split(","))
    A = np.loadtxt(path, delimiter=",", ndmin=2)
    seed = None if meta.get("seed") in (None, "None") else int(meta["seed"])
    d = Dictionary.from_matrix(A, seed=seed)
    if (d.m, d.n) != (int(meta["m"]), int(meta["n"])):
        raise ValueError(f"{path}: header shape disagrees with matrix body")
    return d


def save_samples(path, X, Y, noise, snr_db):
    np.savez(path, format_version=CONTAINER_VERSION, X=X, Y=Y, noise=noise, snr_db=snr_db)


def load_samples(path):
    with np.load(path) as f:
        if int(f["format_version"]) != CONTAINER_VERSION:
            raise ValueError(f"{path}: unsupported container version")
        return np.array(f["X"]), np.array(f["Y"]), np.array(f["noise"]), float(f["snr_db"])


def samples_to_csv(path, X, Y):
    """One row per sample: ``x_0..x_{n-1}, y_0..y_{m-1}``."""
    n, m = X.shape[0], Y.shape[0]
    header = ",".join([f"x{i}" for i in range(n)] + [f"y{i}" for i in range(m)])
    np.savetxt(path, np.vstack([X, Y]).T, delimiter=",", header=header, comments="", fmt="%.17g")
