"""Recovery metrics and the benchmark runner.

NMSE is a batch-level ratio of sums in dB. Convergence rate is the slope of
a least-squares line through ``log ||x^t - x*||`` over layers ``t = 1..T``.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .classical import SolverConfig, default_lambda, eeg_solve, ista_solve
from .problem import sample_set
from .unrolled import KINDS, forward, param_count

NMSE_FLOOR_DB = -320.0
ERROR_FLOOR = 1e-16
CLASSICAL = ("ista", "eeg")
METHODS = CLASSICAL + KINDS
CSV_COLUMNS = ("method", "kappa", "snr_db", "layer", "nmse_db_mean", "nmse_db_std",
               "c_hat", "r2", "params")
DISPLAY = {"ista": "ISTA", "eeg": "EEG", "lista": "LISTA",
           "elista_untied": "ELISTA-untied", "elista_tied": "ELISTA"}


class MissingCheckpointError(LookupError):
    pass


def nmse_db(estimates, truths):
    """``10*log10(sum ||x_hat - x*||^2 / sum ||x*||^2)``; exact recovery gives -320."""
    estimates = np.asarray(estimates, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if estimates.shape != truths.shape or truths.size == 0:
        raise ValueError(f"need equal nonempty batches, got {estimates.shape} and {truths.shape}")
    den = np.sum(truths ** 2)
    if den == 0:
        raise ValueError("all ground-truth vectors are zero; NMSE is undefined")
    num = np.sum((estimates - truths) ** 2)
    if num == 0:
        return NMSE_FLOOR_DB
    return max(float(10 * np.log10(num / den)), NMSE_FLOOR_DB)


@dataclass
class RateEstimate:
    c_hat: float
    r_squared: float
    false_positive_counts: list = field(default_factory=list)


def estimate_rate(errors, false_positive_counts=()):
    """Fit ``log(errors[t-1]) ~ a + c_hat * t`` for ``t = 1..T``."""
    e = np.maximum(np.asarray(errors, dtype=np.float64), ERROR_FLOOR)
    if e.size < 3:
        raise ValueError(f"need at least 3 layers to fit a rate, got {e.size}")
    t = np.arange(1, e.size + 1, dtype=np.float64)
    z = np.log(e)
    tc = t - t.mean()
    zc = z - z.mean()
    slope = float(tc @ zc / (tc @ tc))
    ss_tot = float(zc @ zc)
    if ss_tot <= 1e-24 * max(1.0, float(z @ z)):
        return RateEstimate(0.0, 0.0, list(false_positive_counts))
    resid = zc - slope * tc
    r2 = 1.0 - float(resid @ resid) / ss_tot
    return RateEstimate(slope, min(max(r2, 0.0), 1.0), list(false_positive_counts))


def mean_errors(iterates, X):
    """Mean l2 error per layer over batch columns."""
    return [float(np.mean(np.linalg.norm(x - X, axis=0))) for x in iterates]


def false_positives(iterates, X):
    """Mean ``|supp(x^t) minus supp(x*)|`` per layer (exact-zero support test)."""
    off = X == 0
    return [float(np.mean(np.sum((x != 0) & off, axis=0))) for x in iterates]


def run_method(method, dictionary, Y, T, lam=None, params=None):
    """Iterates ``x^0..x^T`` of a method on column batch ``Y``."""
    if method in CLASSICAL:
        lam = default_lambda(dictionary.A, Y) if lam is None else lam
        solve = ista_solve if method == "ista" else eeg_solve
        return solve(dictionary, Y, SolverConfig(lam=lam, max_iters=T)).iterates
    if method not in KINDS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if params is None:
        raise MissingCheckpointError(f"no trained parameters for method {method!r}")
    _, trace = forward(params, dictionary.A, Y, record=True)
    return trace.x


@dataclass
class MethodResult:
    method: str
    kappa: float
    snr_db: float
    seed: int
    nmse_db: list  # per layer, length T+1
    rate: RateEstimate
    params: int

    @property
    def final_nmse_db(self):
        return self.nmse_db[-1]


@dataclass
class BenchReport:
    results: list = field(default_factory=list)

    def extend(self, other):
        self.results.extend(other.results)
        return self

    def cells(self):
        return sorted({(r.kappa, r.snr_db) for r in self.results}, key=lambda c: (c[1] != np.inf, c))

    def methods(self):
        seen = []
        for r in self.results:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def select(self, method, kappa, snr_db):
        return [r for r in self.results
                if r.method == method and r.kappa == kappa and r.snr_db == snr_db]

    def final_nmse(self, method, kappa, snr_db, stat=np.median):
        return float(stat([r.final_nmse_db for r in self.select(method, kappa, snr_db)]))

    def rows(self):
        rows = []
        for kappa, snr in self.cells():
            for method in self.methods():
                rs = self.select(method, kappa, snr)
                if not rs:
                    continue
                curves = np.array([r.nmse_db for r in rs])
                c_hat = float(np.mean([r.rate.c_hat for r in rs]))
                r2 = float(np.mean([r.rate.r_squared for r in rs]))
                for layer in range(curves.shape[1]):
                    rows.append({
                        "method": method, "kappa": kappa, "snr_db": snr, "layer": layer,
                        "nmse_db_mean": float(curves[:, layer].mean()),
                        "nmse_db_std": float(curves[:, layer].std()),
                        "c_hat": c_hat, "r2": r2, "params": rs[0].params,
                    })
        return rows

    def write_csv(self, path_or_buf):
        own = isinstance(path_or_buf, str)
        fh = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        finally:
            if own:
                fh.close()

    def format_table(self, stat=np.mean):
        """Final-layer NMSE (dB): one row per (kappa, SNR) cell, one column per method."""
        methods = self.methods()
        head = ["cell"] + [DISPLAY.get(m, m) for m in methods]
        lines = []
        for kappa, snr in self.cells():
            snr_txt = "inf" if np.isinf(snr) else f"{snr:g}"
            cells = [f"kappa={kappa:g}, SNR={snr_txt}"]
            for m in methods:
                rs = self.select(m, kappa, snr)
                cells.append(f"{stat([r.final_nmse_db for r in rs]):.3f}" if rs else "-")
            lines.append(cells)
        widths = [max(len(r[i]) for r in [head] + lines) for i in range(len(head))]
        out = io.StringIO()
        fmt = lambda r: " | ".join(c.rjust(w) for c, w in zip(r, widths))
        out.write(fmt(head) + "\n")
        out.write("-+-".join("-" * w for w in widths) + "\n")
        for r in lines:
            out.write(fmt(r) + "\n")
        return out.getvalue()


def run_benchmark(methods, dictionary, cls, snr_db, n_test, seeds, T=16, params=None, lam=None):
    """Evaluate each method on ``n_test`` fresh samples per seed.

    ``params`` maps ``(method, seed)`` or ``method`` to trained parameters
    for the learned methods. ``lam`` fixes the classical solvers' l1 weight
    (default: the scale-free per-batch choice).
    """
    params = params or {}
    report = BenchReport()
    m, n = dictionary.m, dictionary.n
    for seed in seeds:
        X, Y, _ = sample_set(dictionary, cls, n_test, snr_db, seed)
        for method in methods:
            p = params.get((method, seed), params.get(method))
            if method in KINDS and p is None:
                raise MissingCheckpointError(f"no trained parameters for method {method!r} (seed {seed})")
            depth = p.depth if p is not None else T
            xs = run_method(method, dictionary, Y, depth, lam=lam, params=p)
            errs = mean_errors(xs[1:], X)
            fps = false_positives(xs[1:], X)
            report.results.append(MethodResult(
                method, round(float(dictionary.kappa), 4), float(snr_db), seed,
                [nmse_db(x, X) for x in xs],
                estimate_rate(errs, fps) if depth >= 3 else RateEstimate(float("nan"), 0.0, fps),
                0 if method in CLASSICAL else param_count(method, m, n, depth),
            ))
    return report
