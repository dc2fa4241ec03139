import csv

import numpy as np
import pytest

from elista.evaluation import (
    CSV_COLUMNS,
    MissingCheckpointError,
    estimate_rate,
    false_positives,
    nmse_db,
    run_benchmark,
    run_method,
)
from elista.problem import Dictionary, SignalClass, gen_dictionary, sample_set
from elista.unrolled import init_elista_tied


def test_nmse_examples():
    x = np.array([[1.0, 0.0], [0.0, -2.0]])
    assert nmse_db(x, x) == -320.0
    assert nmse_db(np.zeros_like(x), x) == 0.0
    assert nmse_db(x * 1.1, x) == pytest.approx(-20.0, abs=1e-12)


def test_nmse_scale_invariant():
    rng = np.random.default_rng(0)
    x, xh = rng.standard_normal((2, 10, 5))
    for c in (-3.0, 1e-3, 7.5):
        assert nmse_db(c * xh, c * x) == pytest.approx(nmse_db(xh, x), abs=1e-10)


def test_nmse_errors():
    with pytest.raises(ValueError):
        nmse_db(np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        nmse_db(np.ones(3), np.ones(4))


def test_rate_of_geometric_sequence():
    r = estimate_rate(np.exp(-np.arange(1.0, 5.0)))
    assert r.c_hat == pytest.approx(-1.0, abs=1e-9) and r.r_squared == pytest.approx(1.0, abs=1e-9)
    errs = 2.0 * np.exp(-1.0 * np.arange(1, 9))
    r = estimate_rate(errs)
    assert r.c_hat == pytest.approx(-1.0, abs=1e-9)
    assert r.r_squared == pytest.approx(1.0, abs=1e-9)
    r = estimate_rate(0.5 ** np.arange(1, 17))
    assert r.c_hat == pytest.approx(np.log(0.5), abs=1e-9)


def test_rate_of_constant_sequence():
    r = estimate_rate([0.3] * 6)
    assert (r.c_hat, r.r_squared) == (0.0, 0.0)


def test_rate_needs_three_layers():
    with pytest.raises(ValueError):
        estimate_rate([1.0, 0.5])


def test_false_positive_bounds():
    d = gen_dictionary(20, 40, 5, 0)
    X, Y, _ = sample_set(d, SignalClass(s=6), 50, np.inf, 0)
    rng = np.random.default_rng(1)
    xs = [rng.standard_normal(X.shape) * (rng.random(X.shape) < p) for p in (0.0, 0.3, 1.0)]
    fps = false_positives(xs, X)
    assert fps[0] == 0.0
    off = np.mean(np.sum(X == 0, axis=0))
    assert all(0 <= f <= off for f in fps)
    assert fps[2] == pytest.approx(off)


def test_identity_dictionary_benchmark_is_monotone():
    # A = [I 0]: unit steps with lam = 0 reach the least-squares point at once
    d = Dictionary.from_matrix(np.eye(9, 10))
    rep = run_benchmark(["ista"], d, SignalClass(s=3, support_prob=0.2), np.inf, 20, [0], T=4, lam=0.0)
    curve = rep.results[0].nmse_db
    assert curve[0] == 0.0
    assert all(b <= a for a, b in zip(curve, curve[1:]))


def test_missing_checkpoint():
    d = gen_dictionary(8, 16, 5, 0)
    with pytest.raises(MissingCheckpointError):
        run_benchmark(["lista"], d, SignalClass(s=4), np.inf, 5, [0], T=3)
    with pytest.raises(MissingCheckpointError):
        run_method("elista_tied", d, np.ones((8, 2)), 3)
    with pytest.raises(ValueError):
        run_method("fista", d, np.ones((8, 2)), 3)


def test_benchmark_csv_and_table(tmp_path):
    d = gen_dictionary(10, 20, 5, 0)
    cls = SignalClass(s=4, support_prob=0.2)
    p = init_elista_tied(d, 4, 0.01)
    rep = run_benchmark(["ista", "elista_tied"], d, cls, 30.0, 40, [0, 1], T=4,
                        params={"elista_tied": p}, lam=0.01)
    path = str(tmp_path / "bench.csv")
    rep.write_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 2 * 5
    assert {r["method"] for r in rows} == {"ista", "elista_tied"}
    assert int(rows[-1]["params"]) == 10 * 20 + 4 * 4
    table = rep.format_table()
    assert "ELISTA" in table and "kappa=5, SNR=30" in table
