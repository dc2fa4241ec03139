import numpy as np
import pytest

from elista.problem import (
    Dictionary,
    SignalClass,
    dictionary_from_csv,
    dictionary_to_csv,
    gen_dictionary,
    load_dictionary,
    load_samples,
    observe,
    sample_batch,
    sample_set,
    sample_signal,
    save_dictionary,
    save_samples,
)


def svd_oracle(A):
    sv = np.linalg.svd(A, compute_uv=False)
    return sv[0] ** 2, sv[0] / sv[-1]


@pytest.mark.parametrize("m,n,kappa,seed", [(250, 500, 5, 0), (8, 16, 50, 7), (40, 80, 500, 3)])
def test_dictionary_conditioning(m, n, kappa, seed):
    d = gen_dictionary(m, n, kappa, seed)
    L, k = svd_oracle(d.A)
    assert d.A.shape == (m, n)
    assert d.kappa == pytest.approx(kappa, rel=1e-6)
    assert k == pytest.approx(kappa, rel=1e-6)
    assert d.L == pytest.approx(L, rel=1e-8)
    assert d.L > 0


def test_kappa_one_gives_equal_singular_values():
    d = gen_dictionary(2, 4, 1, 0)
    sv = np.linalg.svd(d.A, compute_uv=False)
    assert sv[0] == pytest.approx(sv[1], rel=1e-12)


def test_literal_lipschitz_convention():
    d = gen_dictionary(8, 16, 5, 0, lipschitz_convention="literal")
    assert d.L == pytest.approx(np.linalg.svd(d.A, compute_uv=False)[0], rel=1e-12)


@pytest.mark.parametrize("m,n", [(16, 16), (20, 16), (0, 4)])
def test_dictionary_bad_dims(m, n):
    with pytest.raises(ValueError, match="0 < m < n"):
        gen_dictionary(m, n, 5, 0)


def test_dictionary_bad_kappa():
    with pytest.raises(ValueError, match="kappa"):
        gen_dictionary(4, 8, 0.5, 0)


def test_dictionary_deterministic():
    a = gen_dictionary(30, 60, 50, 11)
    b = gen_dictionary(30, 60, 50, 11)
    assert a.A.tobytes() == b.A.tobytes()
    assert gen_dictionary(30, 60, 50, 12).A.tobytes() != a.A.tobytes()


def test_sample_signal_mean_support():
    cls = SignalClass(B=1.0, s=500, support_prob=0.1)
    counts = np.array([np.count_nonzero(sample_signal(cls, 500, seed)) for seed in range(1000)])
    maxabs = max(np.abs(sample_signal(cls, 500, seed)).max() for seed in range(50))
    sigma = np.sqrt(500 * 0.1 * 0.9 / 1000)
    assert abs(counts.mean() - 50) < 3 * sigma
    assert maxabs <= 1.0


def test_sample_signal_vanishing_support():
    x = sample_signal(SignalClass(B=1, s=2, support_prob=1e-12), 10, 0)
    assert not np.any(x)


def test_sample_signal_caps_sparsity():
    cls = SignalClass(B=0.5, s=5, support_prob=0.5)
    x = sample_signal(cls, 10, 1)
    assert np.count_nonzero(x) <= 5
    assert np.all(np.abs(x) <= 0.5)


def test_sparsity_bounds_over_many_samples():
    cls = SignalClass(B=0.8, s=6, support_prob=0.2)
    d = gen_dictionary(10, 40, 5, 0)
    X, _, _ = sample_batch(d, cls, 10_000, np.inf, np.random.default_rng(0))
    assert np.abs(X).max() <= 0.8
    assert np.count_nonzero(X, axis=0).max() <= 6


def test_batch_and_single_draws_share_support_law():
    # vectorized and per-sample samplers should agree in distribution
    cls = SignalClass(B=1.0, s=6, support_prob=0.15)
    d = gen_dictionary(10, 40, 5, 0)
    X, _, _ = sample_batch(d, cls, 20_000, np.inf, np.random.default_rng(1))
    Xs, _, _ = sample_set(d, cls, 20_000, np.inf, 2)
    assert np.count_nonzero(X, axis=0).mean() == pytest.approx(
        np.count_nonzero(Xs, axis=0).mean(), abs=0.05)


def test_signal_class_validation():
    with pytest.raises(ValueError):
        SignalClass(s=1)
    with pytest.raises(ValueError):
        SignalClass(B=0)
    with pytest.raises(ValueError):
        SignalClass(support_prob=1.0)


def test_observe_noiseless():
    d = gen_dictionary(8, 16, 5, 0)
    x = sample_signal(SignalClass(s=8, support_prob=0.3), 16, 4)
    s = observe(d, x, np.inf, 0)
    assert np.array_equal(s.y, d.A @ x)
    assert not np.any(s.noise)


def test_observe_snr_exact():
    d = gen_dictionary(8, 16, 5, 0)
    x = sample_signal(SignalClass(s=8, support_prob=0.5), 16, 1)
    s = observe(d, x, 30.0, 5)
    clean = d.A @ s.x_star
    snr = 10 * np.log10((clean @ clean) / (s.noise @ s.noise))
    assert snr == pytest.approx(30.0, abs=1e-9)
    # stored identity: y is exactly A @ x_star + noise as computed
    assert np.array_equal(s.y, d.A @ s.x_star + s.noise)


def test_observe_zero_signal():
    d = gen_dictionary(8, 16, 5, 0)
    with pytest.raises(ValueError, match="undefined"):
        observe(d, np.zeros(16), 30.0, 0)


def test_batch_snr_exact():
    d = gen_dictionary(20, 40, 50, 0)
    X, Y, N = sample_batch(d, SignalClass(s=10), 200, 30.0, np.random.default_rng(3))
    clean = d.A @ X
    live = np.any(clean, axis=0)
    snr = 10 * np.log10(np.sum(clean ** 2, 0)[live] / np.sum(N ** 2, 0)[live])
    np.testing.assert_allclose(snr, 30.0, atol=1e-9)
    assert np.array_equal(Y, clean + N)


def test_sample_set_independent_of_count():
    d = gen_dictionary(10, 20, 5, 0)
    cls = SignalClass(s=5, support_prob=0.2)
    X1, Y1, _ = sample_set(d, cls, 5, 30.0, 9)
    X2, Y2, _ = sample_set(d, cls, 12, 30.0, 9)
    assert np.array_equal(X1, X2[:, :5]) and np.array_equal(Y1, Y2[:, :5])


def test_dictionary_roundtrip(tmp_path):
    d = gen_dictionary(6, 12, 5, 3)
    save_dictionary(tmp_path / "d.npz", d)
    e = load_dictionary(tmp_path / "d.npz")
    assert e.A.tobytes() == d.A.tobytes() and e.L == d.L and e.seed == 3
    dictionary_to_csv(tmp_path / "d.csv", d)
    f = dictionary_from_csv(tmp_path / "d.csv")
    assert np.array_equal(f.A, d.A)
    assert open(tmp_path / "d.csv").readline().startswith("# m=6,n=12,kappa=")


def test_samples_roundtrip(tmp_path):
    d = gen_dictionary(6, 12, 5, 3)
    X, Y, N = sample_set(d, SignalClass(s=4, support_prob=0.3), 7, 30.0, 1)
    save_samples(tmp_path / "s.npz", X, Y, N, 30.0)
    X2, Y2, N2, snr = load_samples(tmp_path / "s.npz")
    assert np.array_equal(X, X2) and np.array_equal(Y, Y2) and snr == 30.0


def test_from_matrix_rejects_nonfinite():
    with pytest.raises(ValueError):
        Dictionary.from_matrix([[1.0, np.nan]])
