import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

import fracspde.fbm as fbm
from fracspde.fbm import (FbmPath, derive_seed, exp_functional, fgn_autocovariance, running_sup_abs,
                          sample_fbm_path)

hursts = st.floats(0.05, 0.95)
seeds = st.integers(0, 2 ** 63 - 1)


def test_autocovariance_brownian():
    g = fgn_autocovariance(0.5, 5, dt=0.01)
    assert g[0] == pytest.approx(0.01)
    assert np.allclose(g[1:], 0.0, atol=1e-18)


def test_autocovariance_h075_lag1():
    # closed formula evaluated by hand: (2^{1.5} - 2) / 2
    assert fgn_autocovariance(0.75, 1)[1] == pytest.approx(0.414214, abs=1e-6)


@pytest.mark.parametrize("H", [0.3, 0.6, 0.75, 0.9])
def test_autocovariance_telescopes_to_variance(H):
    n, dt = 4, 0.25
    g = fgn_autocovariance(H, n - 1, dt)
    # sum over all (i, j) pairs equals Var(B(n dt)) = (n dt)^{2H}
    pairs = sum(g[abs(i - j)] for i in range(n) for j in range(n))
    assert pairs == pytest.approx((n * dt) ** (2 * H), rel=1e-12)
    # the plain lag sum telescopes to n^{2H} - (n-1)^{2H}, in units dt^{2H}
    lags = sum(g[abs(k)] for k in range(-(n - 1), n))
    assert lags == pytest.approx((n ** (2 * H) - (n - 1) ** (2 * H)) * dt ** (2 * H), rel=1e-12)


@pytest.mark.parametrize("H", [0.0, 1.0, -0.1, 1.5])
def test_rejects_bad_hurst(H):
    with pytest.raises(ValueError, match="hurst"):
        fgn_autocovariance(H, 3)
    with pytest.raises(ValueError, match="hurst"):
        sample_fbm_path(H, 1.0, 10, 0)


def test_sample_rejects_bad_sizes():
    with pytest.raises(ValueError):
        sample_fbm_path(0.6, 1.0, 1, 0)
    with pytest.raises(ValueError):
        sample_fbm_path(0.6, 0.0, 10, 0)


@given(hursts, seeds, st.integers(2, 300))
def test_path_invariants(H, seed, N):
    p = sample_fbm_path(H, 1.0, N, seed)
    assert p.values[0] == 0.0
    assert p.values.size == p.increments.size + 1 == N + 1
    assert np.array_equal(p.increments, np.diff(p.values))


@given(hursts, seeds)
def test_sampling_is_deterministic(H, seed):
    a = sample_fbm_path(H, 1.0, 64, seed)
    b = sample_fbm_path(H, 1.0, 64, seed)
    assert np.array_equal(a.values, b.values)


def test_reproducible_regardless_of_other_draws():
    first = sample_fbm_path(0.7, 1.0, 100, derive_seed(5, 3)).values
    for i in range(10):
        sample_fbm_path(0.7, 1.0, 100, derive_seed(5, i))
    assert np.array_equal(first, sample_fbm_path(0.7, 1.0, 100, derive_seed(5, 3)).values)


def test_derive_seed_distinct_and_stable():
    s = {derive_seed(42, i) for i in range(1000)}
    assert len(s) == 1000
    assert derive_seed(42, 7) == derive_seed(42, 7)


def test_brownian_increments_uncorrelated():
    N = 10_000
    inc = sample_fbm_path(0.5, 1.0, N, 11).increments
    r = np.corrcoef(inc[:-1], inc[1:])[0, 1]
    assert abs(r) < 3 / math.sqrt(N)
    assert inc.var() == pytest.approx(1.0 / N, rel=0.05)


@pytest.mark.parametrize("H", [0.5, 0.6, 0.8])
def test_covariance_matches_RH(H):
    n_paths, N = 10_000, 50
    pts = [(10, 20), (25, 50), (5, 45), (30, 30), (15, 40)]
    vals = np.array([sample_fbm_path(H, 1.0, N, derive_seed(99, i)).values for i in range(n_paths)])
    for a, b in pts:
        s, t = a / N, b / N
        prod = vals[:, a] * vals[:, b]
        exact = 0.5 * (s ** (2 * H) + t ** (2 * H) - abs(t - s) ** (2 * H))
        se = prod.std(ddof=1) / math.sqrt(n_paths)
        assert abs(prod.mean() - exact) <= 4 * se


def test_self_similarity_variance_ratio():
    H, c, n = 0.7, 2.0, 4000
    v1 = np.array([sample_fbm_path(H, 1.0, 32, derive_seed(1, i)).values[-1] for i in range(n)])
    v2 = np.array([sample_fbm_path(H, c, 32, derive_seed(2, i)).values[-1] for i in range(n)])
    ratio = v2.var() / v1.var()
    se = ratio * math.sqrt(4.0 / n)
    assert abs(ratio - c ** (2 * H)) <= 4 * se


def test_cholesky_fallback_recorded(monkeypatch):
    def bad(H, N, dt):
        lam, size = orig(H, N, dt)
        lam = lam.copy()
        lam[1] = -1.0
        return lam, size
    orig = fbm._circulant_eigenvalues
    monkeypatch.setattr(fbm, "_circulant_eigenvalues", bad)
    p = sample_fbm_path(0.7, 1.0, 64, 3)
    assert p.method == "cholesky"
    assert p.values[0] == 0.0 and p.N == 64


def test_circulant_is_default():
    assert sample_fbm_path(0.9, 1.0, 100, 3).method == "circulant"


def test_running_sup_examples():
    assert np.array_equal(running_sup_abs(np.zeros(5)), np.zeros(5))
    assert np.array_equal(running_sup_abs([0.0, 1.0, -2.0]), [0.0, 1.0, 2.0])


@given(hursts, seeds)
def test_running_sup_monotone_and_prefix_idempotent(H, seed):
    p = sample_fbm_path(H, 1.0, 100, seed)
    s = running_sup_abs(p)
    assert np.all(np.diff(s) >= 0)
    assert np.array_equal(running_sup_abs(p.prefix(40)), s[:41])


def test_coarsen_keeps_values():
    p = sample_fbm_path(0.6, 1.0, 100, 1)
    c = p.coarsen(4)
    assert c.N == 25 and c.dt == pytest.approx(0.04)
    assert np.array_equal(c.values, p.values[::4])
    with pytest.raises(ValueError):
        p.coarsen(3)


def _zero_path(T, N, H=0.6):
    return FbmPath.from_values(H, T / N, np.zeros(N + 1))


def test_exp_functional_deterministic_integrand():
    p = _zero_path(1.0, 20_000)
    ef = exp_functional(p, rho=0.0, a=2.0, T_cut=1.0)
    assert ef.value == pytest.approx((1 - math.exp(-2)) / 2, abs=1e-6)
    assert ef.tail == pytest.approx(math.exp(-2.0))


def test_exp_functional_infinite_horizon_zero_path():
    p = _zero_path(64.0, 64_000)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ef = exp_functional(p, rho=1.0, a=1.0, T_cut=math.inf)
    assert ef.converged
    assert ef.value == pytest.approx(1.0, abs=1e-5)


def test_exp_functional_cap_warns():
    p = _zero_path(4.0, 400)
    with pytest.warns(RuntimeWarning):
        ef = exp_functional(p, rho=1.0, a=0.1, T_cut=math.inf)
    assert not ef.converged


def test_exp_functional_errors():
    p = _zero_path(1.0, 100)
    with pytest.raises(ValueError, match="diverges"):
        exp_functional(p, 1.0, 0.0, T_cut=math.inf)
    with pytest.raises(ValueError, match="horizon"):
        exp_functional(p, 1.0, 1.0, T_cut=2.0)
    big = FbmPath.from_values(0.6, 0.01, np.linspace(0, 1000, 101))
    with pytest.raises(OverflowError, match="t="):
        exp_functional(big, 1.0, 1.0)


def test_exp_functional_gaussian_correction():
    p = _zero_path(1.0, 1000, H=0.5)
    ef = exp_functional(p, rho=1.0, a=0.0, gaussian_correction=True, T_cut=1.0)
    # integrand e^{-s/2}
    assert ef.value == pytest.approx(2 * (1 - math.exp(-0.5)), abs=1e-6)


def test_exp_functional_step_halving():
    # Richardson self-consistency: the same path on its own grid and on the
    # 2x coarsened grid agree to 1e-4 relative
    for i in range(20):
        p = sample_fbm_path(0.6, 1.0, 20_000, derive_seed(3, i))
        fine = exp_functional(p, 0.2, 1.0).value
        coarse = exp_functional(p.coarsen(2), 0.2, 1.0).value
        assert abs(fine - coarse) <= 1e-4 * fine


def test_path_csv(tmp_path):
    p = sample_fbm_path(0.6, 1.0, 10, 4)
    f = tmp_path / "p.csv"
    p.to_csv(f)
    lines = f.read_text().splitlines()
    assert lines[0] == "n,t,B,dB,Bstar"
    assert len(lines) == 12
    row = lines[3].split(",")
    assert float(row[2]) == p.values[2]
    assert float(row[3]) == p.increments[2]
