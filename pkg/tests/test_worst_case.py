import numpy as np
import pytest

from dma_noma import rates, uncertainty, worst_case
from conftest import random_instance


def _caps(radii, recon, w, vs, p):
    return uncertainty.interference_caps(radii, recon, w, vs, p)


def _solve(inst, radii_n, radii_f, **kw):
    ch_n, ch_f, w, vs, p_n, p_f, sigma2, omega = inst
    return worst_case.minimize_rate_over_csi(
        ch_n, ch_f, radii_n, radii_f,
        _caps(radii_n, ch_n, w, vs, p_n), _caps(radii_f, ch_f, w, vs, p_f),
        w, vs, p_n, p_f, sigma2, omega, **kw)


def test_zero_radii_returns_nominal():
    rng = np.random.default_rng(0)
    inst = random_instance(rng)
    res = _solve(inst, np.zeros(2), np.zeros(2))
    nominal = rates.evaluate(inst[0], inst[1], inst[2], inst[3], inst[4],
                             inst[5], inst[6], inst[7]).total
    assert res.objective == pytest.approx(nominal, rel=1e-12)
    assert np.all(res.delta_near == 0)
    assert np.all(res.delta_far == 0)


def test_objective_below_nominal_and_feasible():
    rng = np.random.default_rng(1)
    inst = random_instance(rng)
    radii_n = np.full(2, 5e-3)
    radii_f = np.full(2, 5e-3)
    res = _solve(inst, radii_n, radii_f)
    nominal = rates.evaluate(inst[0], inst[1], inst[2], inst[3], inst[4],
                             inst[5], inst[6], inst[7]).total
    assert res.objective <= nominal + 1e-9
    assert np.all(np.linalg.norm(res.delta_near, axis=1) <= radii_n + 1e-9)
    assert np.all(np.linalg.norm(res.delta_far, axis=1) <= radii_f + 1e-9)
    # the reported objective is the exact rate at the returned errors
    exact = rates.evaluate(inst[0] + res.delta_near, inst[1] + res.delta_far,
                           inst[2], inst[3], inst[4], inst[5], inst[6],
                           inst[7]).total
    assert res.objective == pytest.approx(exact, rel=1e-12)


def test_dominates_sampled_errors():
    rng = np.random.default_rng(2)
    inst = random_instance(rng)
    ch_n, ch_f, w, vs, p_n, p_f, sigma2, omega = inst
    radii_n = np.full(2, 4e-3)
    radii_f = np.full(2, 4e-3)
    res = _solve(inst, radii_n, radii_f)
    n_t = ch_n.shape[1]
    best = np.inf
    for _ in range(300):
        dn = rng.standard_normal((2, n_t)) + 1j * rng.standard_normal((2, n_t))
        dn *= (radii_n * rng.uniform(size=2) / np.linalg.norm(dn, axis=1))[:, None]
        df = rng.standard_normal((2, n_t)) + 1j * rng.standard_normal((2, n_t))
        df *= (radii_f * rng.uniform(size=2) / np.linalg.norm(df, axis=1))[:, None]
        best = min(best, rates.evaluate(ch_n + dn, ch_f + df, w, vs, p_n, p_f,
                                        sigma2, omega).total)
    assert res.objective <= best + 1e-3 * max(1.0, abs(best))


def test_trace_nonincreasing():
    rng = np.random.default_rng(3)
    inst = random_instance(rng)
    res = _solve(inst, np.full(2, 3e-3), np.full(2, 3e-3))
    tr = res.objective_trace
    assert all(b <= a + 1e-9 for a, b in zip(tr, tr[1:]))


def test_radius_above_channel_norm_nulls_rate():
    # an error ball that contains -channel lets the adversary null everything
    rng = np.random.default_rng(4)
    inst = random_instance(rng)
    ch_n, ch_f = inst[0], inst[1]
    radii_n = np.linalg.norm(ch_n, axis=1) * 1.5
    radii_f = np.linalg.norm(ch_f, axis=1) * 1.5
    res = _solve(inst, radii_n, radii_f)
    assert res.objective <= 1e-9
