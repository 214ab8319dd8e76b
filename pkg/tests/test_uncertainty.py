import numpy as np
import pytest

from dma_noma import geometry, uncertainty
from dma_noma.errors import InfeasibleUncertaintyError
from dma_noma.geometry import build_geometry, los_channel

LAM = 3.0e8 / 60e9
ALPHA = 2.2
POS = np.array([10.0, 2.0, 0.0])


def _geom(n=16):
    rows = int(np.sqrt(n))
    return build_geometry(rows, n // rows, LAM, 4)


def test_xi_exact_zero_at_origin():
    assert uncertainty.xi_exact(_geom(), POS, np.zeros(3), ALPHA) == 0.0


def test_xi_matches_channel_difference():
    # || h(true) - h(est) ||^2 == ref_constant * Xi(dp) exactly
    geom = _geom()
    rng = np.random.default_rng(0)
    ref = geometry.db_to_linear(-30.0) / 1.0 ** ALPHA
    for _ in range(20):
        dp = rng.standard_normal(3)
        dp = dp / np.linalg.norm(dp) * 0.1 * rng.uniform()
        diff = los_channel(geom, POS + dp, -30.0, 1.0, ALPHA) \
            - los_channel(geom, POS, -30.0, 1.0, ALPHA)
        xi = uncertainty.xi_exact(geom, POS, dp, ALPHA)
        assert np.linalg.norm(diff) ** 2 == pytest.approx(ref * xi, rel=1e-10)


def test_theta_linearized_properties():
    geom = _geom()
    assert np.allclose(uncertainty.theta_linearized(geom, POS, np.zeros(3)), 0.0)
    # orthogonal displacement produces (to first order) no distance change
    u = POS / np.linalg.norm(POS)
    perp = np.cross(u, [0.0, 0.0, 1.0])
    perp /= np.linalg.norm(perp)
    # exact change is O(|dp|^2) when dp is orthogonal to the line of sight
    for scale in (1e-3, 1e-4):
        d0 = geometry.element_distances(geom, POS)
        d1 = geometry.element_distances(geom, POS + perp * scale)
        lin = uncertainty.theta_linearized(geom, POS, perp * scale)
        assert np.max(np.abs((d1 - d0) - lin)) <= 5.0 * scale ** 2


def test_theta_linearization_second_order():
    geom = _geom()
    rng = np.random.default_rng(1)
    dp = rng.standard_normal(3)
    dp /= np.linalg.norm(dp)
    ratios = []
    for scale in (1e-2, 1e-3, 1e-4):
        d0 = geometry.element_distances(geom, POS)
        d1 = geometry.element_distances(geom, POS + dp * scale)
        lin = uncertainty.theta_linearized(geom, POS, dp * scale)
        ratios.append(np.max(np.abs((d1 - d0) - lin)) / scale ** 2)
    assert max(ratios) <= 10.0 * min(ratios) + 1e-9


def test_upsilon_dominates_exact_curvature():
    """The quadratic bound matrix majorizes the curvature of the exact
    mismatch functional at the origin (its distance weights are relaxed
    upward), so the second difference never exceeds the quadratic form."""
    geom = _geom(4)
    omega, upsilon = uncertainty.build_bound_matrices(geom, POS, 0.01, ALPHA)
    h = 1e-4
    for direction in (np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]),
                      POS / np.linalg.norm(POS)):
        fdd = (uncertainty.xi_exact(geom, POS, h * direction, ALPHA)
               + uncertainty.xi_exact(geom, POS, -h * direction, ALPHA)) / h ** 2
        quad = 2.0 * direction @ upsilon @ direction
        assert quad >= fdd * (1.0 - 1e-6)


def test_radius_reaching_array_raises():
    geom = _geom()
    with pytest.raises(InfeasibleUncertaintyError):
        uncertainty.build_bound_matrices(geom, np.array([0.05, 0.0, 0.0]),
                                         0.1, ALPHA)


def test_worst_position_dominates_samples():
    geom = _geom()
    eps = 0.1
    xi_max, dp_star = uncertainty.solve_worst_position(geom, POS, eps, ALPHA)
    omega, upsilon = uncertainty.build_bound_matrices(geom, POS, eps, ALPHA)
    gamma_q = 4.0 * np.pi ** 4 / (3.0 * geom.wavelength ** 4 * geom.n_elements)
    assert np.linalg.norm(dp_star) <= eps + 1e-9
    rng = np.random.default_rng(0)
    for _ in range(500):
        v = rng.standard_normal(3)
        v = v / np.linalg.norm(v) * eps * rng.uniform() ** (1.0 / 3.0)
        val = uncertainty.surrogate_value(v, omega, upsilon, gamma_q)
        assert val <= xi_max + 1e-6 * max(1.0, abs(xi_max))


def test_worst_position_monotone_in_radius():
    geom = _geom()
    vals = [uncertainty.solve_worst_position(geom, POS, eps, ALPHA)[0]
            for eps in (0.0, 0.02, 0.05, 0.1)]
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))


def test_csi_error_radius_fields():
    base = uncertainty.csi_error_radius(4.0, 20.0, 1e-3)
    w = np.sqrt(20.0 / 21.0)
    assert base == pytest.approx(w * np.sqrt(1e-3 * 4.0))
    recon = np.ones(4) * 0.01
    far = uncertainty.csi_error_radius(4.0, 20.0, 1e-3, recon_los=recon,
                                       nlos_norm=1e-4, fieldtag="F")
    expected = w * np.sqrt(4e-3) + (1.0 - w) * np.linalg.norm(recon) \
        + 1e-4 / np.sqrt(21.0)
    assert far == pytest.approx(expected)


def test_interference_caps_dominate_samples():
    rng = np.random.default_rng(2)
    k, n_t, n_f = 2, 8, 4
    recon = (rng.standard_normal((k, n_t)) + 1j * rng.standard_normal((k, n_t))) * 1e-2
    w = np.exp(1j * rng.uniform(0, 2 * np.pi, (n_t, n_f)))
    vs = rng.standard_normal((k, n_f)) + 1j * rng.standard_normal((k, n_f))
    vs /= np.linalg.norm(vs, axis=1, keepdims=True)
    powers = np.array([0.2, 0.3])
    radii = np.array([1e-3, 2e-3])
    caps = uncertainty.interference_caps(radii, recon, w, vs, powers)
    beams = w @ vs.T
    for _ in range(200):
        for i in range(k):
            d = rng.standard_normal(n_t) + 1j * rng.standard_normal(n_t)
            d = d / np.linalg.norm(d) * radii[i] * rng.uniform()
            for j in range(k):
                val = powers[i] * abs(np.vdot(recon[i] + d, beams[:, j])) ** 2
                assert val <= caps[i, j] * (1.0 + 1e-9)


def test_interference_caps_zero_radius_unbounded():
    rng = np.random.default_rng(3)
    recon = rng.standard_normal((2, 8)) + 1j * rng.standard_normal((2, 8))
    w = np.exp(1j * rng.uniform(0, 2 * np.pi, (8, 4)))
    vs = np.eye(2, 4) + 0j
    caps = uncertainty.interference_caps(np.zeros(2), recon, w, vs,
                                         np.array([0.1, 0.1]))
    assert np.all(np.isinf(caps))


def test_compute_budget_zero_radius_near_user():
    geom = _geom()
    near = [geometry.UserState(0, "N", POS, POS, 0.0, 20.0)]
    far = [geometry.UserState(0, "F", POS * 1.5, POS * 1.5, 0.0, 20.0, 1e-4)]
    users = geometry.make_user_ensemble(near, far, warn_on_field_mismatch=False)
    chans = geometry.synthesize_channels(geom, users, -30.0, 1.0, ALPHA, rng_seed=0)
    budget = uncertainty.compute_budget(geom, users, chans, -30.0, 1.0, ALPHA)
    assert budget.radii_near[0] == 0.0
    # the far user keeps the Rician/NLoS mismatch even with a perfect position
    assert budget.radii_far[0] > 0.0
