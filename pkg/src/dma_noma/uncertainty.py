"""Position-error to CSI-error bound machinery.

A user's true position lies in a ball of radius eps_dp around its estimate.
The induced LoS channel mismatch has squared norm (zeta0/d0^alpha) * Xi(dp),
where Xi sums amplitude and phase mismatch over the array elements.  This
module maximizes a concave-quadratic-minus-quartic surrogate of Xi over the
ball (via SCA with multistart) and converts the optimum into per-user CSI
error radii and per-pair interference caps that the robust beamforming
stages consume.
"""

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .conic import ConicProgram
from .errors import InfeasibleUncertaintyError, OptimizationFailureError
from .geometry import ArrayGeometry, db_to_linear, element_distances


def xi_exact(geom: ArrayGeometry, est_pos, delta_p, alpha: float) -> float:
    """Channel mismatch functional: sum over elements of
    (d_t^-a + d_e^-a) - 2 (d_t d_e)^(-a/2) cos(2 pi (d_t - d_e) / lam),
    with d_e the distance from the estimate and d_t from the shifted point.
    Equals ||h_los(true) - h_los(est)||^2 up to the path-loss reference
    constant.
    """
    est_pos = np.asarray(est_pos, dtype=float)
    d_est = element_distances(geom, est_pos)
    d_true = element_distances(geom, est_pos + np.asarray(delta_p, dtype=float))
    theta = d_true - d_est
    return float(np.sum(d_true**-alpha + d_est**-alpha
                        - 2.0 * (d_true * d_est) ** (-alpha / 2.0)
                        * np.cos(2.0 * np.pi * theta / geom.wavelength)))


def unit_directions(geom: ArrayGeometry, est_pos) -> np.ndarray:
    """(N_T, 3) unit vectors from the estimate towards each element."""
    est_pos = np.asarray(est_pos, dtype=float)
    diff = geom.element_coords - est_pos[None, :]
    d = element_distances(geom, est_pos)
    return diff / d[:, None]


def theta_linearized(geom: ArrayGeometry, est_pos, delta_p) -> np.ndarray:
    """First-order distance change per element: xi^T dp with xi the unit
    direction from the estimated position to the element."""
    # distance grows when moving the *user* opposite to the element direction
    return -unit_directions(geom, est_pos) @ np.asarray(delta_p, dtype=float)


def build_bound_matrices(geom: ArrayGeometry, est_pos, pos_err_radius: float,
                         alpha: float, phase_factor: float | None = None):
    """Assemble the 3x3 quadratic/quartic bound matrices (Omega, Upsilon).

    Omega collects (d-eps)^(-a/4) d^(-a/4) xi xi^T outer products (it feeds
    the quartic penalty); Upsilon combines the amplitude-mismatch Hessian
    blocks with a phase-curvature xi xi^T term.  ``phase_factor`` defaults to
    4 pi^2 / lam^2 and is exposed because the second-order cosine expansion
    alone would give half of it.
    """
    d = element_distances(geom, np.asarray(est_pos, dtype=float))
    if pos_err_radius >= d.min():
        raise InfeasibleUncertaintyError(
            f"position error radius {pos_err_radius} reaches the array "
            f"(min element distance {d.min():.3g})")
    if phase_factor is None:
        phase_factor = 4.0 * np.pi**2 / geom.wavelength**2
    xi = unit_directions(geom, est_pos)               # (N_T, 3)
    outer = xi[:, :, None] * xi[:, None, :]           # (N_T, 3, 3)
    eye = np.eye(3)

    omega_w = (d - pos_err_radius) ** (-alpha / 4.0) * d ** (-alpha / 4.0)
    omega = np.einsum("n,nij->ij", omega_w, outer)

    # Per-element Hessian of d^-a in the user position is
    # a(a+2) d^(-a-2) xi xi^T - a d^(-a-2) I; Upsilon folds 1/2 of the
    # order-alpha block with the d^(-a/2)-weighted order-alpha/2 block,
    # whose isotropic parts cancel exactly.
    g_alpha = (np.einsum("n,nij->ij", alpha * (alpha + 2.0) * d ** (-alpha - 2.0), outer)
               - np.sum(alpha * d ** (-alpha - 2.0)) * eye)
    half = alpha / 2.0
    g_half_w = np.einsum("n,nij->ij",
                         d ** (-half) * half * (half + 2.0) * d ** (-half - 2.0),
                         outer) - np.sum(d ** (-half) * half * d ** (-half - 2.0)) * eye
    upsilon = 0.5 * g_alpha - g_half_w
    phase_w = phase_factor * (d - pos_err_radius) ** (-alpha / 4.0) * d ** (-alpha / 2.0)
    upsilon = upsilon + np.einsum("n,nij->ij", phase_w, outer)

    omega = 0.5 * (omega + omega.T)
    upsilon = 0.5 * (upsilon + upsilon.T)
    return omega, upsilon


def surrogate_value(delta_p, omega, upsilon, gamma_quartic) -> float:
    """Quadratic-minus-quartic relaxation objective at a given offset."""
    dp = np.asarray(delta_p, dtype=float)
    quad = dp @ upsilon @ dp
    quart = dp @ omega @ dp
    return float(quad - gamma_quartic * quart**2)


def solve_worst_position(geom: ArrayGeometry, est_pos, pos_err_radius: float,
                         alpha: float, tol: float = 1e-4, max_iter: int = 50,
                         phase_factor: float | None = None, n_starts: int = 6,
                         rng_seed: int = 0):
    """Maximize the Xi surrogate over the position-error ball.

    SCA on the relaxation: maximize dp' Upsilon dp - g*(dp' Omega dp)^2 with
    the quadratic Upsilon form linearized at the previous iterate and the
    quartic kept through an epigraph scalar.  Multistart over boundary
    directions guards against the nonconcave landscape.  Returns
    (xi_max, worst_pos_err); xi_max >= 0 always (dp = 0 achieves 0).
    """
    est_pos = np.asarray(est_pos, dtype=float)
    if pos_err_radius == 0.0:
        return 0.0, np.zeros(3)
    omega, upsilon = build_bound_matrices(geom, est_pos, pos_err_radius, alpha,
                                          phase_factor)
    gamma_q = 4.0 * np.pi**4 / (3.0 * geom.wavelength**4 * geom.n_elements)

    # candidate starting directions: radially outward, Upsilon eigvecs,
    # generalized (Upsilon, Omega) eigvecs, a Fibonacci sphere grid, random
    rng = np.random.default_rng(rng_seed)
    dirs = []
    radial = est_pos / np.linalg.norm(est_pos) if np.linalg.norm(est_pos) > 0 \
        else np.array([0.0, 1.0, 0.0])
    dirs.append(radial)
    evals, evecs = np.linalg.eigh(upsilon)
    dirs.append(evecs[:, -1])
    try:
        chol = np.linalg.cholesky(omega + 1e-14 * np.trace(omega) * np.eye(3))
        inv = np.linalg.inv(chol)
        _, gvecs = np.linalg.eigh(inv @ upsilon @ inv.T)
        for col in range(3):
            u = inv.T @ gvecs[:, col]
            dirs.append(u / np.linalg.norm(u))
    except np.linalg.LinAlgError:
        pass
    for _ in range(n_starts):
        v = rng.standard_normal(3)
        dirs.append(v / np.linalg.norm(v))
    dirs.extend(_fibonacci_directions(512))

    # each direction admits a closed-form radial maximizer of
    # f(t u) = t^2 (u'Yu) - g t^4 (u'Ou)^2, clipped to the ball
    best_val, best_dp = 0.0, np.zeros(3)
    for direction in dirs:
        val, dp = _radial_optimum(direction, omega, upsilon, gamma_q,
                                  pos_err_radius)
        if val > best_val:
            best_val, best_dp = val, dp

    # SCA from the handful of seeded starts, then a projected-gradient polish
    # of the overall incumbent to squeeze out the last digits
    for direction in dirs[:min(len(dirs), n_starts + 5)]:
        val, dp = _sca_from(direction * pos_err_radius, omega, upsilon,
                            gamma_q, pos_err_radius, tol, max_iter)
        if val > best_val:
            best_val, best_dp = val, dp
    val, dp = _polish(best_dp, omega, upsilon, gamma_q, pos_err_radius)
    if val > best_val:
        best_val, best_dp = val, dp
    return best_val, best_dp


def _fibonacci_directions(count: int) -> np.ndarray:
    """Near-uniform unit vectors on the sphere (golden-angle spiral)."""
    idx = np.arange(count) + 0.5
    phi = np.pi * (1.0 + np.sqrt(5.0)) * idx
    z = 1.0 - 2.0 * idx / count
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _radial_optimum(direction, omega, upsilon, gamma_q, radius):
    """Exact maximizer of the surrogate along a ray, clipped to the ball."""
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    a = float(u @ upsilon @ u)
    b = float(u @ omega @ u)
    if a <= 0.0:
        return 0.0, np.zeros(3)
    if b <= 0.0:
        t = radius
    else:
        t = min(radius, np.sqrt(a / (2.0 * gamma_q * b * b)))
    dp = t * u
    return surrogate_value(dp, omega, upsilon, gamma_q), dp


def _polish(dp0, omega, upsilon, gamma_q, radius, max_iter: int = 200):
    """Projected gradient ascent with backtracking inside the ball."""
    dp = np.asarray(dp0, dtype=float).copy()
    val = surrogate_value(dp, omega, upsilon, gamma_q)
    step = max(radius, 1e-6)
    for _ in range(max_iter):
        grad = 2.0 * (upsilon @ dp) \
            - 4.0 * gamma_q * float(dp @ omega @ dp) * (omega @ dp)
        gnorm = np.linalg.norm(grad)
        if gnorm < 1e-14:
            break
        improved = False
        while step > 1e-16:
            cand = dp + step * grad
            norm = np.linalg.norm(cand)
            if norm > radius:
                cand = cand * (radius / norm)
            cand_val = surrogate_value(cand, omega, upsilon, gamma_q)
            if cand_val > val + 1e-16:
                dp, val = cand, cand_val
                step *= 2.0
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return val, dp


def _sca_from(dp0, omega, upsilon, gamma_q, radius, tol, max_iter):
    prog = ConicProgram()
    dp = prog.variable("dp", 3)
    w = prog.variable("w")          # epigraph of the quartic base quadratic
    grad = cp.Parameter(3)             # 2 Upsilon dp_prev
    offset = cp.Parameter()            # dp_prev' Upsilon dp_prev
    prog.add(cp.quad_form(dp, cp.psd_wrap(omega)) <= w,
             cp.norm(dp) <= radius)
    prog.maximize(grad @ dp - offset - gamma_q * cp.square(w))

    def set_point(point):
        grad.value = 2.0 * (upsilon @ point)
        offset.value = float(point @ upsilon @ point)

    set_point(np.asarray(dp0, dtype=float))
    prev_val = surrogate_value(dp0, omega, upsilon, gamma_q)
    best_val, best_dp = prev_val, np.asarray(dp0, dtype=float)
    for _ in range(max_iter):
        res = prog.solve()
        if res.status != "optimal":
            break
        cur_dp = np.asarray(res.values["dp"], dtype=float)
        val = surrogate_value(cur_dp, omega, upsilon, gamma_q)
        if val > best_val:
            best_val, best_dp = val, cur_dp
        if abs(val - prev_val) <= tol * max(abs(prev_val), 1e-12):
            break
        prev_val = val
        set_point(cur_dp)
    return best_val, best_dp


def csi_error_radius(xi_max: float, kappa_rician: float, ref_constant: float,
                     recon_los=None, nlos_norm: float = 0.0,
                     fieldtag: str = "N") -> float:
    """Convert the Xi surrogate optimum into a CSI error radius.

    ref_constant is the path-loss reference zeta0_lin / d0^alpha so that
    ||h_los - h_los_hat|| = sqrt(ref_constant * Xi).  Far users pick up the
    Rician amplitude mismatch of the reconstructed LoS channel plus the
    bounded NLoS term.
    """
    los_weight = np.sqrt(kappa_rician / (1.0 + kappa_rician))
    base = los_weight * np.sqrt(max(ref_constant * xi_max, 0.0))
    if fieldtag == "N":
        return float(base)
    return float(base + (1.0 - los_weight) * np.linalg.norm(recon_los)
                 + nlos_norm / np.sqrt(1.0 + kappa_rician))


@dataclass(frozen=True)
class UserUncertainty:
    pos_err_radius: float
    xi_max: float
    worst_pos_err: np.ndarray
    omega_mat: np.ndarray
    upsilon_mat: np.ndarray
    csi_err_radius: float


@dataclass(frozen=True)
class UncertaintyBudget:
    near: tuple    # K UserUncertainty
    far: tuple     # K UserUncertainty

    @property
    def radii_near(self) -> np.ndarray:
        return np.array([u.csi_err_radius for u in self.near])

    @property
    def radii_far(self) -> np.ndarray:
        return np.array([u.csi_err_radius for u in self.far])


def compute_budget(geom: ArrayGeometry, users, channels, zeta0_db: float,
                   d0: float, alpha: float, tol: float = 1e-4,
                   phase_factor: float | None = None) -> UncertaintyBudget:
    """Solve the per-user worst-position problems and fill in CSI radii."""
    ref_constant = db_to_linear(zeta0_db) / d0**alpha

    def one(user, chan):
        if user.pos_err_radius == 0.0:
            omega = np.zeros((3, 3))
            upsilon = np.zeros((3, 3))
            xi_max, worst = 0.0, np.zeros(3)
        else:
            omega, upsilon = build_bound_matrices(geom, user.est_pos,
                                                  user.pos_err_radius, alpha,
                                                  phase_factor)
            xi_max, worst = solve_worst_position(geom, user.est_pos,
                                                 user.pos_err_radius, alpha,
                                                 tol=tol,
                                                 phase_factor=phase_factor)
        radius = csi_error_radius(xi_max, user.rician_factor, ref_constant,
                                  recon_los=chan.recon_los,
                                  nlos_norm=user.nlos_norm,
                                  fieldtag=user.fieldtag)
        return UserUncertainty(user.pos_err_radius, xi_max, worst, omega,
                               upsilon, radius)

    near = tuple(one(u, c) for u, c in zip(users.near_users, channels.near))
    far = tuple(one(u, c) for u, c in zip(users.far_users, channels.far))
    return UncertaintyBudget(near, far)


def interference_caps(radii: np.ndarray, recon: np.ndarray, w_mat: np.ndarray,
                      digital_vectors: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """Per-(victim, beam) interference caps.

    cap[i, j] = P_i * (|h_hat_i^H W v_j| + eps_i ||W v_j||)^2 — the exact
    supremum of the victim-power-weighted cross gain over the CSI error ball
    (Cauchy-Schwarz is tight at the aligned error), so the caps never cut
    into the adversary's feasible set.
    """
    k = digital_vectors.shape[0]
    beams = w_mat @ digital_vectors.T           # (N_T, K)
    caps = np.zeros((recon.shape[0], k))
    for i in range(recon.shape[0]):
        if radii[i] == 0.0:
            # no adversary freedom: the robust cross-gain constraint reduces
            # to the nominal problem, which carries no interference cap
            caps[i, :] = np.inf
            continue
        for j in range(k):
            nominal = abs(np.vdot(recon[i], beams[:, j]))
            caps[i, j] = powers[i] * (nominal + radii[i] * np.linalg.norm(beams[:, j]))**2
    return caps
