"""Adversarial CSI search: the inner minimization over channel errors.

Given fixed beamformers and powers, find per-user error vectors inside the
derived norm balls that minimize the weighted sum rate.  The interference
terms are linearized at the previous iterate (their exact form is convex,
which is the wrong curvature for an upper bound on the denominator slack),
giving a majorizing surrogate whose exact objective is nonincreasing across
iterations.
"""

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .conic import ConicProgram
from . import rates

_LN2 = float(np.log(2.0))


@dataclass
class WorstCaseCsi:
    delta_near: np.ndarray          # (K, N_T)
    delta_far: np.ndarray
    slack_num: np.ndarray           # (2, K) numerator slacks, rows = (N, F)
    slack_den: np.ndarray           # (2, K) denominator slacks
    objective: float                # exact weighted sum rate at the minimizer
    iterations: int = 0
    objective_trace: list = field(default_factory=list)
    qos_feasible: bool = True
    qos_violations: list = field(default_factory=list)


def minimize_rate_over_csi(recon_near, recon_far, radii_near, radii_far,
                           caps_near, caps_far, w_mat, digital_vectors,
                           p_near, p_far, sigma2, omega_weight,
                           gamma_near=None, gamma_far=None,
                           include_qos: bool = False, tol: float = 1e-4,
                           max_iter: int = 30,
                           multistart: bool = True) -> WorstCaseCsi:
    """SCA descent on the worst-case weighted sum rate.

    caps_* are the (K, K) interference caps (victim i, beam j); they are
    suprema over the error balls, so they never exclude a feasible error,
    but they are kept as constraints to mirror the problem being solved.
    Internally everything is rescaled to noise units for conditioning.
    """
    recon_near = np.atleast_2d(recon_near)
    recon_far = np.atleast_2d(recon_far)
    k, n_t = recon_near.shape
    radii = [np.asarray(radii_near, dtype=float), np.asarray(radii_far, dtype=float)]
    recon = [recon_near, recon_far]
    p_user = [np.asarray(p_near, dtype=float), np.asarray(p_far, dtype=float)]
    caps = [np.asarray(caps_near, dtype=float), np.asarray(caps_far, dtype=float)]
    gammas = [None if g is None else np.broadcast_to(np.asarray(g, dtype=float), (k,))
              for g in (gamma_near, gamma_far)]
    weights = [omega_weight, 1.0 - omega_weight]
    scale = 1.0 / sigma2
    p_group = (p_user[0] + p_user[1]) * scale
    beams = w_mat @ digital_vectors.T           # (N_T, K)

    def exact_objective(d_near, d_far):
        return rates.evaluate(recon_near + d_near, recon_far + d_far, w_mat,
                              digital_vectors, p_user[0], p_user[1], sigma2,
                              omega_weight).total

    if all(r.max() == 0.0 for r in radii):
        zero = np.zeros((k, n_t), dtype=complex)
        rep = rates.evaluate(recon_near, recon_far, w_mat, digital_vectors,
                             p_user[0], p_user[1], sigma2, omega_weight)
        gains = np.stack([np.abs(np.conj(recon_near) @ beams).diagonal() ** 2,
                          np.abs(np.conj(recon_far) @ beams).diagonal() ** 2])
        num = np.stack([p_user[0], p_user[1]]) * scale * gains
        den = np.stack([rep.inter_near, rep.intra_far + rep.inter_far]) * scale + 1.0
        return WorstCaseCsi(zero, zero.copy(), num, den, rep.total, 0, [rep.total])

    prog = ConicProgram()
    dh = [prog.variable("dh_n", (k, n_t), complex=True),
          prog.variable("dh_f", (k, n_t), complex=True)]
    psi = [prog.variable("psi_n", k, nonneg=True),
           prog.variable("psi_f", k, nonneg=True)]
    psibar = [prog.variable("psibar_n", k), prog.variable("psibar_f", k)]

    # linearization anchors: g0[f][i, j] = (recon_i + dh_prev_i)^H W v_j
    g0 = [cp.Parameter((k, k), complex=True) for _ in range(2)]
    g0_sq = [cp.Parameter((k, k), nonneg=True) for _ in range(2)]
    den_anchor = [cp.Parameter(k, pos=True) for _ in range(2)]

    objective = 0
    for f in range(2):
        for i in range(k):
            g_row = [cp.conj(recon[f][i] + dh[f][i]) @ beams[:, j] for j in range(k)]
            prog.add(cp.norm(dh[f][i]) <= radii[f][i])
            prog.add(p_user[f][i] * scale * cp.square(cp.abs(g_row[i])) <= psi[f][i])
            interference = 0
            for j in range(k):
                if j == i:
                    continue
                lin = 2.0 * cp.real(cp.conj(g0[f][i, j]) * g_row[j]) - g0_sq[f][i, j]
                interference = interference + p_group[j] * lin
                if p_user[f][i] > 0 and np.isfinite(caps[f][i, j]):
                    bound = np.sqrt(max(caps[f][i, j], 0.0) / p_user[f][i])
                    prog.add(cp.abs(g_row[j]) <= bound)
            if f == 1:
                # far users keep the intra-group near-power term
                lin_ii = 2.0 * cp.real(cp.conj(g0[f][i, i]) * g_row[i]) - g0_sq[f][i, i]
                interference = interference + p_user[0][i] * scale * lin_ii
            prog.add(psibar[f][i] <= interference + 1.0, psibar[f][i] >= 1e-8)
            if include_qos and gammas[f] is not None:
                prog.add(psi[f][i] >= (2.0 ** gammas[f][i] - 1.0) * psibar[f][i])
        objective = objective + weights[f] * cp.sum(
            cp.multiply(den_anchor[f], psi[f] + psibar[f]) - cp.log(psibar[f]) / _LN2)
    prog.minimize(objective)

    # The objective is separable per user (each error vector only enters its
    # owner's rate), so seed the descent with the per-user best of a few
    # closed-form candidates: no error, scaled channel negation, and the
    # direct-beam nulling direction clipped to the ball.  Starting from zero
    # alone can be a fixed point of the linearization even when outright
    # channel nulling is feasible.
    def user_rate(f, i, dh_i):
        g = np.conj(recon[f][i] + dh_i) @ beams
        num = p_user[f][i] * scale * abs(g[i]) ** 2
        inter = sum(p_group[j] * abs(g[j]) ** 2 for j in range(k) if j != i)
        if f == 1:
            inter = inter + p_user[0][i] * scale * abs(g[i]) ** 2
        return np.log2(1.0 + num / (inter + 1.0))

    d_prev = [np.zeros((k, n_t), dtype=complex), np.zeros((k, n_t), dtype=complex)]
    for f in range(2) if multistart else ():
        for i in range(k):
            h_i = recon[f][i]
            r_i = radii[f][i]
            cands = [np.zeros(n_t, dtype=complex)]
            h_norm = np.linalg.norm(h_i)
            if h_norm > 0:
                cands.append(-min(1.0, r_i / h_norm) * h_i)
            b_i = beams[:, i]
            b_norm2 = np.vdot(b_i, b_i).real
            if b_norm2 > 0:
                nul = -(np.vdot(b_i, h_i) / b_norm2) * b_i
                n_norm = np.linalg.norm(nul)
                if n_norm > 0:
                    cands.append(min(1.0, r_i / n_norm) * nul)
            d_prev[f][i] = min(cands, key=lambda c: user_rate(f, i, c))
    prev_obj = exact_objective(d_prev[0], d_prev[1])
    trace = [prev_obj]
    qos_feasible = True
    iterations = 0
    # the seeded adversary already drove the rate to (numerical) zero: the
    # descent loop cannot improve on that, so skip the conic solves
    if prev_obj <= 1e-9:
        max_iter = 0
    for it in range(max_iter):
        iterations = it + 1
        for f in range(2):
            g_prev = np.conj(recon[f] + d_prev[f]) @ beams
            g0[f].value = g_prev
            g0_sq[f].value = np.abs(g_prev) ** 2
            # tangent slope of log2 at the previous total (psi + psibar)
            num_prev = p_user[f] * scale * np.abs(np.diag(g_prev)) ** 2
            inter_prev = np.array([np.sum(np.delete(p_group * np.abs(g_prev[i]) ** 2, i))
                                   for i in range(k)])
            if f == 1:
                inter_prev = inter_prev + p_user[0] * scale * np.abs(np.diag(g_prev)) ** 2
            den_anchor[f].value = 1.0 / (_LN2 * np.maximum(num_prev + inter_prev + 1.0, 1e-12))
        res = prog.solve()
        if res.status != "optimal":
            if include_qos:
                qos_feasible = False
                break
            break
        cand = [np.asarray(res.values["dh_n"]), np.asarray(res.values["dh_f"])]
        # numerically inaccurate solves can step outside the error balls;
        # clip back so the exact objective is always evaluated at a
        # feasible adversary
        for f in range(2):
            nrm = np.linalg.norm(cand[f], axis=1)
            over = nrm > radii[f]
            if np.any(over):
                shrink = np.where(over, radii[f] / np.maximum(nrm, 1e-300), 1.0)
                cand[f] = cand[f] * shrink[:, None]
        obj = exact_objective(cand[0], cand[1])
        if obj <= prev_obj:
            d_prev = cand
        if abs(obj - prev_obj) <= tol * max(abs(prev_obj), 1e-9):
            prev_obj = min(obj, prev_obj)
            trace.append(prev_obj)
            break
        prev_obj = min(obj, prev_obj)
        trace.append(prev_obj)

    if include_qos and not qos_feasible:
        # name the violators by re-solving without the QoS rows
        relaxed = minimize_rate_over_csi(recon_near, recon_far, radii_near,
                                         radii_far, caps_near, caps_far,
                                         w_mat, digital_vectors, p_near, p_far,
                                         sigma2, omega_weight, gamma_near,
                                         gamma_far, include_qos=False,
                                         tol=tol, max_iter=max_iter,
                                         multistart=multistart)
        violations = []
        for f, tag in enumerate("NF"):
            need = 2.0 ** (gammas[f] if gammas[f] is not None else np.zeros(k)) - 1.0
            sinr = relaxed.slack_num[f] / relaxed.slack_den[f]
            for i in range(k):
                if sinr[i] < need[i]:
                    violations.append((tag, i))
        relaxed.qos_feasible = False
        relaxed.qos_violations = violations
        return relaxed

    rep = rates.evaluate(recon_near + d_prev[0], recon_far + d_prev[1], w_mat,
                         digital_vectors, p_user[0], p_user[1], sigma2,
                         omega_weight)
    gains = [np.abs(np.einsum("kn,nk->k", np.conj(recon[f] + d_prev[f]), beams)) ** 2
             for f in range(2)]
    num = np.stack([p_user[0], p_user[1]]) * scale * np.stack(gains)
    den = np.stack([rep.inter_near, rep.intra_far + rep.inter_far]) * scale + 1.0
    return WorstCaseCsi(d_prev[0], d_prev[1], num, den, prev_obj, iterations,
                        trace, qos_feasible)
