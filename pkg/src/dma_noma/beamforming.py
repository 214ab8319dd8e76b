"""Beamformer updates at fixed worst-case CSI.

Digital vectors are updated through a semidefinite relaxation over the
per-group Gram matrices, with the denominator part of each log term
linearized (SCA) and the rank-1 solution recovered by eigendecomposition
plus Gaussian randomization.  The per-element amplitudes are updated with
the complex weights vectorized as fixed-phase times amplitude and the
numerator gains minorized at the previous amplitude iterate.
"""

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .conic import ConicProgram
from . import rates

_LN2 = float(np.log(2.0))


@dataclass
class DigitalUpdate:
    digital_vectors: np.ndarray     # (K, N_f), unit norm rows
    gram_matrices: list             # K Hermitian PSD matrices, trace 1
    sdr_objective: float            # relaxed objective at the last iterate
    extraction_gap: float           # exact objective / sdr objective
    objective: float                # exact weighted sum rate of the output
    iterations: int = 0
    qos_feasible: bool = True


@dataclass
class DmaUpdate:
    amplitudes: np.ndarray          # (N_T, N_f) in [0, 1]
    objective: float
    iterations: int = 0
    qos_feasible: bool = True


def _exact_objective(eff_near, eff_far, w_mat, vectors, p_near, p_far,
                     sigma2, omega_weight):
    return rates.evaluate(eff_near, eff_far, w_mat, vectors, p_near, p_far,
                          sigma2, omega_weight).total


def _interference_anchor(gains, p_group_s, p_near_s, f):
    """Scaled denominator values (interference + 1) per user for field f."""
    k = gains.shape[0]
    inter = np.array([np.sum(np.delete(p_group_s * gains[i], i)) for i in range(k)])
    if f == 1:
        inter = inter + p_near_s * np.diag(gains)
    return inter + 1.0


def update_digital(eff_near, eff_far, w_mat, p_near, p_far, caps_near,
                   caps_far, sigma2, omega_weight, prev_vectors,
                   gamma_near=None, gamma_far=None, include_qos: bool = True,
                   tol: float = 1e-4, max_iter: int = 25,
                   n_randomizations: int = 30, rng_seed: int = 0) -> DigitalUpdate:
    """SDR + SCA update of the per-group digital vectors."""
    eff = [np.atleast_2d(eff_near), np.atleast_2d(eff_far)]
    k = eff[0].shape[0]
    n_f = w_mat.shape[1]
    scale = 1.0 / sigma2
    p_user = [np.asarray(p_near, dtype=float), np.asarray(p_far, dtype=float)]
    p_group_s = (p_user[0] + p_user[1]) * scale
    caps = [np.asarray(caps_near, dtype=float), np.asarray(caps_far, dtype=float)]
    gammas = [None if g is None else np.broadcast_to(np.asarray(g, dtype=float), (k,))
              for g in (gamma_near, gamma_far)]
    weights = [omega_weight, 1.0 - omega_weight]

    # effective-gain matrices Phi[f][i] = (W^H h)(W^H h)^H
    b = [np.conj(eff[f]) @ w_mat for f in range(2)]   # (K, N_f) rows b_i^H = h_i^H W
    phi = [[np.outer(b[f][i].conj(), b[f][i]) for i in range(k)] for f in range(2)]

    def build(with_qos):
        prog = ConicProgram()
        grams = [prog.variable(f"V{i}", (n_f, n_f), hermitian=True) for i in range(k)]
        psi = [prog.variable("psi_n", k, nonneg=True),
               prog.variable("psi_f", k, nonneg=True)]
        psibar = [prog.variable("psibar_n", k), prog.variable("psibar_f", k)]
        den_anchor = [cp.Parameter(k, pos=True) for _ in range(2)]
        for i in range(k):
            prog.add(grams[i] >> 0, cp.real(cp.trace(grams[i])) == 1.0)
        objective = 0
        for f in range(2):
            for i in range(k):
                tr = [cp.real(cp.trace(phi[f][i] @ grams[j])) for j in range(k)]
                prog.add(psi[f][i] <= p_user[f][i] * scale * tr[i])
                inter = sum(p_group_s[j] * tr[j] for j in range(k) if j != i)
                if f == 1:
                    inter = inter + p_user[0][i] * scale * tr[i]
                prog.add(psibar[f][i] >= inter + 1.0)
                for j in range(k):
                    if j != i and np.isfinite(caps[f][i, j]):
                        prog.add(p_user[f][i] * scale * tr[j] <= caps[f][i, j] * scale)
                if with_qos and gammas[f] is not None:
                    prog.add(psi[f][i] >= (2.0 ** gammas[f][i] - 1.0) * psibar[f][i])
            objective = objective + weights[f] * cp.sum(
                cp.log(psi[f] + psibar[f]) / _LN2 - cp.multiply(den_anchor[f], psibar[f]))
        prog.maximize(objective)
        return prog, grams, psi, psibar, den_anchor

    qos_feasible = True
    prog, grams, psi, psibar, den_anchor = build(include_qos)
    vectors = np.array(prev_vectors, dtype=complex)
    prev_obj = None
    iterations = 0
    solved_grams = None
    sdr_objective = None
    anchors = [None, None]
    for f in range(2):
        gains = np.abs(np.conj(eff[f]) @ (w_mat @ vectors.T)) ** 2
        anchors[f] = _interference_anchor(gains, p_group_s, p_user[0] * scale, f)
    for it in range(max_iter):
        iterations = it + 1
        for f in range(2):
            den_anchor[f].value = 1.0 / (_LN2 * np.maximum(anchors[f], 1e-12))
        res = prog.solve()
        if res.status != "optimal":
            if include_qos and qos_feasible:
                qos_feasible = False
                prog, grams, psi, psibar, den_anchor = build(False)
                prev_obj = None
                continue
            break
        solved_grams = [np.asarray(res.values[f"V{i}"]) for i in range(k)]
        psibar_vals = [np.maximum(np.asarray(res.values["psibar_n"]), 1e-12),
                       np.maximum(np.asarray(res.values["psibar_f"]), 1e-12)]
        psi_vals = [np.maximum(np.asarray(res.values["psi_n"]), 0.0),
                    np.maximum(np.asarray(res.values["psi_f"]), 0.0)]
        sdr_objective = sum(weights[f] * np.sum(np.log2(1.0 + psi_vals[f] / psibar_vals[f]))
                            for f in range(2))
        anchors = [np.maximum(psibar_vals[f], 1e-12) for f in range(2)]
        if prev_obj is not None and abs(sdr_objective - prev_obj) <= tol * max(abs(prev_obj), 1e-9):
            break
        prev_obj = sdr_objective

    if solved_grams is None:
        obj = _exact_objective(eff[0], eff[1], w_mat, vectors, p_user[0],
                               p_user[1], sigma2, omega_weight)
        return DigitalUpdate(vectors, [np.outer(v, v.conj()) for v in vectors],
                             obj, 1.0, obj, iterations, qos_feasible)

    vectors, obj = _extract_vectors(solved_grams, np.array(prev_vectors, dtype=complex),
                                    eff, w_mat, p_user, sigma2, omega_weight,
                                    n_randomizations, rng_seed)
    # keep the returned grams consistent with the returned vectors: when the
    # local refinement beats the relaxation's principal eigenvectors, report
    # the rank-1 certificates of the refined solution instead
    eig_vectors = np.array([np.linalg.eigh(0.5 * (g + g.conj().T))[1][:, -1]
                            for g in solved_grams])
    obj_eig = _exact_objective(eff[0], eff[1], w_mat, eig_vectors, p_user[0],
                               p_user[1], sigma2, omega_weight)
    if obj > obj_eig + 1e-9:
        solved_grams = [np.outer(v, v.conj()) for v in vectors]
    gap = obj / sdr_objective if sdr_objective and sdr_objective > 0 else 1.0
    return DigitalUpdate(vectors, solved_grams, float(sdr_objective), float(gap),
                         float(obj), iterations, qos_feasible)


def _extract_vectors(solved_grams, prev_vectors, eff, w_mat, p_user, sigma2,
                     omega_weight, n_randomizations, rng_seed):
    """Rank-1 recovery: dominant eigenvectors, refined coordinatewise with
    Gaussian randomization when the relaxation is not numerically rank-1;
    never returns something worse than the incumbent vectors."""
    rng = np.random.default_rng(rng_seed)
    k = prev_vectors.shape[0]

    def score(vectors):
        return _exact_objective(eff[0], eff[1], w_mat, vectors, p_user[0],
                                p_user[1], sigma2, omega_weight)

    candidates_per_group = []
    for i in range(k):
        vmat = 0.5 * (solved_grams[i] + solved_grams[i].conj().T)
        evals, evecs = np.linalg.eigh(vmat)
        cands = [evecs[:, -1]]
        if evals[-2] / max(evals[-1], 1e-15) > 1e-3:
            cands.append(evecs[:, -2])
            try:
                root = evecs @ np.diag(np.sqrt(np.maximum(evals, 0.0))) @ evecs.conj().T
            except FloatingPointError:
                root = vmat
            for _ in range(n_randomizations):
                g = (rng.standard_normal(vmat.shape[0])
                     + 1j * rng.standard_normal(vmat.shape[0]))
                cand = root @ g
                if np.linalg.norm(cand) > 0:
                    cands.append(cand / np.linalg.norm(cand))
        # matched filters to the (possibly perturbed) group channels recover
        # a high-gain beam when the relaxation is far from rank one; their
        # projections onto the null space of the other groups' effective
        # channels recover interference-free beams the eigenvector of a
        # non-rank-1 relaxation tends to miss
        null_bases = []
        for rows in ([np.conj(eff[0][j]) @ w_mat for j in range(k) if j != i],
                     [np.conj(eff[f][j]) @ w_mat for f in range(2)
                      for j in range(k) if j != i]):
            if rows and len(rows) < w_mat.shape[1]:
                basis, _ = np.linalg.qr(np.array(rows).conj().T)
                null_bases.append(basis)
        for f in range(2):
            mf = np.conj(np.conj(eff[f][i]) @ w_mat)
            if np.linalg.norm(mf) > 0:
                cands.append(mf / np.linalg.norm(mf))
                for basis in null_bases:
                    perp = mf - basis @ (basis.conj().T @ mf)
                    if np.linalg.norm(perp) > 1e-12:
                        cands.append(perp / np.linalg.norm(perp))
        cands.append(prev_vectors[i])
        candidates_per_group.append(cands)

    best = np.stack([c[0] for c in candidates_per_group])
    best_obj = score(best)
    # cyclic exhaustive improvement over the per-group candidate lists
    for _ in range(5):
        improved = False
        for i in range(k):
            for cand in candidates_per_group[i]:
                trial = best.copy()
                trial[i] = cand
                val = score(trial)
                if val > best_obj + 1e-12:
                    best, best_obj = trial, val
                    improved = True
        if not improved:
            break
    prev_obj = score(prev_vectors)
    if prev_obj > best_obj:
        best, best_obj = prev_vectors, prev_obj
    best = best / np.linalg.norm(best, axis=1, keepdims=True)
    return best, score(best)


def vec_amplitudes(phase_mask):
    """Column-major vectorization of the fixed phase mask."""
    return np.reshape(phase_mask, -1, order="F")


def update_dma(eff_near, eff_far, phase_mask, digital_vectors, p_near, p_far,
               caps_near, caps_far, sigma2, omega_weight, q_prev,
               gamma_near=None, gamma_far=None, include_qos: bool = True,
               tol: float = 1e-4, max_iter: int = 25) -> DmaUpdate:
    """SCA update of the per-element amplitude matrix Q (W = phase ∘ Q)."""
    eff = [np.atleast_2d(eff_near), np.atleast_2d(eff_far)]
    k = eff[0].shape[0]
    n_t, n_f = phase_mask.shape
    scale = 1.0 / sigma2
    p_user = [np.asarray(p_near, dtype=float), np.asarray(p_far, dtype=float)]
    p_group_s = (p_user[0] + p_user[1]) * scale
    caps = [np.asarray(caps_near, dtype=float), np.asarray(caps_far, dtype=float)]
    gammas = [None if g is None else np.broadcast_to(np.asarray(g, dtype=float), (k,))
              for g in (gamma_near, gamma_far)]
    weights = [omega_weight, 1.0 - omega_weight]
    phase_vec = vec_amplitudes(phase_mask)

    # rows[f][i][j] @ q = (h_eff_{f,i})^H W(q) v_j with q = vec(Q)
    rows = [[[np.kron(digital_vectors[j], np.conj(eff[f][i])) * phase_vec
              for j in range(k)] for i in range(k)] for f in range(2)]

    def w_of(q_flat):
        return phase_mask * np.reshape(q_flat, (n_t, n_f), order="F")

    def score(q_flat):
        return _exact_objective(eff[0], eff[1], w_of(q_flat), digital_vectors,
                                p_user[0], p_user[1], sigma2, omega_weight)

    def build(with_qos):
        prog = ConicProgram()
        q = prog.variable("q", n_t * n_f)
        psi = [prog.variable("psi_n", k, nonneg=True),
               prog.variable("psi_f", k, nonneg=True)]
        psibar = [prog.variable("psibar_n", k), prog.variable("psibar_f", k)]
        g0 = [cp.Parameter(k, complex=True) for _ in range(2)]
        g0_sq = [cp.Parameter(k, nonneg=True) for _ in range(2)]
        den_anchor = [cp.Parameter(k, pos=True) for _ in range(2)]
        prog.add(q >= 0.0, q <= 1.0)
        objective = 0
        for f in range(2):
            for i in range(k):
                g_ii = rows[f][i][i] @ q
                minorant = 2.0 * cp.real(cp.conj(g0[f][i]) * g_ii) - g0_sq[f][i]
                prog.add(psi[f][i] <= p_user[f][i] * scale * minorant)
                inter = 0
                for j in range(k):
                    if j == i:
                        continue
                    g_ij = rows[f][i][j] @ q
                    inter = inter + p_group_s[j] * cp.square(cp.abs(g_ij))
                    if p_user[f][i] > 0 and np.isfinite(caps[f][i, j]):
                        prog.add(cp.abs(g_ij) <= np.sqrt(max(caps[f][i, j], 0.0) / p_user[f][i]))
                if f == 1:
                    inter = inter + p_user[0][i] * scale * cp.square(cp.abs(g_ii))
                prog.add(psibar[f][i] >= inter + 1.0)
                if with_qos and gammas[f] is not None:
                    prog.add(psi[f][i] >= (2.0 ** gammas[f][i] - 1.0) * psibar[f][i])
            objective = objective + weights[f] * cp.sum(
                cp.log(psi[f] + psibar[f]) / _LN2 - cp.multiply(den_anchor[f], psibar[f]))
        prog.maximize(objective)
        return prog, g0, g0_sq, den_anchor

    qos_feasible = True
    prog, g0, g0_sq, den_anchor = build(include_qos)
    q_best = np.clip(np.reshape(np.asarray(q_prev, dtype=float), -1, order="F"),
                     0.0, 1.0)
    best_obj = score(q_best)
    q_cur = q_best
    prev_obj = best_obj
    iterations = 0
    for it in range(max_iter):
        iterations = it + 1
        for f in range(2):
            g_diag = np.array([rows[f][i][i] @ q_cur for i in range(k)])
            g0[f].value = g_diag
            g0_sq[f].value = np.abs(g_diag) ** 2
            gains = np.abs(np.array([[rows[f][i][j] @ q_cur for j in range(k)]
                                     for i in range(k)])) ** 2
            anchor = _interference_anchor(gains, p_group_s, p_user[0] * scale, 1 if f == 1 else 0)
            den_anchor[f].value = 1.0 / (_LN2 * np.maximum(anchor, 1e-12))
        res = prog.solve()
        if res.status != "optimal":
            if include_qos and qos_feasible:
                qos_feasible = False
                prog, g0, g0_sq, den_anchor = build(False)
                continue
            break
        q_cur = np.clip(np.asarray(res.values["q"], dtype=float), 0.0, 1.0)
        obj = score(q_cur)
        if obj > best_obj:
            best_obj, q_best = obj, q_cur
        if abs(obj - prev_obj) <= tol * max(abs(prev_obj), 1e-9):
            break
        prev_obj = obj
    return DmaUpdate(np.reshape(q_best, (n_t, n_f), order="F"), float(best_obj),
                     iterations, qos_feasible)
