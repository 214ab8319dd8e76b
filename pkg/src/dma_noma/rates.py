"""Exact SINR / rate evaluation used as ground truth by the optimizers.

Near users decode and cancel their group's far-user signal first, so their
SINR carries inter-group interference only; far users additionally see the
intra-group near-user power in the denominator.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RateReport:
    sinr_near: np.ndarray       # (K,)
    sinr_far: np.ndarray
    rate_near: np.ndarray
    rate_far: np.ndarray
    intra_far: np.ndarray       # intra-group term in the FU denominator
    inter_near: np.ndarray      # inter-group interference powers
    inter_far: np.ndarray
    total: float                # omega-weighted sum rate


def _gain_matrix(channels, beams):
    # gains[i, j] = |h_i^H (W v_j)|^2
    return np.abs(np.conj(channels) @ beams) ** 2


def evaluate(channels_near, channels_far, w_mat, digital_vectors, p_near,
             p_far, sigma2: float, omega_weight: float) -> RateReport:
    """Weighted sum rate at exact SINRs.

    channels_* may be the true channels or reconstructed-plus-error vectors;
    the formula does not care.  digital_vectors is (K, N_f).
    """
    channels_near = np.atleast_2d(channels_near)
    channels_far = np.atleast_2d(channels_far)
    p_near = np.asarray(p_near, dtype=float)
    p_far = np.asarray(p_far, dtype=float)
    k = digital_vectors.shape[0]
    beams = w_mat @ digital_vectors.T           # (N_T, K)
    g_near = _gain_matrix(channels_near, beams)  # (K, K)
    g_far = _gain_matrix(channels_far, beams)

    p_group = p_near + p_far
    inter_near = np.array([np.sum(np.delete(p_group * g_near[i], i)) for i in range(k)])
    inter_far = np.array([np.sum(np.delete(p_group * g_far[i], i)) for i in range(k)])
    intra_far = p_near * np.diag(g_far)

    sinr_near = p_near * np.diag(g_near) / (inter_near + sigma2)
    sinr_far = p_far * np.diag(g_far) / (intra_far + inter_far + sigma2)
    rate_near = np.log2(1.0 + sinr_near)
    rate_far = np.log2(1.0 + sinr_far)
    total = float(omega_weight * rate_near.sum() + (1.0 - omega_weight) * rate_far.sum())
    return RateReport(sinr_near, sinr_far, rate_near, rate_far, intra_far,
                      inter_near, inter_far, total)


def check_sic_ordering(channels_near, channels_far, w_mat, digital_vectors) -> np.ndarray:
    """True per group when the near user's effective beam gain dominates the
    far user's, which is what makes in-group SIC decodable."""
    beams = w_mat @ digital_vectors.T
    g_near = np.abs(np.einsum("kn,nk->k", np.conj(np.atleast_2d(channels_near)), beams)) ** 2
    g_far = np.abs(np.einsum("kn,nk->k", np.conj(np.atleast_2d(channels_far)), beams)) ** 2
    return g_near >= g_far
