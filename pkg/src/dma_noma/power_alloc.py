"""Closed-form NOMA power allocation across and within groups.

Within a group, the far user's rate is pinned to its QoS target and the
rest of the group power goes to the near user.  Across groups, the near-user
rates are water-filled in closed form; groups whose near user would fall
below its QoS target are pinned to exactly the target and the residual
budget is re-water-filled over the rest until no new violations appear.
Inter-group interference is ignored inside this module (the effective
per-group SINR model); final rates are always re-evaluated exactly by the
caller.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleProblemError, InfeasibleSplitError


@dataclass
class PowerSplit:
    group_powers: np.ndarray     # (K,)
    nu_powers: np.ndarray
    fu_powers: np.ndarray
    total: float
    kappa: np.ndarray
    mu: np.ndarray
    clamped_set: set = field(default_factory=set)


def split_group_power(group_power: float, fu_gain: float, gamma_f: float,
                      sigma2: float, group: int | None = None):
    """Pin the far user's rate to gamma_f and give the rest to the near user.

    Under the intra-group-only SINR model G_F P_F / (G_F P_N + sigma2), the
    unique split achieving rate exactly gamma_f is
    P_F = (1 - 2^-gamma_f) (P_i + sigma2 / G_F).
    """
    if group_power <= 0:
        raise InfeasibleSplitError(f"nonpositive group power {group_power}", group=group)
    if fu_gain <= 0:
        raise InfeasibleSplitError("far-user effective gain is zero", group=group)
    p_f = (1.0 - 2.0 ** -gamma_f) * (group_power + sigma2 / fu_gain)
    p_n = group_power - p_f
    if p_n <= 0:
        raise InfeasibleSplitError(
            f"group power {group_power:.3g} cannot cover the far-user rate pin",
            group=group)
    return p_n, p_f


def effective_coefficients(nu_gains, fu_gains, gamma_f, sigma2):
    """Affine model of the near-user SINR in the group power.

    Substituting the rate-pinned split into SINR_N = G_N P_N / sigma2 gives
    SINR_N = kappa_i P_i + mu_i with kappa = G_N / (sigma2 2^gamma_f) and
    mu = -(G_N / G_F)(1 - 2^-gamma_f).
    """
    nu_gains = np.asarray(nu_gains, dtype=float)
    fu_gains = np.asarray(fu_gains, dtype=float)
    gamma_f = np.broadcast_to(np.asarray(gamma_f, dtype=float), nu_gains.shape)
    kappa = nu_gains / (sigma2 * 2.0 ** gamma_f)
    mu = -(nu_gains / fu_gains) * (1.0 - 2.0 ** -gamma_f)
    return kappa, mu


def waterfill_unconstrained(kappa, mu, total_power: float) -> np.ndarray:
    """Closed-form maximizer of sum log2(kappa P + mu + 1) s.t. sum P = P."""
    kappa = np.asarray(kappa, dtype=float)
    mu = np.asarray(mu, dtype=float)
    k = kappa.shape[0]
    offsets = (mu + 1.0) / kappa
    return total_power / k - offsets + offsets.sum() / k


def clamp_qos(kappa, mu, gamma_n, total_power: float,
              max_rounds: int = 20) -> tuple:
    """Water-fill with near-user QoS pinning.

    Returns (group_powers, clamped_set).  Pinned groups get exactly the
    power that meets their rate target; the rest share the residual by the
    same closed form.  Raises if the pins alone exceed the budget.
    """
    kappa = np.asarray(kappa, dtype=float)
    mu = np.asarray(mu, dtype=float)
    k = kappa.shape[0]
    gamma_n = np.broadcast_to(np.asarray(gamma_n, dtype=float), (k,))
    pin_power = (2.0 ** gamma_n - 1.0 - mu) / kappa
    powers = np.empty(k)
    clamped: set = set()
    for _ in range(max_rounds):
        free = [i for i in range(k) if i not in clamped]
        residual = total_power - pin_power[list(clamped)].sum() if clamped else total_power
        if residual < 0:
            raise InfeasibleProblemError(
                "QoS pins exhaust the power budget", users=sorted(clamped))
        if not free:
            # every group pinned: hand any leftover out evenly (rates only rise)
            powers = pin_power + residual / k
            return powers, clamped
        filled = waterfill_unconstrained(kappa[free], mu[free], residual)
        powers[free] = filled
        powers[list(clamped)] = pin_power[list(clamped)]
        new_violations = {i for i, p in zip(free, filled)
                          if kappa[i] * p + mu[i] + 1.0 < 2.0 ** gamma_n[i] * (1.0 - 1e-12)}
        if not new_violations:
            return powers, clamped
        clamped |= new_violations
    return powers, clamped


def allocate_powers(nu_gains, fu_gains, total_power: float, gamma_n, gamma_f,
                    sigma2: float) -> PowerSplit:
    """Full allocation: group water-filling with QoS pins, then the in-group
    far-user rate-pinned split."""
    nu_gains = np.asarray(nu_gains, dtype=float)
    fu_gains = np.asarray(fu_gains, dtype=float)
    kappa, mu = effective_coefficients(nu_gains, fu_gains, gamma_f, sigma2)
    group_powers, clamped = clamp_qos(kappa, mu, gamma_n, total_power)
    gamma_f_arr = np.broadcast_to(np.asarray(gamma_f, dtype=float), nu_gains.shape)
    nu_powers = np.empty_like(group_powers)
    fu_powers = np.empty_like(group_powers)
    for i, p_i in enumerate(group_powers):
        nu_powers[i], fu_powers[i] = split_group_power(
            float(p_i), float(fu_gains[i]), float(gamma_f_arr[i]), sigma2, group=i)
    return PowerSplit(group_powers, nu_powers, fu_powers, float(total_power),
                      kappa, mu, clamped)


def pa_objective(kappa, mu, group_powers) -> float:
    """Sum of near-user rates under the intra-group-only model."""
    vals = np.asarray(kappa) * np.asarray(group_powers) + np.asarray(mu) + 1.0
    if np.any(vals <= 0):
        return -np.inf
    return float(np.sum(np.log2(vals)))
