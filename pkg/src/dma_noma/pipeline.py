"""Dual-loop robust solver: alternating worst-case CSI / digital / amplitude
updates inside, closed-form power allocation outside, with an acceptance
check that keeps the reported worst-case objective nondecreasing.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import beamforming, power_alloc, rates, uncertainty, worst_case
from .errors import InfeasibleSplitError, InfeasibleProblemError
from .geometry import (ArrayGeometry, ChannelSet, UserEnsemble, UserState,
                       synthesize_channels)


@dataclass(frozen=True)
class Scenario:
    geom: ArrayGeometry
    users: UserEnsemble
    channels: ChannelSet
    total_power: float           # watts
    sigma2: float                # watts
    omega_weight: float
    gamma_near: float
    gamma_far: float
    zeta0_db: float
    d0: float
    alpha: float


@dataclass
class SolverConfig:
    outer_tol: float = 1e-3
    max_outer: int = 20
    inner_rounds: int = 1
    subproblem_tol: float = 1e-3
    subproblem_max_iter: int = 8
    worst_case_tol: float = 1e-3
    worst_case_max_iter: int = 10
    bound_tol: float = 1e-4
    include_qos: bool = True
    n_randomizations: int = 20
    phase_factor: float | None = None
    # the CSI error balls at desk scale usually contain the channel itself
    # (worst case pinned at zero rate for every design), so the design loop
    # scores candidates on the minimum rate over channel realizations drawn
    # at sampled positions inside the users' position-error balls instead;
    # the reported worst-case objective always uses the full ball
    n_position_draws: int = 8
    draw_seed: int = 101


@dataclass
class BeamformerState:
    dma_amplitudes: np.ndarray       # (N_T, N_f) in [0, 1]
    digital_vectors: np.ndarray      # (K, N_f) unit rows
    gram_matrices: list
    sdr_objective: float
    extraction_gap: float

    def w_matrix(self, phase_mask: np.ndarray) -> np.ndarray:
        return phase_mask * self.dma_amplitudes


@dataclass
class SolveTrace:
    outer: list = field(default_factory=list)   # per-iteration record dicts
    convergence_reason: str = "max_iter"

    @property
    def worst_objectives(self):
        return [rec["worst_objective"] for rec in self.outer]


def feed_partition(n_elements: int, feed_count: int,
                   level: float = 1.0) -> np.ndarray:
    """Amplitude matrix assigning each feed a contiguous element block.

    A uniform amplitude matrix is rank one (the fixed phase mask has
    identical columns), which collapses the digital precoding space to a
    single dimension and makes inter-beam nulling impossible; the partition
    keeps the full feed_count rank.
    """
    q = np.zeros((n_elements, feed_count))
    block = max(1, n_elements // feed_count)
    for f in range(feed_count):
        lo = f * block
        hi = n_elements if f == feed_count - 1 else (f + 1) * block
        q[lo:hi, f] = level
    return q


def position_draws(scenario: Scenario, n_draws: int, rng_seed: int) -> list:
    """Channel realizations at sampled true positions inside each user's
    position-error ball around the estimate.

    Returns a list of ``(channels_near, channels_far)`` arrays; empty when
    every radius is zero.  Deterministic in ``rng_seed``.
    """
    users = list(scenario.users.near_users) + list(scenario.users.far_users)
    if n_draws <= 0 or all(u.pos_err_radius <= 0.0 for u in users):
        return []
    rng = np.random.default_rng(rng_seed)
    k = scenario.users.group_count
    draws = []
    for draw in range(n_draws):
        shifted = []
        for u in users:
            dp = np.zeros(3)
            if u.pos_err_radius > 0.0:
                dp = rng.standard_normal(3)
                dp *= (u.pos_err_radius * rng.uniform() ** (1.0 / 3.0)
                       / np.linalg.norm(dp))
            shifted.append(UserState(
                group=u.group, fieldtag=u.fieldtag,
                true_pos=np.asarray(u.est_pos) + dp, est_pos=u.est_pos,
                pos_err_radius=u.pos_err_radius,
                rician_factor=u.rician_factor, nlos_norm=u.nlos_norm))
        ens = UserEnsemble(tuple(shifted[:k]), tuple(shifted[k:]))
        ch = synthesize_channels(scenario.geom, ens, scenario.zeta0_db,
                                 scenario.d0, scenario.alpha,
                                 rng_seed=rng_seed * 10007 + draw)
        draws.append((ch.true_near, ch.true_far))
    return draws


def _max_sinr_vectors(members, w_mat, p_n, p_f, sigma2, k):
    """Closed-form digital beams maximizing each group's reconstructed-channel
    gain over the noise plus the average leakage onto the other groups' users
    across every member channel set — wide nulls instead of point nulls."""
    n_f = w_mat.shape[1]
    gram = w_mat.conj().T @ w_mat
    recon_rows = np.conj(members[0][0]) @ w_mat      # rows h_i^H W at recon
    vs = np.empty((k, n_f), dtype=complex)
    for i in range(k):
        r = np.zeros((n_f, n_f), dtype=complex)
        for ch_n, ch_f in members:
            for ch in (ch_n, ch_f):
                rows = np.conj(ch) @ w_mat
                for j in range(k):
                    if j != i:
                        r += np.outer(rows[j].conj(), rows[j])
        r /= len(members)
        r += (sigma2 / max(float(p_n[i] + p_f[i]), 1e-300)) * gram
        r += 1e-30 * max(np.trace(gram).real, 1.0) * np.eye(n_f)
        v = np.linalg.solve(r, recon_rows[i].conj())
        nrm = np.linalg.norm(v)
        if nrm == 0.0:
            v = recon_rows[i].conj()
            nrm = max(np.linalg.norm(v), 1e-300)
        vs[i] = v / nrm
    return vs


def initial_state(scenario: Scenario) -> tuple:
    """Half-open partitioned amplitudes, matched-filter digital vectors,
    even powers."""
    geom = scenario.geom
    k = scenario.users.group_count
    q = feed_partition(geom.n_elements, geom.feed_count, level=0.5)
    w_mat = geom.phase_mask * q
    recon_n = scenario.channels.recon_near
    vs = np.conj(recon_n) @ w_mat                       # rows h_i^H W
    vs = np.conj(vs)                                    # matched filter W^H h
    norms = np.linalg.norm(vs, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    vs = vs / norms
    group = np.full(k, scenario.total_power / k)
    beams = w_mat @ vs.T
    p_n = np.empty(k)
    p_f = np.empty(k)
    for i in range(k):
        fu_gain = abs(np.vdot(scenario.channels.recon_far[i], beams[:, i])) ** 2
        try:
            p_n[i], p_f[i] = power_alloc.split_group_power(
                float(group[i]), float(fu_gain), scenario.gamma_far,
                scenario.sigma2, group=i)
        except InfeasibleSplitError:
            p_n[i] = p_f[i] = group[i] / 2.0
    return q, vs, p_n, p_f


def _worst(scenario, radii_n, radii_f, w_mat, vs, p_n, p_f, config,
           multistart=True):
    return worst_case.minimize_rate_over_csi(
        scenario.channels.recon_near, scenario.channels.recon_far,
        radii_n, radii_f,
        uncertainty.interference_caps(radii_n,
                                      scenario.channels.recon_near, w_mat, vs, p_n),
        uncertainty.interference_caps(radii_f,
                                      scenario.channels.recon_far, w_mat, vs, p_f),
        w_mat, vs, p_n, p_f, scenario.sigma2, scenario.omega_weight,
        scenario.gamma_near, scenario.gamma_far, include_qos=False,
        tol=config.worst_case_tol, max_iter=config.worst_case_max_iter,
        multistart=multistart)


def solve_robust(scenario: Scenario, config: SolverConfig | None = None,
                 budget: uncertainty.UncertaintyBudget | None = None):
    """Run the full dual-loop design.

    Returns (BeamformerState, PowerSplit, WorstCaseCsi, SolveTrace).  Each
    outer iteration proposes several candidate designs and accepts the best
    one only if it improves the minimum rate over the sampled realizable
    channel set without regressing the reported full-ball worst case;
    otherwise the incumbent is kept and the loop stops, so both traced
    objective sequences are nondecreasing by construction.
    """
    if config is None:
        config = SolverConfig()
    geom = scenario.geom
    k = scenario.users.group_count
    if budget is None:
        budget = uncertainty.compute_budget(
            geom, scenario.users, scenario.channels, scenario.zeta0_db,
            scenario.d0, scenario.alpha, tol=config.bound_tol,
            phase_factor=config.phase_factor)

    q, vs, p_n, p_f = initial_state(scenario)
    w_mat = geom.phase_mask * q
    trace = SolveTrace()
    grams = [np.outer(v, v.conj()) for v in vs]
    sdr_obj, gap = float("nan"), 1.0
    power_split = power_alloc.PowerSplit(p_n + p_f, p_n, p_f,
                                         scenario.total_power,
                                         np.zeros(k), np.zeros(k))

    radii_full = (budget.radii_near, budget.radii_far)
    # the candidate score set: the reconstructed channels plus (for a
    # nonzero budget) realizable channel draws at sampled positions
    members = [(scenario.channels.recon_near, scenario.channels.recon_far)]
    if max(radii_full[0].max(initial=0.0), radii_full[1].max(initial=0.0)) > 0:
        members += position_draws(scenario, config.n_position_draws,
                                  config.draw_seed)

    def member_rates(w, vecs, pn, pf):
        return [rates.evaluate(cn, cf, w, vecs, pn, pf, scenario.sigma2,
                               scenario.omega_weight).total
                for cn, cf in members]

    zero_radii = (np.zeros(k), np.zeros(k))
    caps_n = uncertainty.interference_caps(
        zero_radii[0], scenario.channels.recon_near, w_mat, vs, p_n)
    caps_f = uncertainty.interference_caps(
        zero_radii[1], scenario.channels.recon_far, w_mat, vs, p_f)

    wc = _worst(scenario, *radii_full, w_mat, vs, p_n, p_f, config)
    vals = member_rates(w_mat, vs, p_n, p_f)
    smin, nom = min(vals), vals[0]
    worst_member = int(np.argmin(vals))
    for outer in range(1, config.max_outer + 1):
        t0 = time.perf_counter()
        record = {"outer": outer, "worst_objective": wc.objective,
                  "sampled_objective": smin,
                  "worst_iterations": wc.iterations, "accepted": True}

        # first pass designs for the reconstructed channels outright (a
        # nominal warm start); later passes refine against the member the
        # incumbent serves worst
        eff_n, eff_f = members[0 if outer == 1 else worst_member]

        cand_q, cand_vs = q, vs
        cand_grams, cand_sdr, cand_gap = grams, sdr_obj, gap
        for _ in range(config.inner_rounds):
            dig = beamforming.update_digital(
                eff_n, eff_f, geom.phase_mask * cand_q, p_n, p_f, caps_n,
                caps_f, scenario.sigma2, scenario.omega_weight, cand_vs,
                scenario.gamma_near, scenario.gamma_far,
                include_qos=config.include_qos, tol=config.subproblem_tol,
                max_iter=config.subproblem_max_iter,
                n_randomizations=config.n_randomizations)
            cand_vs, cand_grams = dig.digital_vectors, dig.gram_matrices
            cand_sdr, cand_gap = dig.sdr_objective, dig.extraction_gap
            dma = beamforming.update_dma(
                eff_n, eff_f, geom.phase_mask, cand_vs, p_n, p_f, caps_n,
                caps_f, scenario.sigma2, scenario.omega_weight, cand_q,
                scenario.gamma_near, scenario.gamma_far,
                include_qos=config.include_qos, tol=config.subproblem_tol,
                max_iter=config.subproblem_max_iter)
            cand_q = dma.amplitudes
        record["digital_objective"] = dig.objective
        record["dma_objective"] = dma.objective

        # candidate designs: the alternating update above, plus closed-form
        # wide-null digital beams on the incumbent and the updated amplitudes
        options = [("alt", cand_q, cand_vs, cand_grams, cand_sdr, cand_gap)]
        for label, q_c in (("max_sinr", q), ("alt+max_sinr", cand_q)):
            vs_c = _max_sinr_vectors(members, geom.phase_mask * q_c, p_n, p_f,
                                     scenario.sigma2, k)
            options.append((label, q_c, vs_c,
                            [np.outer(v, v.conj()) for v in vs_c],
                            float("nan"), 1.0))

        best = None
        for label, q_c, vs_c, grams_c, sdr_c, gap_c in options:
            w_c = geom.phase_mask * q_c
            beams = w_c @ vs_c.T
            # each design is tried with the incumbent powers and with a fresh
            # closed-form allocation on its reconstructed-channel gains
            power_opts = [(p_n, p_f, None)]
            g_n = np.abs(np.einsum("kn,nk->k",
                                   np.conj(scenario.channels.recon_near),
                                   beams)) ** 2
            g_f = np.abs(np.einsum("kn,nk->k",
                                   np.conj(scenario.channels.recon_far),
                                   beams)) ** 2
            try:
                split = power_alloc.allocate_powers(
                    g_n, g_f, scenario.total_power, scenario.gamma_near,
                    scenario.gamma_far, scenario.sigma2)
                power_opts.append((split.nu_powers, split.fu_powers, split))
            except (InfeasibleSplitError, InfeasibleProblemError) as exc:
                record["pa_error"] = str(exc)
            for pn_c, pf_c, split_c in power_opts:
                vals_c = member_rates(w_c, vs_c, pn_c, pf_c)
                key = (min(vals_c), vals_c[0])
                if best is None or key > best["key"]:
                    best = {"key": key, "label": label, "q": q_c, "vs": vs_c,
                            "grams": grams_c, "sdr": sdr_c, "gap": gap_c,
                            "w": w_c, "pn": pn_c, "pf": pf_c,
                            "split": split_c, "vals": vals_c}
        record["candidate_source"] = best["label"]
        record["candidate_sampled_objective"] = best["key"][0]
        record["nominal_objective"] = best["key"][1]
        record["pa_accepted"] = best["split"] is not None

        # accept on a strict sampled-minimum improvement, or on a tie that
        # does not regress the nominal rate; either way the reported
        # full-ball worst case must not fall below the incumbent's
        improves = best["key"][0] > smin + 1e-9
        ties = (best["key"][0] >= smin - 1e-9 and best["key"][1] >= nom - 1e-9)
        guard = False
        if improves or ties:
            wc_cand = _worst(scenario, *radii_full, best["w"], best["vs"],
                             np.asarray(best["pn"]), np.asarray(best["pf"]),
                             config)
            guard = wc_cand.objective >= wc.objective - 1e-9
            record["candidate_worst_objective"] = wc_cand.objective
        record["seconds"] = time.perf_counter() - t0

        if guard and (improves or ties):
            prev_obj, prev_smin, prev_nom = wc.objective, smin, nom
            q, vs, grams = best["q"], best["vs"], best["grams"]
            sdr_obj, gap = best["sdr"], best["gap"]
            w_mat = best["w"]
            p_n, p_f = np.asarray(best["pn"]), np.asarray(best["pf"])
            if best["split"] is not None:
                power_split = best["split"]
            wc, (smin, nom) = wc_cand, best["key"]
            worst_member = int(np.argmin(best["vals"]))
            record["worst_objective"] = wc.objective
            record["sampled_objective"] = smin
            trace.outer.append(record)

            def _settled(new, old):
                return abs(new - old) <= config.outer_tol * max(abs(old), 1e-9)

            if outer > 1 and _settled(wc.objective, prev_obj) \
                    and _settled(smin, prev_smin) and _settled(nom, prev_nom):
                trace.convergence_reason = "tolerance"
                break
        else:
            # candidate loses against the incumbent: keep it and stop
            record["accepted"] = False
            trace.outer.append(record)
            trace.convergence_reason = "tolerance"
            break
    state = BeamformerState(q, vs, grams, sdr_obj, gap)
    if not power_split.clamped_set and power_split.kappa.sum() == 0:
        # power allocation never ran; refresh the bookkeeping fields
        power_split = power_alloc.PowerSplit(p_n + p_f, p_n, p_f,
                                             scenario.total_power,
                                             power_split.kappa, power_split.mu)
    return state, power_split, wc, trace
