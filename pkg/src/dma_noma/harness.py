"""Experiment runner: scenario construction, Monte-Carlo sweeps, baseline
schemes, and CSV persistence with config-hash sidecars."""

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import geometry, pipeline, power_alloc, rates, uncertainty, worst_case
from .errors import InvalidConfigError, InfeasibleSplitError, InfeasibleProblemError
from .geometry import UserState, build_geometry, make_user_ensemble, synthesize_channels
from .pipeline import Scenario, SolverConfig, solve_robust

SPEED_OF_LIGHT = geometry.SPEED_OF_LIGHT

EXPERIMENTS = ("convergence", "bound_vs_nt", "bound_vs_eps",
               "rate_vs_distance", "baselines", "robustness_vs_err")
BASELINES = ("robust", "non_robust", "oma_tdma", "oma_fdma", "zf")


def dbm_to_watts(x_dbm: float) -> float:
    """The single dBm-to-watt conversion point for the whole package."""
    return 10.0 ** (x_dbm / 10.0) / 1000.0


@dataclass(frozen=True)
class ExperimentConfig:
    n_t: int = 16
    n_f: int = 4
    k: int = 2
    freq_hz: float = 60e9
    power_dbm: float = 27.0
    noise_dbm: float = -80.0
    zeta0_db: float = -30.0
    d0: float = 1.0
    alpha: float = 2.2
    rician: float = 20.0
    nlos_norm: float = 1e-4
    pos_err_radius: float = 0.1
    nu_radius: float = 10.0
    fu_radius: float = 15.0
    omega: float = 0.5
    gamma_n: float = 0.1
    gamma_f: float = 0.1
    seeds: tuple = (0, 1, 2, 3, 4)
    nt_sweep: tuple = (16, 32)
    eps_sweep: tuple = (0.0, 0.05, 0.1, 0.2)
    distance_sweep: tuple = (10.0, 15.0, 20.0, 25.0)
    baselines: tuple = BASELINES
    output_dir: str = "results"
    max_outer: int = 10
    inner_rounds: int = 1

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.freq_hz

    @property
    def total_power(self) -> float:
        return dbm_to_watts(self.power_dbm)

    @property
    def sigma2(self) -> float:
        return dbm_to_watts(self.noise_dbm)


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    bad = set(raw) - known
    if bad:
        raise InvalidConfigError(f"unknown config keys: {sorted(bad)}")
    for key in ("seeds", "nt_sweep", "eps_sweep", "distance_sweep", "baselines"):
        if key in raw:
            raw[key] = tuple(raw[key])
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise InvalidConfigError(str(exc)) from exc


def config_hash(config: ExperimentConfig) -> str:
    payload = json.dumps(asdict(config), sort_keys=True, default=list)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def grid_for(n_t: int) -> tuple:
    """Near-square rows x cols factorization of the element count."""
    rows = int(math.isqrt(n_t))
    while n_t % rows:
        rows -= 1
    return rows, n_t // rows


def _ball_sample(rng, radius: float) -> np.ndarray:
    if radius == 0.0:
        return np.zeros(3)
    v = rng.standard_normal(3)
    v /= np.linalg.norm(v)
    return v * radius * rng.uniform() ** (1.0 / 3.0)


def build_scenario(config: ExperimentConfig, seed: int,
                   pos_err_radius: float | None = None,
                   nu_radius: float | None = None,
                   fu_radius: float | None = None,
                   n_t: int | None = None) -> Scenario:
    """One random drop: paired NU/FU on rings at a shared random angle,
    noisy position estimates inside the error ball, Rician channels."""
    eps = config.pos_err_radius if pos_err_radius is None else pos_err_radius
    r_nu = config.nu_radius if nu_radius is None else nu_radius
    r_fu = config.fu_radius if fu_radius is None else fu_radius
    n_elems = config.n_t if n_t is None else n_t
    rows, cols = grid_for(n_elems)
    geom = build_geometry(rows, cols, config.wavelength, config.n_f)
    rng = np.random.default_rng(seed)
    near, far = [], []
    for i in range(config.k):
        angle = rng.uniform(-np.pi / 3.0, np.pi / 3.0)
        direction = np.array([np.cos(angle), np.sin(angle), 0.0])
        for bucket, r, tag in ((near, r_nu, "N"), (far, r_fu, "F")):
            true_pos = r * direction
            est_pos = true_pos - _ball_sample(rng, eps)
            bucket.append(UserState(
                group=i, fieldtag=tag, true_pos=true_pos, est_pos=est_pos,
                pos_err_radius=eps, rician_factor=config.rician,
                nlos_norm=config.nlos_norm if tag == "F" else 0.0))
    users = make_user_ensemble(near, far, geom=geom, warn_on_field_mismatch=False)
    channels = synthesize_channels(geom, users, config.zeta0_db, config.d0,
                                   config.alpha, rng_seed=seed)
    return Scenario(geom, users, channels, config.total_power, config.sigma2,
                    config.omega, config.gamma_n, config.gamma_f,
                    config.zeta0_db, config.d0, config.alpha)


def solver_config(config: ExperimentConfig) -> SolverConfig:
    return SolverConfig(max_outer=config.max_outer,
                        inner_rounds=config.inner_rounds)


def zero_budget(scenario: Scenario) -> uncertainty.UncertaintyBudget:
    """Budget that pretends the position estimates are exact."""
    def blank():
        return uncertainty.UserUncertainty(0.0, 0.0, np.zeros(3),
                                           np.zeros((3, 3)), np.zeros((3, 3)), 0.0)
    k = scenario.users.group_count
    return uncertainty.UncertaintyBudget(tuple(blank() for _ in range(k)),
                                         tuple(blank() for _ in range(k)))


def true_rate(scenario: Scenario, state: pipeline.BeamformerState,
              p_n, p_f) -> float:
    w_mat = state.w_matrix(scenario.geom.phase_mask)
    return rates.evaluate(scenario.channels.true_near, scenario.channels.true_far,
                          w_mat, state.digital_vectors, p_n, p_f,
                          scenario.sigma2, scenario.omega_weight).total


def worst_rate(scenario: Scenario, budget, state, p_n, p_f,
               config: SolverConfig | None = None) -> float:
    """Worst-case weighted sum rate of a fixed design over the CSI balls."""
    cfg = config or SolverConfig()
    w_mat = state.w_matrix(scenario.geom.phase_mask)
    return pipeline._worst(scenario, budget.radii_near, budget.radii_far,
                           w_mat, state.digital_vectors,
                           np.asarray(p_n), np.asarray(p_f), cfg).objective


def sampled_worst_rate(scenario: Scenario, state, p_n, p_f,
                       pos_err_radius: float, n_draws: int = 20,
                       rng_seed: int = 0) -> float:
    """Worst realized rate over sampled position errors.

    Draws candidate true positions inside the error ball around each user's
    estimate, re-synthesizes the channels, and reports the minimum achieved
    weighted sum rate of the fixed design — the Monte-Carlo counterpart of
    the analytic ball minimization, restricted to physically reachable
    errors.
    """
    rate = true_rate(scenario, state, p_n, p_f)
    if pos_err_radius == 0.0 or n_draws == 0:
        return rate
    rng = np.random.default_rng(rng_seed)
    k = scenario.users.group_count
    w_mat = state.w_matrix(scenario.geom.phase_mask)
    for draw in range(n_draws):
        shifted = []
        for u in list(scenario.users.near_users) + list(scenario.users.far_users):
            shift = _ball_sample(rng, pos_err_radius)
            shifted.append(UserState(
                group=u.group, fieldtag=u.fieldtag,
                true_pos=np.asarray(u.est_pos) + shift, est_pos=u.est_pos,
                pos_err_radius=pos_err_radius, rician_factor=u.rician_factor,
                nlos_norm=u.nlos_norm))
        ens = geometry.UserEnsemble(tuple(shifted[:k]), tuple(shifted[k:]))
        chans = synthesize_channels(scenario.geom, ens, scenario.zeta0_db,
                                    scenario.d0, scenario.alpha,
                                    rng_seed=rng_seed * 10007 + draw)
        rate = min(rate, rates.evaluate(
            chans.true_near, chans.true_far, w_mat, state.digital_vectors,
            p_n, p_f, scenario.sigma2, scenario.omega_weight).total)
    return float(rate)


# ---------------------------------------------------------------------------
# baseline schemes


def _oma_rates(scenario: Scenario, duplex: str) -> float:
    """Orthogonal halves with per-user matched-filter beams.

    Every one of the 2K users gets a 1/(2K) resource share.  TDMA
    concentrates its power share into the active slot (energy conserved);
    FDMA spends the share continuously in its subband.
    """
    geom = scenario.geom
    w_mat = geom.phase_mask            # all amplitudes at 1
    k = scenario.users.group_count
    n_users = 2 * k
    sigma2 = scenario.sigma2
    share = scenario.total_power / n_users
    total = 0.0
    for f, (recon, true, weight) in enumerate(
            ((scenario.channels.recon_near, scenario.channels.true_near,
              scenario.omega_weight),
             (scenario.channels.recon_far, scenario.channels.true_far,
              1.0 - scenario.omega_weight))):
        for i in range(k):
            v = np.conj(w_mat).T @ recon[i]
            nv = np.linalg.norm(v)
            if nv == 0:
                continue
            v = v / nv
            gain = abs(np.vdot(true[i], w_mat @ v)) ** 2
            if duplex == "tdma":
                snr = n_users * share * gain / sigma2
            else:
                snr = share * gain / sigma2
            total += weight * np.log2(1.0 + snr) / n_users
    return float(total)


def _zf_design(scenario: Scenario):
    """Zero-forcing on the reconstructed near-user channels only."""
    geom = scenario.geom
    k = scenario.users.group_count
    if k > geom.feed_count:
        return None
    q = pipeline.feed_partition(geom.n_elements, geom.feed_count)
    w_mat = geom.phase_mask * q
    a = np.conj(scenario.channels.recon_near) @ w_mat     # (K, N_f)
    v = np.linalg.pinv(a)                                  # (N_f, K)
    norms = np.linalg.norm(v, axis=0)
    if np.any(norms == 0):
        return None
    vs = (v / norms).T                                     # (K, N_f)
    beams = w_mat @ vs.T
    g_n = np.abs(np.einsum("kn,nk->k", np.conj(scenario.channels.recon_near), beams)) ** 2
    g_f = np.abs(np.einsum("kn,nk->k", np.conj(scenario.channels.recon_far), beams)) ** 2
    group = np.full(k, scenario.total_power / k)
    p_n = group / 2.0
    p_f = group / 2.0
    try:
        split = power_alloc.allocate_powers(g_n, np.maximum(g_f, 1e-30),
                                            scenario.total_power,
                                            scenario.gamma_near,
                                            scenario.gamma_far, scenario.sigma2)
        p_n, p_f = split.nu_powers, split.fu_powers
    except (InfeasibleSplitError, InfeasibleProblemError):
        pass
    state = pipeline.BeamformerState(q, vs,
                                     [np.outer(x, x.conj()) for x in vs],
                                     float("nan"), 1.0)
    return state, p_n, p_f


def run_baseline(name: str, scenario: Scenario,
                 config: SolverConfig | None = None) -> float | None:
    """Weighted sum rate of a baseline scheme on the true channels.

    Returns None when the scheme does not apply (ZF with K > N_f).
    """
    cfg = config or SolverConfig()
    if name == "robust":
        state, split, _, _ = solve_robust(scenario, cfg)
        return true_rate(scenario, state, split.nu_powers, split.fu_powers)
    if name == "non_robust":
        state, split, _, _ = solve_robust(scenario, cfg, budget=zero_budget(scenario))
        return true_rate(scenario, state, split.nu_powers, split.fu_powers)
    if name == "oma_tdma":
        return _oma_rates(scenario, "tdma")
    if name == "oma_fdma":
        return _oma_rates(scenario, "fdma")
    if name == "zf":
        design = _zf_design(scenario)
        if design is None:
            return None
        state, p_n, p_f = design
        return true_rate(scenario, state, p_n, p_f)
    raise InvalidConfigError(f"unknown baseline {name!r}")


# ---------------------------------------------------------------------------
# experiment kinds (module-level workers keep them picklable for --jobs > 1)


def _task_convergence(args):
    config, seed = args
    scenario = build_scenario(config, seed)
    _, _, _, trace = solve_robust(scenario, solver_config(config))
    return [{"seed": seed, "iteration": rec["outer"],
             "worst_objective": rec["worst_objective"],
             "accepted": int(rec["accepted"]),
             "reason": trace.convergence_reason}
            for rec in trace.outer]


def _task_bound_nt(args):
    config, n_t, seed = args
    scenario = build_scenario(config, seed, n_t=n_t)
    budget = uncertainty.compute_budget(scenario.geom, scenario.users,
                                        scenario.channels, config.zeta0_db,
                                        config.d0, config.alpha)
    return [{"n_t": n_t, "seed": seed, "field": tag,
             "csi_err_radius": u.csi_err_radius, "xi_max": u.xi_max}
            for tag, users in (("N", budget.near), ("F", budget.far))
            for u in users]


def _task_bound_eps(args):
    config, eps, seed = args
    scenario = build_scenario(config, seed, pos_err_radius=eps)
    budget = uncertainty.compute_budget(scenario.geom, scenario.users,
                                        scenario.channels, config.zeta0_db,
                                        config.d0, config.alpha)
    return [{"pos_err_radius": eps, "seed": seed, "field": tag,
             "csi_err_radius": u.csi_err_radius, "xi_max": u.xi_max}
            for tag, users in (("N", budget.near), ("F", budget.far))
            for u in users]


def _task_distance(args):
    config, dist, seed = args
    scenario = build_scenario(config, seed, nu_radius=dist, fu_radius=dist + 5.0)
    state, split, wc, _ = solve_robust(scenario, solver_config(config))
    return [{"distance": dist, "seed": seed,
             "true_rate": true_rate(scenario, state, split.nu_powers, split.fu_powers),
             "worst_rate": wc.objective}]


def _task_baselines(args):
    config, seed = args
    scenario = build_scenario(config, seed)
    rows = []
    for name in config.baselines:
        rate = run_baseline(name, scenario, solver_config(config))
        rows.append({"seed": seed, "scheme": name,
                     "rate": "" if rate is None else rate})
    return rows


def _task_robustness(args):
    config, eps, seed = args
    scenario = build_scenario(config, seed, pos_err_radius=eps)
    cfg = solver_config(config)
    budget = uncertainty.compute_budget(scenario.geom, scenario.users,
                                        scenario.channels, config.zeta0_db,
                                        config.d0, config.alpha)
    rows = []
    for scheme, design_budget in (("robust", budget),
                                  ("non_robust", zero_budget(scenario))):
        state, split, _, _ = solve_robust(scenario, cfg, budget=design_budget)
        rows.append({
            "pos_err_radius": eps, "seed": seed, "scheme": scheme,
            "worst_rate": worst_rate(scenario, budget, state,
                                     split.nu_powers, split.fu_powers, cfg),
            "sampled_worst_rate": sampled_worst_rate(
                scenario, state, split.nu_powers, split.fu_powers, eps,
                rng_seed=seed + 777),
            "nominal_rate": rates.evaluate(
                scenario.channels.recon_near, scenario.channels.recon_far,
                state.w_matrix(scenario.geom.phase_mask), state.digital_vectors,
                split.nu_powers, split.fu_powers, scenario.sigma2,
                scenario.omega_weight).total,
            "true_rate": true_rate(scenario, state, split.nu_powers, split.fu_powers)})
    return rows


_EXPERIMENT_PLANS = {
    "convergence": (_task_convergence,
                    lambda c: [(c, s) for s in c.seeds]),
    "bound_vs_nt": (_task_bound_nt,
                    lambda c: [(c, n, s) for n in c.nt_sweep for s in c.seeds]),
    "bound_vs_eps": (_task_bound_eps,
                     lambda c: [(c, e, s) for e in c.eps_sweep for s in c.seeds]),
    "rate_vs_distance": (_task_distance,
                         lambda c: [(c, d, s) for d in c.distance_sweep for s in c.seeds]),
    "baselines": (_task_baselines,
                  lambda c: [(c, s) for s in c.seeds]),
    "robustness_vs_err": (_task_robustness,
                          lambda c: [(c, e, s) for e in c.eps_sweep for s in c.seeds]),
}


def run_experiment(kind: str, config: ExperimentConfig, jobs: int = 1) -> str:
    """Run one experiment kind, write its CSV + meta sidecar, return the
    CSV path.  Deterministic for a fixed (config, seeds)."""
    if kind not in _EXPERIMENT_PLANS:
        raise InvalidConfigError(f"unknown experiment {kind!r}; "
                                 f"choose from {EXPERIMENTS}")
    worker, plan = _EXPERIMENT_PLANS[kind]
    tasks = plan(config)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(worker, tasks))
    else:
        chunks = [worker(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    digest = config_hash(config)
    for row in rows:
        row["config_hash"] = digest

    os.makedirs(config.output_dir, exist_ok=True)
    path = os.path.join(config.output_dir, f"{kind}.csv")
    fieldnames = list(rows[0].keys()) if rows else ["config_hash"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    meta = {"config_hash": digest, "config": asdict(config), "kind": kind,
            "versions": _versions()}
    with open(path + ".meta", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, default=list)
    return path


def _versions() -> dict:
    import cvxpy
    from importlib.metadata import version, PackageNotFoundError
    try:
        own = version("artifact")
    except PackageNotFoundError:
        own = "unknown"
    return {"package": own, "numpy": np.__version__, "cvxpy": cvxpy.__version__}
