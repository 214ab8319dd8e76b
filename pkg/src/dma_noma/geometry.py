"""DMA array geometry, user placement, and near/far-field channel synthesis.

The transmit array sits in the x = 0 plane with its central element at the
origin; element (v, h) is at (0, lam*(2v - n_rows - 1)/4, lam*(2h - n_cols - 1)/4),
i.e. half-wavelength spacing in both directions.  Channels follow a Rician
model whose LoS part is a spherical-wavefront steering vector weighted by a
per-element power-law path loss.  The base station reconstructs the LoS
channel from (possibly erroneous) position estimates only.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, InvalidConfigError

SPEED_OF_LIGHT = 3.0e8


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


@dataclass(frozen=True)
class ArrayGeometry:
    n_rows: int
    n_cols: int
    wavelength: float
    feed_count: int
    element_coords: np.ndarray  # (N_T, 3)
    phase_mask: np.ndarray      # (N_T, N_f), unit modulus
    ref_wavevector: np.ndarray  # (3,)

    @property
    def n_elements(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def aperture(self) -> float:
        """Largest extent of the element grid (array aperture D)."""
        span = self.element_coords.max(axis=0) - self.element_coords.min(axis=0)
        return float(np.linalg.norm(span))

    @property
    def rayleigh_distance(self) -> float:
        return 2.0 * self.aperture**2 / self.wavelength


def build_geometry(n_rows: int, n_cols: int, wavelength: float, feed_count: int,
                   ref_wavevector=None) -> ArrayGeometry:
    """Build the element grid and the fixed reference-wave phase mask."""
    if n_rows < 1 or n_cols < 1 or feed_count < 1:
        raise InvalidConfigError("array dimensions and feed count must be >= 1")
    if wavelength <= 0:
        raise InvalidConfigError("wavelength must be positive")
    if ref_wavevector is None:
        # reference wave traveling along the surface (y direction)
        ref_wavevector = np.array([0.0, 2.0 * np.pi / wavelength, 0.0])
    ref_wavevector = np.asarray(ref_wavevector, dtype=float)

    v_idx, h_idx = np.meshgrid(np.arange(1, n_rows + 1), np.arange(1, n_cols + 1),
                               indexing="ij")
    y = wavelength * (2 * v_idx - n_rows - 1) / 4.0
    z = wavelength * (2 * h_idx - n_cols - 1) / 4.0
    coords = np.stack([np.zeros_like(y), y, z], axis=-1).reshape(-1, 3)

    phase = np.exp(-1j * coords @ ref_wavevector)
    mask = np.repeat(phase[:, None], feed_count, axis=1)
    return ArrayGeometry(n_rows, n_cols, wavelength, feed_count, coords, mask,
                         ref_wavevector)


def element_distances(geom: ArrayGeometry, pos) -> np.ndarray:
    pos = np.asarray(pos, dtype=float)
    d = np.linalg.norm(geom.element_coords - pos[None, :], axis=1)
    if np.any(d < 1e-12):
        raise DegenerateGeometryError(f"position {pos} coincides with an array element")
    return d


def steering_vector(geom: ArrayGeometry, pos) -> np.ndarray:
    """Spherical-wavefront steering vector, entry e^{-j 2 pi d / lam}."""
    d = element_distances(geom, pos)
    return np.exp(-1j * 2.0 * np.pi / geom.wavelength * d)


def path_loss_vector(geom: ArrayGeometry, pos, zeta0_db: float, d0: float,
                     alpha: float) -> np.ndarray:
    """Per-element power path loss beta = (zeta0 / d0^alpha) * d^(-alpha)."""
    if alpha <= 0:
        raise InvalidConfigError("path loss exponent must be positive")
    d = element_distances(geom, pos)
    return (db_to_linear(zeta0_db) / d0**alpha) * d ** (-alpha)


def los_channel(geom: ArrayGeometry, pos, zeta0_db: float, d0: float,
                alpha: float) -> np.ndarray:
    """LoS channel sqrt(beta) (elementwise) times the steering vector."""
    beta = path_loss_vector(geom, pos, zeta0_db, d0, alpha)
    return np.sqrt(beta) * steering_vector(geom, pos)


def reconstruct_los(geom: ArrayGeometry, est_pos, zeta0_db: float, d0: float,
                    alpha: float) -> np.ndarray:
    """LoS channel rebuilt from a position estimate.

    Uses the same phase convention as :func:`steering_vector`, so a perfect
    estimate reproduces the true LoS channel exactly.
    """
    return los_channel(geom, est_pos, zeta0_db, d0, alpha)


@dataclass(frozen=True)
class UserState:
    """One user: geometry-side truth plus what the localizer reports."""
    group: int
    fieldtag: str               # "N" (near) or "F" (far)
    true_pos: np.ndarray
    est_pos: np.ndarray
    pos_err_radius: float
    rician_factor: float
    nlos_norm: float = 0.0      # l2-norm of the NLoS component (FU only)

    def __post_init__(self):
        if self.fieldtag not in ("N", "F"):
            raise InvalidConfigError(f"fieldtag must be 'N' or 'F', got {self.fieldtag!r}")
        err = np.linalg.norm(np.asarray(self.true_pos) - np.asarray(self.est_pos))
        if err > self.pos_err_radius + 1e-9:
            raise InvalidConfigError(
                f"position estimate error {err:.3g} exceeds radius {self.pos_err_radius:.3g}")


@dataclass(frozen=True)
class UserEnsemble:
    near_users: tuple          # K UserState with fieldtag "N"
    far_users: tuple           # K UserState with fieldtag "F"

    @property
    def group_count(self) -> int:
        return len(self.near_users)

    def check_field_split(self, geom: ArrayGeometry) -> bool:
        """True iff NU/FU tags agree with the Rayleigh-distance split.

        At mmWave with desk-scale arrays the conventional 10/15 m rings sit
        beyond the Rayleigh distance, so this is reported rather than raised.
        """
        rd = geom.rayleigh_distance
        ok = all(np.linalg.norm(u.true_pos) < rd for u in self.near_users)
        ok = ok and all(np.linalg.norm(u.true_pos) >= rd for u in self.far_users)
        return ok


def make_user_ensemble(near_users, far_users, geom: ArrayGeometry | None = None,
                       warn_on_field_mismatch: bool = True) -> UserEnsemble:
    if len(near_users) != len(far_users):
        raise InvalidConfigError("need one FU per NU (paired NOMA groups)")
    ens = UserEnsemble(tuple(near_users), tuple(far_users))
    if geom is not None and warn_on_field_mismatch and not ens.check_field_split(geom):
        warnings.warn("user distances do not match the Rayleigh-distance NU/FU split",
                      stacklevel=2)
    return ens


@dataclass(frozen=True)
class UserChannel:
    true_channel: np.ndarray
    recon_los: np.ndarray
    csi_error: np.ndarray
    los_component: np.ndarray
    nlos_component: np.ndarray | None
    path_gains: np.ndarray
    steering: np.ndarray


@dataclass(frozen=True)
class ChannelSet:
    near: tuple                # K UserChannel
    far: tuple                 # K UserChannel
    zeta0_db: float
    d0: float
    alpha: float

    @property
    def recon_near(self) -> np.ndarray:
        return np.stack([u.recon_los for u in self.near])

    @property
    def recon_far(self) -> np.ndarray:
        return np.stack([u.recon_los for u in self.far])

    @property
    def true_near(self) -> np.ndarray:
        return np.stack([u.true_channel for u in self.near])

    @property
    def true_far(self) -> np.ndarray:
        return np.stack([u.true_channel for u in self.far])


def _synthesize_one(geom, user: UserState, zeta0_db, d0, alpha, rng) -> UserChannel:
    beta = path_loss_vector(geom, user.true_pos, zeta0_db, d0, alpha)
    steer = steering_vector(geom, user.true_pos)
    los = np.sqrt(beta) * steer
    kap = user.rician_factor
    los_weight = np.sqrt(kap / (1.0 + kap))
    if user.fieldtag == "N":
        # near-field scattering is negligible: pure scaled LoS
        h = los_weight * los
        nlos = None
    else:
        raw = rng.standard_normal(geom.n_elements) + 1j * rng.standard_normal(geom.n_elements)
        nlos = raw / np.linalg.norm(raw) * user.nlos_norm
        h = los_weight * los + nlos / np.sqrt(1.0 + kap)
    recon = reconstruct_los(geom, user.est_pos, zeta0_db, d0, alpha)
    return UserChannel(h, recon, h - recon, los, nlos, beta, steer)


def synthesize_channels(geom: ArrayGeometry, users: UserEnsemble, zeta0_db: float,
                        d0: float, alpha: float, rng_seed: int) -> ChannelSet:
    """Draw the channel realization for every user.

    Deterministic in ``rng_seed``: identical seeds give bit-identical output.
    """
    rng = np.random.default_rng(rng_seed)
    near = tuple(_synthesize_one(geom, u, zeta0_db, d0, alpha, rng) for u in users.near_users)
    far = tuple(_synthesize_one(geom, u, zeta0_db, d0, alpha, rng) for u in users.far_users)
    return ChannelSet(near, far, zeta0_db, d0, alpha)
