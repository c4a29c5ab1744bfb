"""Factory deployment and static channel-gain construction.

Indoor-factory propagation for one episode: alpha-beta-gamma path loss with a
distance-dependent LOS probability, spatially correlated log-normal shadowing,
and Rayleigh small-scale fading.  Everything is frozen at episode start ("the
channel is static"): gains[m, n] is the power gain from transmitter m's sensor
to subnetwork n's access point; the diagonal holds the desired links.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class ChannelParams:
    """Propagation knobs, defaults for the 6-GHz dense-clutter factory hall."""

    carrier_ghz: float = 6.0
    clutter_density: float = 0.6
    clutter_size_m: float = 2.0
    corr_distance_m: float = 10.0
    sigma_los_db: float = 4.0
    sigma_nlos_db: float = 7.2
    distance_floor_m: float = 1.0
    # test reductions: force s=0 / h=1 to expose the bare path-loss response
    include_shadowing: bool = True
    include_fading: bool = True


@dataclass
class FactoryLayout:
    area: tuple          # (width, height) in metres
    ap_positions: np.ndarray      # (N, 2)
    sensor_positions: np.ndarray  # (N, 2)
    subnetwork_radius: float

    @property
    def n(self) -> int:
        return len(self.ap_positions)


@dataclass
class ChannelRealization:
    gains: np.ndarray         # (N, N) complex, rows = transmitters, cols = receivers
    los_flags: np.ndarray     # (N, N) bool
    shadowing_db: np.ndarray  # (N, N)

    @property
    def power_gains(self) -> np.ndarray:
        return np.abs(self.gains) ** 2


def deploy(n_subnetworks, area=(20.0, 20.0), radius=2.0, rng=None) -> FactoryLayout:
    """Drop N access points uniformly in the area; each sensor lands uniformly
    in the disk of given radius around its AP, clipped to the area."""
    if n_subnetworks < 1:
        raise ValueError("need at least one subnetwork")
    rng = np.random.default_rng() if rng is None else rng
    w, h = area
    ap = np.column_stack([rng.uniform(0, w, n_subnetworks), rng.uniform(0, h, n_subnetworks)])
    # uniform over the disk: sqrt-radial
    ang = rng.uniform(0, 2 * np.pi, n_subnetworks)
    rad = radius * np.sqrt(rng.uniform(0, 1, n_subnetworks))
    sensors = ap + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    sensors[:, 0] = np.clip(sensors[:, 0], 0, w)
    sensors[:, 1] = np.clip(sensors[:, 1], 0, h)
    return FactoryLayout(area=(w, h), ap_positions=ap, sensor_positions=sensors,
                         subnetwork_radius=radius)


def los_probability(d2d, clutter_density=0.6, clutter_size=2.0):
    """P(LOS) = exp(-d / k_clutter) with k_clutter = -size / ln(1 - density)."""
    if not 0 < clutter_density < 1:
        raise ValueError("clutter_density must lie in (0, 1)")
    if clutter_size <= 0:
        raise ValueError("clutter_size must be positive")
    k_clutter = -clutter_size / math.log(1.0 - clutter_density)
    return np.exp(-np.asarray(d2d, dtype=float) / k_clutter)


def path_loss_db(d, f_ghz=6.0, los=True):
    """Indoor-factory dense-clutter ABG path loss, distance floored at 1 m.

    LOS:  31.84 + 21.5 log10(d) + 19.0 log10(f)
    NLOS: max(LOS, 18.6 + 35.7 log10(d) + 20.0 log10(f))
    """
    d = np.maximum(np.asarray(d, dtype=float), 1.0)
    lf = math.log10(f_ghz)
    pl_los = 31.84 + 21.5 * np.log10(d) + 19.0 * lf
    pl_nlos = np.maximum(pl_los, 18.6 + 35.7 * np.log10(d) + 20.0 * lf)
    return np.where(np.asarray(los, dtype=bool), pl_los, pl_nlos)


def _covariance_root(positions: np.ndarray, corr_distance: float) -> np.ndarray:
    """Symmetric square root of the exponential spatial covariance, with one
    jittered retry if the factorization fails."""
    dd = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=2)
    cov = np.exp(-dd / corr_distance)
    for jitter in (0.0, 1e-9):
        try:
            w, V = np.linalg.eigh(cov + jitter * np.eye(len(cov)))
            return V @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ V.T
        except np.linalg.LinAlgError:
            continue
    raise RuntimeError("shadowing covariance factorization failed")


def correlated_shadowing(layout: FactoryLayout, los_flags, corr_distance=10.0,
                         sigma_los=4.0, sigma_nlos=7.2, rng=None):
    """Per-receiver Gaussian shadowing field over the transmitter positions.

    Transmitters near each other see correlated shadowing toward the same
    receiver, cov = sigma^2 exp(-dist/corr_distance); the marginal std is the
    sigma of the link's LOS class.  Cross-receiver correlation is not modeled.
    """
    if corr_distance <= 0:
        raise ValueError("corr_distance must be positive")
    rng = np.random.default_rng() if rng is None else rng
    n = layout.n
    root = _covariance_root(layout.sensor_positions, corr_distance)
    field = root @ rng.normal(size=(n, n))  # column n: field seen at receiver n
    sigma = np.where(np.asarray(los_flags, dtype=bool), sigma_los, sigma_nlos)
    return sigma * field


def realize_channel(layout: FactoryLayout, params: ChannelParams = None,
                    rng=None) -> ChannelRealization:
    """Draw one static channel matrix: gamma = h * sqrt(10^((-PL + s)/10))."""
    params = ChannelParams() if params is None else params
    rng = np.random.default_rng() if rng is None else rng
    n = layout.n
    # raw transmitter->receiver distances; LOS sampled on the raw distance,
    # path loss on the floored one
    d_raw = np.linalg.norm(layout.sensor_positions[:, None, :]
                           - layout.ap_positions[None, :, :], axis=2)
    p_los = los_probability(d_raw, params.clutter_density, params.clutter_size_m)
    los = rng.uniform(size=(n, n)) < p_los
    pl = path_loss_db(np.maximum(d_raw, params.distance_floor_m), params.carrier_ghz, los)
    if params.include_shadowing:
        sh = correlated_shadowing(layout, los, params.corr_distance_m,
                                  params.sigma_los_db, params.sigma_nlos_db, rng)
    else:
        sh = np.zeros((n, n))
    if params.include_fading:
        h = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / np.sqrt(2.0)
    else:
        h = np.ones((n, n), dtype=complex)
    gains = h * np.sqrt(10.0 ** ((-pl + sh) / 10.0))
    return ChannelRealization(gains=gains, los_flags=los, shadowing_db=sh)
