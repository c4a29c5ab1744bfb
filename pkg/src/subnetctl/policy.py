"""Per-TTI transmit-power and scheduling policies.

The interesting one is the control-aware logistic policy: each subnetwork maps
its own plant's latest instantaneous LQR cost through a logistic curve to a
transmit power, with no channel knowledge at all.  The benchmarks bracket it:
fixed full power, a channel-genie maximizing the product of rates, round-robin
TDMA, and an interference-free upper reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linksim import RadioParams, noise_power, _power_gains


@dataclass
class CicaParams:
    """Logistic power curve psi(eta) = nu / (1 + exp(-k (eta - eta0)))."""

    k: float
    eta0: float
    nu: float = 1e-3

    def __post_init__(self):
        if self.k <= 0 or self.eta0 <= 0 or self.nu <= 0:
            raise ValueError("CICA parameters must be positive")


@dataclass
class PolicyDecision:
    powers: np.ndarray
    active: np.ndarray            # boolean mask
    slot_fraction: float = 1.0    # fraction of the TTI each active link transmits
    interference_free: bool = False


def cica(etas, params: CicaParams) -> PolicyDecision:
    """Map each plant's instantaneous LQR cost to a power; channel-free."""
    etas = np.asarray(etas, dtype=float)
    z = np.clip(-params.k * (etas - params.eta0), -700.0, 700.0)
    powers = params.nu / (1.0 + np.exp(z))
    return PolicyDecision(powers=powers, active=np.ones(len(etas), dtype=bool))


def fixed_power(n: int, p: float, p_max: float = 1e-3) -> PolicyDecision:
    if not 0 <= p <= p_max:
        raise ValueError(f"power {p} outside [0, {p_max}]")
    return PolicyDecision(powers=np.full(n, float(p)), active=np.ones(n, dtype=bool))


def no_interference(n: int, p_max: float = 1e-3) -> PolicyDecision:
    """Everyone at full power, cross-gains ignored downstream — best case."""
    return PolicyDecision(powers=np.full(n, p_max), active=np.ones(n, dtype=bool),
                          interference_free=True)


def round_robin(n: int, I: int, now: int, rng=None, randomize: bool = False) -> PolicyDecision:
    """Schedule I subnetworks this TTI, each alone in a 1/I-ms sub-slot.

    Sub-slot isolation means zero mutual interference; the shorter airtime is
    modeled by slot_fraction scaling of delivered bits.  Default is a rotating
    pointer advancing I positions per TTI, which serves every subnetwork at
    the same long-run share I/n; randomize=True draws the set uniformly
    without replacement instead.
    """
    if not 1 <= I <= n:
        raise ValueError(f"need 1 <= I <= n, got I={I}, n={n}")
    if randomize:
        rng = np.random.default_rng() if rng is None else rng
        idx = rng.choice(n, size=I, replace=False)
    else:
        idx = (now * I + np.arange(I)) % n
    active = np.zeros(n, dtype=bool)
    active[idx] = True
    powers = np.where(active, 1e-3, 0.0)
    return PolicyDecision(powers=powers, active=active, slot_fraction=1.0 / I,
                          interference_free=True)


@dataclass
class MprConfig:
    n_starts: int = 5
    n_iters: int = 200
    init_step_frac: float = 0.25   # initial line-search step, fraction of p_max
    min_step_frac: float = 1e-9


def max_prod_rate(channel, params: RadioParams = None, opt_cfg: MprConfig = None,
                  rng=None) -> PolicyDecision:
    """Powers approximately maximizing sum_n ln Y_n over [eps, p_max]^N.

    Projected gradient ascent with backtracking line search and multi-start;
    the fixed-power point is always one start, so the returned objective can
    never fall below the fixed-power benchmark.  Benchmark-only: needs the
    full gain matrix.
    """
    params = RadioParams() if params is None else params
    opt_cfg = MprConfig() if opt_cfg is None else opt_cfg
    rng = np.random.default_rng(0) if rng is None else rng
    G = _power_gains(channel)
    n = G.shape[0]
    p_max = params.p_max_w
    eps = 1e-6 * p_max
    g_diag = np.diag(G).copy()
    sigma2 = noise_power(params)
    bw = params.bandwidth_hz
    ln2 = math.log(2.0)

    def objective(p):
        interf = G.T @ p - p * g_diag + sigma2
        snr = p * g_diag / interf
        return float(np.sum(np.log(bw * np.log2(1.0 + snr))))

    def gradient(p):
        interf = G.T @ p - p * g_diag + sigma2
        snr = p * g_diag / interf
        ups = bw * np.log2(1.0 + snr)
        c = (bw / ln2) / (ups * (1.0 + snr))
        t = c * snr / interf
        # d/dp_j: own-SNR gain minus the damage to every other link
        return c * g_diag / interf - G @ t + g_diag * t

    starts = [np.full(n, p_max)]
    for _ in range(opt_cfg.n_starts - 1):
        starts.append(rng.uniform(eps, p_max, n))

    best_p, best_v = None, -np.inf
    for p0 in starts:
        p = np.clip(p0, eps, p_max)
        v = objective(p)
        step = opt_cfg.init_step_frac * p_max
        for _ in range(opt_cfg.n_iters):
            g = gradient(p)
            g_inf = np.max(np.abs(g))
            if g_inf == 0.0:
                break
            d = g / g_inf
            improved = False
            while step > opt_cfg.min_step_frac * p_max:
                p_try = np.clip(p + step * d, eps, p_max)
                v_try = objective(p_try)
                if v_try > v:
                    p, v = p_try, v_try
                    step = min(step * 1.5, p_max)
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break
        if v > best_v:
            best_v, best_p = v, p
    return PolicyDecision(powers=best_p, active=np.ones(n, dtype=bool))
