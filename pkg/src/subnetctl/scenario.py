"""Episode orchestration and metrics.

An episode freezes one factory deployment and channel realization, then runs
J plant steps of the co-simulation.  Time runs on two grids: the radio works
in 1-ms TTIs (packet generation every `source_period_ttis`, buffer drain each
TTI), while each plant advances once per `control_period_ttis` TTIs.  The
controller keeps a model-based estimate of its plant: every delivered
observation is rolled forward through the logged inputs to the current step,
and the estimate coasts through gaps, so a late packet still helps instead of
being applied as if it were fresh.

Seed discipline: a master seed spawns per-episode substreams for layout,
channel, initial state, process noise, measurement noise, and policy
randomness.  The first five are policy-independent, so different policies are
compared on identical worlds.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from . import linksim, motpe as motpe_mod, policy as policy_mod
from . import radio as radio_mod
from .plant import PlantModel, cartpole, solve_dare

X_THRESHOLD = 0.68          # cart-position failure bound, metres
THETA_THRESHOLD = 0.055 * math.pi   # pole-angle failure bound, radians

# magnitude bins for |x| and |theta| CCDFs; the failure thresholds are exact
# bin edges so exceedance probabilities at them come out of the histogram
# without interpolation error
STATE_BIN_EDGES = np.unique(np.concatenate(
    ([0.0], np.logspace(-6.0, 12.3, 184), [X_THRESHOLD, THETA_THRESHOLD])))
N_STATE_BINS = len(STATE_BIN_EDGES) - 1
DELAY_HIST_BINS = 256       # delivery-age histogram, in TTIs (last bin clips)

POLICY_NAMES = ("cica", "fixed", "mpr", "rr", "nointerf")


@dataclass
class PolicySpec:
    name: str
    cica_k: float | None = None
    cica_eta0: float | None = None
    rr_slots: int | None = None      # I, concurrent sub-slots per TTI
    rr_randomize: bool = False
    fixed_p: float | None = None     # defaults to p_max

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise ValueError(f"unknown policy {self.name!r}; expected one of {POLICY_NAMES}")
        if self.name == "cica" and (self.cica_k is None or self.cica_eta0 is None):
            raise ValueError("cica policy needs cica_k and cica_eta0 (train first "
                             "or pass literals)")
        if self.name == "rr" and not self.rr_slots:
            raise ValueError("rr policy needs rr_slots (e.g. 5 or 10)")

    @property
    def label(self) -> str:
        if self.name == "rr":
            return f"rr{self.rr_slots}"
        return self.name


@dataclass
class ScenarioConfig:
    n_subnetworks: int = 30
    horizon: int = 4000              # J, in plant steps
    episodes: int = 100
    seed: int = 1234
    sigma_w: float = 4.5e-4          # process & measurement noise std
    x0_half_width: float = 0.05
    control_period_ttis: int = 4     # plant advances once per this many TTIs
    source_period_ttis: int = 2      # T_n: packet generation cadence
    packet_bits: float = 1024.0      # 128-byte state report
    buffer_capacity: int = 2         # transmit queue depth, drop-oldest
    eta_cap: float = 1e9             # per-step cost cap for diverged plants
    state_clip: float = 1e12
    rebase_age_limit: int = 64       # max observation age (plant steps) worth using
    area: tuple = (20.0, 20.0)
    subnetwork_radius: float = 2.0
    radio: linksim.RadioParams = field(default_factory=linksim.RadioParams)
    channel: radio_mod.ChannelParams = field(default_factory=radio_mod.ChannelParams)
    plant_model: PlantModel | None = None

    def __post_init__(self):
        if self.horizon < 1 or self.episodes < 1 or self.n_subnetworks < 1:
            raise ValueError("horizon, episodes and n_subnetworks must be >= 1")

    def resolve_plant(self) -> PlantModel:
        return self.plant_model if self.plant_model is not None else cartpole(self.sigma_w)


@dataclass
class EpisodeResult:
    mean_lqr: np.ndarray       # (N,) per-plant mean LQR cost
    hist_abs_x: np.ndarray     # counts over STATE_BIN_EDGES bins, pooled steps*plants
    hist_abs_theta: np.ndarray
    delay_hist: np.ndarray     # delivery ages in TTIs
    diverged: np.ndarray       # (N,) bool, per-step cost hit the cap at least once
    n_steps: int
    n_plants: int
    dropped_packets: int


@dataclass
class MetricsSummary:
    p99_mean_lqr: float
    mean_of_means: float       # f1
    max_of_means: float        # f2
    failure_rate: float
    fr_x: float
    fr_theta: float
    ccdf_edges: np.ndarray
    ccdf_x: np.ndarray         # P(|x| > edge)
    ccdf_theta: np.ndarray
    n_episodes: int
    diverged_fraction: float


# ---------------------------------------------------------------------------
# queue kernel: counter representation of the per-subnetwork FIFO buffers
# ---------------------------------------------------------------------------
# q_upto  = packets generated so far (one every source_period TTIs)
# dcount  = packets removed so far (delivered or dropped)
# head_rem = remaining bits of the current head packet

def _drain_tti(bits, q_upto, dcount, head_rem, pkt_bits):
    """One TTI of fluid drain across all buffers; returns (dcount', head_rem',
    k_full) with k_full the number of packets fully delivered this TTI."""
    qlen = q_upto - dcount
    can = bits >= head_rem - 1e-12
    k_full = np.where(can, 1 + np.floor((bits - head_rem) / pkt_bits), 0).astype(np.int64)
    k_full = np.minimum(k_full, qlen)
    served = k_full > 0
    dcount = dcount + k_full
    left = np.where(served, bits - (head_rem + (k_full - 1) * pkt_bits), 0.0)
    more = (q_upto - dcount) > 0
    head_rem = np.where(
        served,
        np.where(more, pkt_bits - np.minimum(left, pkt_bits - 1e-9), pkt_bits),
        np.where(more & (bits > 0), head_rem - bits, head_rem),
    )
    head_rem = np.where(~more, pkt_bits, head_rem)
    return dcount, head_rem, k_full


def _spawn_streams(seed):
    """Per-episode named substreams; policy randomness is isolated last so the
    world (layout/channel/noise) is identical across policies."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    kids = ss.spawn(6)
    names = ("layout", "channel", "x0", "process", "measurement", "policy")
    return dict(zip(names, (np.random.default_rng(k) for k in kids)))


def run_episode(cfg: ScenarioConfig, policy: PolicySpec, seed) -> EpisodeResult:
    """Simulate one episode of cfg.horizon plant steps under the given policy."""
    streams = _spawn_streams(seed)
    n = cfg.n_subnetworks
    layout = radio_mod.deploy(n, cfg.area, cfg.subnetwork_radius, streams["layout"])
    chan = radio_mod.realize_channel(layout, cfg.channel, streams["channel"])
    return _simulate(cfg, policy, chan, streams)


def _simulate(cfg: ScenarioConfig, policy: PolicySpec, chan, streams) -> EpisodeResult:
    n = cfg.n_subnetworks
    J = cfg.horizon
    D = cfg.control_period_ttis
    period = cfg.source_period_ttis
    pkt = cfg.packet_bits
    cap = cfg.buffer_capacity
    params = cfg.radio
    p_max = params.p_max_w
    tti = params.tti_s

    model = cfg.resolve_plant()
    gain = solve_dare(model)
    A, Bm = model.A, model.B
    Qm, Rm = model.Q, model.R
    phi = gain.phi
    q = model.q
    Bvec = Bm[:, 0] if model.r == 1 else None
    if Bvec is None:
        raise NotImplementedError("vectorized episode core assumes a single input channel")

    # pre-drawn noise: process per step, measurement per (plant, source step) so
    # a resent packet carries the same sensor reading
    sig = np.sqrt(np.diag(model.noise_cov))
    x = streams["x0"].uniform(-cfg.x0_half_width, cfg.x0_half_width, (q, n))
    W = streams["process"].normal(0.0, 1.0, (J, q, n)) * sig[None, :, None]
    V = streams["measurement"].normal(0.0, 1.0, (J, q, n)) * sig[None, :, None]
    rng_policy = streams["policy"]

    # per-policy rate machinery; static policies price the channel once
    rate_static = None
    rate_iso = None
    cica_params = None
    if policy.name == "nointerf":
        dec = policy_mod.no_interference(n, p_max)
        rate_static = linksim.rates(dec.powers, chan, None, params, interference_free=True)
    elif policy.name == "fixed":
        dec = policy_mod.fixed_power(n, p_max if policy.fixed_p is None else policy.fixed_p,
                                     p_max)
        rate_static = linksim.rates(dec.powers, chan, None, params)
    elif policy.name == "mpr":
        dec = policy_mod.max_prod_rate(chan, params, rng=rng_policy)
        rate_static = linksim.rates(dec.powers, chan, None, params)
    elif policy.name == "rr":
        full = np.full(n, p_max)
        rate_iso = linksim.rates(full, chan, None, params, interference_free=True)
        slots = policy.rr_slots
        if not 1 <= slots <= n:
            raise ValueError(f"rr needs 1 <= slots <= {n}")
    else:  # cica
        cica_params = policy_mod.CicaParams(policy.cica_k, policy.cica_eta0, p_max)

    eta_prev = np.zeros(n)
    xhat = np.zeros((q, n))
    have = np.zeros(n, dtype=bool)
    base = np.full(n, -1, dtype=np.int64)     # source step of the estimator's anchor
    u = np.zeros(n)
    u_hist = np.empty((J, n))
    xs = np.empty((J, q, n))

    dcount = np.zeros(n, dtype=np.int64)
    head_rem = np.full(n, pkt)
    eta_sum = np.zeros(n)
    diverged = np.zeros(n, dtype=bool)
    age_chunks = []
    dropped = 0
    clip = cfg.state_clip
    bits_static = rate_static * tti if rate_static is not None else None
    slot_idx = np.arange(policy.rr_slots) if rate_iso is not None else None

    for s in range(J):
        xs[s] = x
        if cica_params is not None:
            dec = policy_mod.cica(eta_prev, cica_params)
            rate = linksim.rates(dec.powers, chan, None, params)
            bits_step = rate * tti
        newest = np.full(n, -1, dtype=np.int64)
        for tau in range(D * s, D * s + D):
            q_upto = tau // period + 1
            over = q_upto - dcount - cap
            if np.any(over > 0):
                drop = np.maximum(over, 0)
                head_rem = np.where(drop > 0, pkt, head_rem)
                dcount = dcount + drop
                dropped += int(drop.sum())
            if rate_iso is not None:
                bits = np.zeros(n)
                if policy.rr_randomize:
                    idx = rng_policy.choice(n, size=slots, replace=False)
                else:
                    idx = (tau * slots + slot_idx) % n
                bits[idx] = rate_iso[idx] * tti / slots
            elif bits_static is not None:
                bits = bits_static
            else:
                bits = bits_step
            prev_dcount = dcount
            dcount, head_rem, k_full = _drain_tti(bits, q_upto, dcount, head_rem, pkt)
            served = k_full > 0
            if served.any():
                newest[served] = dcount[served] - 1
                age_chunks.append(tau - prev_dcount[served] * period)
                second = k_full >= 2
                if second.any():
                    age_chunks.append(tau - (prev_dcount[second] + 1) * period)
        got = newest >= 0
        if got.any():
            # source step of the freshest delivered packet; roll its (noisy)
            # state through the logged inputs up to now
            gen_step = np.minimum((newest * period) // D, s)
            fresh = got & (gen_step > base) & (s - gen_step <= cfg.rebase_age_limit)
            current = fresh & (gen_step == s)
            if current.any():  # same-period observation: no roll needed
                base[current] = s
                xhat[:, current] = xs[s][:, current] + V[s][:, current]
                have[current] = True
            for idx in (fresh & (gen_step < s)).nonzero()[0]:
                g = gen_step[idx]
                base[idx] = g
                z = xs[g, :, idx] + V[g, :, idx]
                for j in range(g, s):
                    z = np.clip(A @ z + Bvec * u_hist[j, idx], -clip, clip)
                xhat[:, idx] = z
                have[idx] = True
        u = np.where(have, -(phi @ xhat)[0], u)
        eta_raw = np.einsum("in,ij,jn->n", x, Qm, x) + Rm[0, 0] * u * u
        diverged |= eta_raw >= cfg.eta_cap
        eta = np.minimum(eta_raw, cfg.eta_cap)
        eta_sum += eta
        eta_prev = eta
        u_hist[s] = u
        x = np.clip(A @ x + Bvec[:, None] * u[None, :] + W[s], -clip, clip)
        xhat = np.clip(A @ xhat + Bvec[:, None] * u[None, :], -clip, clip)

    hist_x = _magnitude_hist(np.abs(xs[:, 0, :]))
    hist_th = _magnitude_hist(np.abs(xs[:, 2, :]))
    delay_hist = np.zeros(DELAY_HIST_BINS, dtype=np.int64)
    if age_chunks:
        ages = np.clip(np.concatenate(age_chunks), 0, DELAY_HIST_BINS - 1)
        delay_hist += np.bincount(ages, minlength=DELAY_HIST_BINS)
    return EpisodeResult(
        mean_lqr=eta_sum / J,
        hist_abs_x=hist_x,
        hist_abs_theta=hist_th,
        delay_hist=delay_hist,
        diverged=diverged,
        n_steps=J,
        n_plants=n,
        dropped_packets=dropped,
    )


def _magnitude_hist(values) -> np.ndarray:
    idx = np.searchsorted(STATE_BIN_EDGES, values.ravel(), side="right") - 1
    return np.bincount(np.clip(idx, 0, N_STATE_BINS - 1), minlength=N_STATE_BINS)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def objectives(results) -> tuple:
    """(f1, f2) = (grand mean, max) of per-plant mean LQR costs."""
    if not results:
        raise ValueError("no episode results")
    pooled = np.concatenate([r.mean_lqr for r in results])
    return float(pooled.mean()), float(pooled.max())


def _exceed_fraction(hist, threshold, total):
    j = np.searchsorted(STATE_BIN_EDGES, threshold)
    return float(hist[j:].sum()) / total if total else 0.0


def summarize(results, x_th: float = X_THRESHOLD,
              theta_th: float = THETA_THRESHOLD) -> MetricsSummary:
    """Pool per-plant mean costs and per-step state magnitudes across episodes."""
    if not results:
        raise ValueError("no episode results")
    pooled = np.concatenate([r.mean_lqr for r in results])
    hist_x = np.sum([r.hist_abs_x for r in results], axis=0)
    hist_th = np.sum([r.hist_abs_theta for r in results], axis=0)
    total = int(hist_x.sum())
    fr_x = _exceed_fraction(hist_x, x_th, total)
    fr_th = _exceed_fraction(hist_th, theta_th, total)
    tail_x = np.cumsum(hist_x[::-1])[::-1]
    tail_th = np.cumsum(hist_th[::-1])[::-1]
    denom = max(total, 1)
    return MetricsSummary(
        p99_mean_lqr=float(np.quantile(pooled, 0.99)),
        mean_of_means=float(pooled.mean()),
        max_of_means=float(pooled.max()),
        failure_rate=max(fr_x, fr_th),
        fr_x=fr_x,
        fr_theta=fr_th,
        ccdf_edges=STATE_BIN_EDGES[:-1].copy(),
        ccdf_x=tail_x / denom,
        ccdf_theta=tail_th / denom,
        n_episodes=len(results),
        diverged_fraction=float(np.mean([r.diverged.mean() for r in results])),
    )


# ---------------------------------------------------------------------------
# batches, training, comparison
# ---------------------------------------------------------------------------

def episode_seeds(master_seed: int, n_episodes: int, offset: int = 0):
    """Deterministic per-episode seed sequences; the same master seed gives the
    same worlds to every policy."""
    root = np.random.SeedSequence(master_seed)
    return root.spawn(offset + n_episodes)[offset:]


def _episode_worker(args):
    cfg, policy, seed = args
    return run_episode(cfg, policy, seed)


def run_episodes(cfg: ScenarioConfig, policy: PolicySpec, n_episodes: int | None = None,
                 jobs: int = 1, seed_offset: int = 0):
    """Run a batch of episodes on spawned substreams; order is deterministic."""
    n_eps = cfg.episodes if n_episodes is None else n_episodes
    seeds = episode_seeds(cfg.seed, n_eps, seed_offset)
    if jobs <= 1 or n_eps == 1:
        return [run_episode(cfg, policy, s) for s in seeds]
    with get_context("spawn").Pool(jobs) as pool:
        return pool.map(_episode_worker, [(cfg, policy, s) for s in seeds])


@dataclass
class MotpeConfig:
    trials: int = 200          # guided trials after startup
    startup: int = 10
    candidates: int = 24
    theta: float = 0.5
    train_episodes: int = 20
    validation_episodes: int = 20
    space: motpe_mod.SearchSpace = field(default_factory=motpe_mod.SearchSpace)


def train_cica(train_cfg: ScenarioConfig, motpe_cfg: MotpeConfig = None,
               jobs: int = 1, on_trial=None):
    """Search (k, eta0) with the multi-objective TPE over co-simulated episodes.

    Every trial is scored on the same `train_episodes` worlds (common random
    numbers), then the front is re-scored on held-out validation worlds by
    99th-percentile mean LQR cost and the argmin is selected.
    Returns (k_star, eta0_star, front, history).
    """
    motpe_cfg = MotpeConfig() if motpe_cfg is None else motpe_cfg

    def evaluate(k, eta0):
        spec = PolicySpec("cica", cica_k=k, cica_eta0=eta0)
        results = run_episodes(train_cfg, spec, motpe_cfg.train_episodes, jobs=jobs)
        return objectives(results)

    root = np.random.SeedSequence(train_cfg.seed)
    rng = np.random.default_rng(root.spawn(1)[0].generate_state(2))
    front, history = motpe_mod.optimize(
        evaluate, motpe_cfg.space, T=motpe_cfg.trials, S=motpe_cfg.startup,
        C=motpe_cfg.candidates, theta=motpe_cfg.theta, rng=rng, on_trial=on_trial)

    def tail(k, eta0):
        spec = PolicySpec("cica", cica_k=k, cica_eta0=eta0)
        results = run_episodes(train_cfg, spec, motpe_cfg.validation_episodes,
                               jobs=jobs, seed_offset=motpe_cfg.train_episodes)
        return summarize(results).p99_mean_lqr

    k_star, eta0_star = motpe_mod.select_by_tail_cost(front, tail)
    return k_star, eta0_star, front, history


def compare(cfg: ScenarioConfig, policies, densities=(25, 30, 35),
            episodes: int | None = None, jobs: int = 1, on_cell=None):
    """Policy x density sweep on shared worlds; returns a list of row dicts."""
    rows = []
    for n_sub in densities:
        cfg_n = dataclasses.replace(cfg, n_subnetworks=n_sub)
        for spec in policies:
            t0 = time.perf_counter()
            try:
                results = run_episodes(cfg_n, spec, episodes, jobs=jobs)
                summary = summarize(results)
                row = {
                    "policy": spec.label,
                    "density": n_sub,
                    "p99_mean_lqr": summary.p99_mean_lqr,
                    "mean_of_means": summary.mean_of_means,
                    "max_of_means": summary.max_of_means,
                    "failure_rate": summary.failure_rate,
                    "fr_x": summary.fr_x,
                    "fr_theta": summary.fr_theta,
                    "diverged_fraction": summary.diverged_fraction,
                    "episodes": summary.n_episodes,
                    "error": "",
                    "_summary": summary,
                }
            except Exception as e:  # report the cell, keep sweeping
                row = {"policy": spec.label, "density": n_sub, "error": str(e)}
            row["_seconds"] = time.perf_counter() - t0
            rows.append(row)
            if on_cell is not None:
                on_cell(row)
    return rows
