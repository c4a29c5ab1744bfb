"""Multi-objective tree-structured Parzen estimator over (k, eta0).

Observations are split by nondominated rank into a "good" set O_l and the
rest O_g (greedy hypervolume subset selection breaks the splitting front);
each parameter gets two univariate truncated-Gaussian Parzen mixtures l and g,
and the next trial point maximizes the ratio l(x)/g(x) over C candidates drawn
from l.  Both objectives are minimized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SearchSpace:
    k_range: tuple = (0.0, 1.0)
    eta0_range: tuple = (0.0, 200.0)

    def __post_init__(self):
        for lo, hi in (self.k_range, self.eta0_range):
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValueError("search ranges must be finite nonempty intervals")


@dataclass
class Observation:
    k: float
    eta0: float
    f: tuple          # (f1, f2), minimized
    trial: int = -1


@dataclass
class ObservationSet:
    observations: list
    theta: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")


def dominates(f, f_other) -> str:
    """Classify f against f_other under minimization.

    Returns 'dominates' (f strictly better somewhere, worse nowhere),
    'weakly_dominates' (componentwise equal), 'dominated', or 'incomparable'.
    """
    a = np.asarray(f, dtype=float)
    b = np.asarray(f_other, dtype=float)
    if np.any(np.isnan(a)) or np.any(np.isnan(b)):
        raise ValueError("NaN objective in dominance comparison")
    if np.all(a == b):
        return "weakly_dominates"
    if np.all(a <= b):
        return "dominates"
    if np.all(b <= a):
        return "dominated"
    return "incomparable"


def _strict_dominance_matrix(F: np.ndarray) -> np.ndarray:
    """dom[i, j] = point i strictly dominates point j."""
    le = (F[:, None, :] <= F[None, :, :]).all(axis=2)
    lt = (F[:, None, :] < F[None, :, :]).any(axis=2)
    return le & lt


def nondominated_sort(F: np.ndarray):
    """Indices grouped into fronts; ties (equal points) share a front."""
    F = np.asarray(F, dtype=float)
    if np.any(np.isnan(F)):
        raise ValueError("NaN objectives")
    n = len(F)
    dom = _strict_dominance_matrix(F)
    remaining = np.ones(n, dtype=bool)
    fronts = []
    while remaining.any():
        dominated_by_live = (dom & remaining[:, None]).any(axis=0)
        front = np.where(remaining & ~dominated_by_live)[0]
        fronts.append(front.tolist())
        remaining[front] = False
    return fronts


def hypervolume_2d(points, ref) -> float:
    """Area dominated by `points` and bounded by `ref` (minimization)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        return 0.0
    ref = np.asarray(ref, dtype=float)
    pts = np.minimum(pts, ref)          # out-of-box points contribute nothing
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    hv = 0.0
    level = ref[1]
    for i in order:
        x, y = pts[i]
        if y < level:
            hv += (ref[0] - x) * (level - y)
            level = y
    return hv


def greedy_hv_subset(points, m: int, ref):
    """Pick m points greedily by marginal hypervolume gain (ties: lowest index).

    Gains are computed incrementally against the lower envelope of the points
    picked so far (piecewise-constant in f1), so a pick costs O(n * |chosen|)
    vectorized work instead of n full hypervolume evaluations.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    if m >= n:
        return list(range(n))
    ref = np.asarray(ref, dtype=float)
    clipped = np.minimum(pts, ref)
    chosen: list = []
    remaining = list(range(n))
    for _ in range(m):
        if chosen:
            cx = clipped[chosen]
            order = np.argsort(cx[:, 0], kind="stable")
            xs = cx[order, 0]
            env = np.minimum.accumulate(cx[order, 1])
            starts = np.concatenate(([-np.inf], xs))
            ends = np.concatenate((xs, [ref[0]]))
            heights = np.concatenate(([ref[1]], env))
        else:
            starts = np.array([-np.inf])
            ends = np.array([ref[0]])
            heights = np.array([ref[1]])
        X = clipped[remaining, 0]
        Y = clipped[remaining, 1]
        drop = np.maximum(heights[None, :] - Y[:, None], 0.0)
        width = np.maximum(ends[None, :]
                           - np.maximum(starts[None, :], X[:, None]), 0.0)
        gains = np.sum(drop * width, axis=1)
        best_i, best_gain = None, -1.0
        for pos, i in enumerate(remaining):
            if gains[pos] > best_gain + 1e-15:
                best_i, best_gain = i, float(gains[pos])
        chosen.append(best_i)
        remaining.remove(best_i)
    return chosen


def pareto_front(observations):
    """Nondominated subset, first occurrence kept for duplicate objectives."""
    if not observations:
        return []
    F = np.array([o.f for o in observations], dtype=float)
    first = nondominated_sort(F)[0]
    out, seen = [], set()
    for i in first:
        key = (F[i, 0], F[i, 1])
        if key not in seen:
            seen.add(key)
            out.append(observations[i])
    return out


def split_observations(obs_set: ObservationSet):
    """Partition into (O_l, O_g) with |O_l| = ceil(theta |O|), capped |O|-1.

    O_l fills front by front; the splitting front is resolved by greedy
    hypervolume subset selection against a reference at 1.1x the componentwise
    maximum of the finite objectives.
    """
    obs = obs_set.observations
    n = len(obs)
    if n < 2:
        raise ValueError("need at least two observations to split")
    F = np.array([o.f for o in obs], dtype=float)
    if np.any(np.isnan(F)):
        raise ValueError("NaN objectives")
    n_l = min(math.ceil(obs_set.theta * n), n - 1)
    if np.all(F == F[0]):  # fully degenerate: insertion order
        return obs[:n_l], obs[n_l:]
    selected = []
    for front in nondominated_sort(F):
        if len(selected) + len(front) <= n_l:
            selected.extend(front)
            if len(selected) == n_l:
                break
            continue
        space_left = n_l - len(selected)
        finite = F[np.isfinite(F).all(axis=1)]
        ref = 1.1 * finite.max(axis=0) if len(finite) else np.zeros(2)
        picked = greedy_hv_subset(F[front], space_left, ref)
        selected.extend(front[i] for i in picked)
        break
    selected = sorted(selected)
    chosen = np.zeros(n, dtype=bool)
    chosen[selected] = True
    o_l = [obs[i] for i in range(n) if chosen[i]]
    o_g = [obs[i] for i in range(n) if not chosen[i]]
    return o_l, o_g


def _norm_cdf(z):
    return 0.5 * (1.0 + np.vectorize(math.erf)(np.asarray(z, dtype=float) / math.sqrt(2.0)))


@dataclass
class ParzenModel:
    """Uniform-prior truncated-Gaussian mixture on an interval.

    n centers plus one uniform component, all weighted 1/(n+1); each Gaussian
    is renormalized to the domain so the density integrates to one and stays
    strictly positive everywhere in it.
    """

    centers: np.ndarray
    bandwidths: np.ndarray
    domain: tuple
    _trunc_mass: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        lo, hi = self.domain
        self.centers = np.asarray(self.centers, dtype=float)
        self.bandwidths = np.asarray(self.bandwidths, dtype=float)
        if self._trunc_mass is None:
            if len(self.centers):
                self._trunc_mass = (_norm_cdf((hi - self.centers) / self.bandwidths)
                                    - _norm_cdf((lo - self.centers) / self.bandwidths))
            else:
                self._trunc_mass = np.empty(0)

    @property
    def n(self) -> int:
        return len(self.centers)

    def pdf(self, x):
        lo, hi = self.domain
        x = np.atleast_1d(np.asarray(x, dtype=float))
        w = 1.0 / (self.n + 1)
        dens = np.full(len(x), w / (hi - lo))
        if self.n:
            z = (x[:, None] - self.centers[None, :]) / self.bandwidths[None, :]
            comp = np.exp(-0.5 * z * z) / (self.bandwidths[None, :] * math.sqrt(2 * math.pi))
            comp /= self._trunc_mass[None, :]
            inside = (x >= lo) & (x <= hi)
            dens += w * comp.sum(axis=1) * inside
        return dens

    def sample(self, size: int, rng) -> np.ndarray:
        lo, hi = self.domain
        comp = rng.integers(0, self.n + 1, size)
        out = rng.uniform(lo, hi, size)          # the uniform component
        gaussian = comp < self.n
        todo = np.where(gaussian)[0]
        for _ in range(1000):
            if not len(todo):
                break
            draw = rng.normal(self.centers[comp[todo]], self.bandwidths[comp[todo]])
            ok = (draw >= lo) & (draw <= hi)
            out[todo[ok]] = draw[ok]
            todo = todo[~ok]
        if len(todo):  # pathological truncation: fall back to clipping
            out[todo] = np.clip(rng.normal(self.centers[comp[todo]],
                                           self.bandwidths[comp[todo]]), lo, hi)
        return out


def fit_parzen(values, domain) -> ParzenModel:
    """One truncated Gaussian per value; bandwidth from adjacent spacing.

    The bandwidth of a value is the larger of its gaps to the neighboring
    values (domain edges count as neighbors), clamped to
    [width / min(100, n), width].  Empty input gives the pure uniform prior.
    """
    lo, hi = domain
    vals = np.clip(np.asarray(values, dtype=float), lo, hi)
    n = len(vals)
    if n == 0:
        return ParzenModel(centers=np.empty(0), bandwidths=np.empty(0), domain=domain)
    width = hi - lo
    order = np.argsort(vals, kind="stable")
    sv = vals[order]
    left = np.concatenate(([lo], sv[:-1]))
    right = np.concatenate((sv[1:], [hi]))
    bw_sorted = np.maximum(sv - left, right - sv)
    bw_sorted = np.clip(bw_sorted, width / min(100, n), width)
    bw = np.empty(n)
    bw[order] = bw_sorted
    return ParzenModel(centers=vals, bandwidths=bw, domain=domain)


def propose(obs_set: ObservationSet, space: SearchSpace, n_candidates: int, rng):
    """Next (k, eta0): per parameter, draw candidates from l, keep argmax l/g."""
    o_l, o_g = split_observations(obs_set)
    out = []
    for attr, domain in (("k", space.k_range), ("eta0", space.eta0_range)):
        l_model = fit_parzen([getattr(o, attr) for o in o_l], domain)
        g_model = fit_parzen([getattr(o, attr) for o in o_g], domain)
        cands = l_model.sample(n_candidates, rng)
        score = l_model.pdf(cands) / g_model.pdf(cands)
        out.append(float(cands[int(np.argmax(score))]))
    return tuple(out)


def optimize(evaluate, space: SearchSpace, T: int, S: int, C: int = 24,
             theta: float = 0.5, rng=None, on_trial=None):
    """S uniform startup trials, then T guided trials; returns (front, history).

    A failed or non-finite evaluation is recorded as (inf, inf) and the run
    continues.  With a fixed rng the whole history is reproducible.
    """
    if not T >= S >= 1:
        raise ValueError("need T >= S >= 1")
    rng = np.random.default_rng() if rng is None else rng
    history = []

    def run_trial(k, eta0, idx):
        try:
            f = evaluate(k, eta0)
            f = (float(f[0]), float(f[1]))
            if any(map(math.isnan, f)):
                f = (math.inf, math.inf)
        except Exception:
            f = (math.inf, math.inf)
        obs = Observation(k=float(k), eta0=float(eta0), f=f, trial=idx)
        history.append(obs)
        if on_trial is not None:
            on_trial(obs)

    for s in range(S):
        run_trial(rng.uniform(*space.k_range), rng.uniform(*space.eta0_range), s)
    for t in range(T):
        if len(history) >= 2:
            k, eta0 = propose(ObservationSet(history, theta), space, C, rng)
        else:
            k, eta0 = rng.uniform(*space.k_range), rng.uniform(*space.eta0_range)
        run_trial(k, eta0, S + t)
    return pareto_front(history), history


def select_by_tail_cost(front, evaluate_tail):
    """Re-score each front member by its validation tail statistic; argmin wins,
    ties broken by the smaller first objective."""
    if not front:
        raise ValueError("empty front")
    tails = [float(evaluate_tail(o.k, o.eta0)) for o in front]
    best = min(range(len(front)), key=lambda i: (tails[i], front[i].f[0]))
    return front[best].k, front[best].eta0
