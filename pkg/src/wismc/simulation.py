"""Monte Carlo generation of univariate and leader/follower WISMC paths.

Randomness comes from two PCG64 streams spawned from one seed: stream 0
drives the (leader's) univariate sampler, stream 1 the follower. A follower
therefore never perturbs the leader path.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .estimation import FollowerKernel, FollowerSampler
from .index_process import IndexSpec
from .market_data import BinSpec, ReturnSeries, StatePath
from .semimarkov import IndexedKernel, KernelSampler

log = logging.getLogger(__name__)

GENERATOR = "numpy.PCG64"


@dataclass(frozen=True)
class SimConfig:
    horizon: int
    seed: int = 0
    initial_state: int | None = None
    initial_index: float | None = None
    reporting: int = 0
    min_count: float = 5

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass
class SimTrace:
    """Optional bookkeeping filled in by the samplers."""

    u_at_transitions: list = field(default_factory=list)
    tier_counts: np.ndarray = field(default_factory=lambda: np.zeros(5, dtype=np.int64))
    follower_tier_counts: np.ndarray = field(default_factory=lambda: np.zeros(5, dtype=np.int64))


@dataclass(frozen=True)
class BivariatePath:
    leader: StatePath
    follower: StatePath

    def __post_init__(self):
        if len(self.leader) != len(self.follower):
            raise ValueError("leader and follower must share the minute grid")


def streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    leader, follower = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(leader)), np.random.Generator(np.random.PCG64(follower))


def default_warmup(lam: float) -> int:
    """10 / (1 - lambda) minutes; none for the unweighted index."""
    return 0 if lam >= 1.0 else int(np.ceil(10.0 / (1.0 - lam)))


class IndexTracker:
    """Streaming EWMA index, identical to the batch recursion in index_process."""

    def __init__(self, spec: IndexSpec, horizon: int, u0: float | None = None):
        self.lam = spec.lam
        self.sq = spec.squared_representative
        self.u0 = spec.u0 if u0 is None else u0
        self.window = spec.window
        self.drop = self.lam ** (self.window + 1) if self.window else 0.0
        self.x = np.empty(horizon)
        self.t = 0
        self.num = 0.0
        self.den = 0.0

    def push(self, state: int) -> None:
        lam, t = self.lam, self.t
        xv = self.sq[state]
        self.x[t] = xv
        self.num = lam * (self.num + xv)
        self.den = lam * (self.den + 1.0)
        if self.window is not None and t >= self.window:
            self.num -= self.drop * self.x[t - self.window]
            self.den -= self.drop
        self.t = t + 1

    def value(self) -> float:
        return self.u0 if self.t == 0 else self.num / self.den


def _initial(kernel: IndexedKernel, cfg: SimConfig) -> int:
    return kernel.s // 2 if cfg.initial_state is None else cfg.initial_state


class _RowDraw:
    """Flattened inverse-CDF tables for (destination, sojourn) per kernel row."""

    def __init__(self, sampler: KernelSampler):
        self.sampler = sampler
        self.cache = {}

    def get(self, i, v):
        hit = self.cache.get((i, v))
        if hit is None:
            q_row, S, tier = self.sampler.row(i, v)
            cdf = np.cumsum(q_row.ravel())
            hit = (cdf / cdf[-1], q_row.shape[1], tier)
            self.cache[(i, v)] = hit
        return hit


def simulate_event(kernel: IndexedKernel, spec: IndexSpec, cfg: SimConfig,
                   trace: SimTrace | None = None) -> StatePath:
    """Jump-by-jump sampler: draw (next state, sojourn) from the kernel row of (J_n, level(U_n))."""
    rng, _ = streams(cfg.seed)
    H = cfg.horizon
    bins = kernel.index_bins
    draw = _RowDraw(KernelSampler(kernel, cfg.min_count))
    tracker = IndexTracker(spec, H, cfg.initial_index)
    states = np.empty(H, dtype=np.int64)
    i = _initial(kernel, cfg)
    t = 0
    uniforms = rng.random(1024)
    k = 0
    while t < H:
        U = tracker.value()
        cdf, t_max, tier = draw.get(i, bins.level(U))
        if trace is not None:
            trace.u_at_transitions.append(U)
            trace.tier_counts[tier] += 1
        if k == len(uniforms):
            uniforms = rng.random(1024)
            k = 0
        cell = int(np.searchsorted(cdf, uniforms[k], side="right"))
        k += 1
        j, d = divmod(min(cell, len(cdf) - 1), t_max)
        d = min(d + 1, H - t)
        states[t:t + d] = i
        for _ in range(d):
            tracker.push(i)
        t += d
        i = j
        if cfg.reporting and t // cfg.reporting != (t - d) // cfg.reporting:
            log.info("event sampler: %d / %d minutes", t, H)
    return StatePath(states)


class _StepState:
    """Minute-by-minute sampler state for one WISMC component."""

    def __init__(self, kernel: IndexedKernel, spec: IndexSpec, H: int, i0: int,
                 u_init: float | None, min_count: float, trace: SimTrace | None):
        self.sampler = KernelSampler(kernel, min_count)
        self.bins = kernel.index_bins
        self.tracker = IndexTracker(spec, H, u_init)
        self.trace = trace
        self.i = i0
        self.u = 0
        self._enter()

    def _enter(self):
        U = self.tracker.value()
        q_row, S, tier = self.sampler.row(self.i, self.bins.level(U))
        self.q_row, self.S = q_row, S
        if self.trace is not None:
            self.trace.u_at_transitions.append(U)
            self.trace.tier_counts[tier] += 1

    def step(self, r: float) -> int:
        """Advance one minute using uniform ``r``; returns the new state."""
        S, u = self.S, self.u
        stay = S[u + 1] / S[u]
        if r < stay:
            self.u = u + 1
        else:
            col = self.q_row[:, u]
            # reuse the uniform's excess over the stay mass to pick the destination
            j = int(np.searchsorted(np.cumsum(col), (r - stay) * S[u], side="right"))
            if j >= len(col):
                j = int(np.flatnonzero(col)[-1])
            self.i = j
            self.u = 0
            self._enter()
        return self.i


def simulate_stepwise(kernel: IndexedKernel, spec: IndexSpec, cfg: SimConfig,
                      trace: SimTrace | None = None) -> StatePath:
    """Per-minute sampler from the backward-augmented one-step probabilities."""
    rng, _ = streams(cfg.seed)
    H = cfg.horizon
    uniforms = rng.random(H)
    st = _StepState(kernel, spec, H, _initial(kernel, cfg), cfg.initial_index, cfg.min_count, trace)
    states = np.empty(H, dtype=np.int64)
    states[0] = st.i
    st.tracker.push(st.i)
    for t in range(1, H):
        i = st.step(uniforms[t])
        states[t] = i
        st.tracker.push(i)
        if cfg.reporting and t % cfg.reporting == 0:
            log.info("stepwise sampler: %d / %d minutes", t, H)
    return StatePath(states)


def simulate_bivariate(leader_kernel: IndexedKernel, follower: FollowerKernel,
                       leader_spec: IndexSpec, follower_spec: IndexSpec, cfg: SimConfig,
                       trace: SimTrace | None = None) -> BivariatePath:
    """Leader evolves on its own; each minute the follower draws from its
    one-step law conditioned on the sign of the leader's new state."""
    rng_l, rng_f = streams(cfg.seed)
    H = cfg.horizon
    u_lead = rng_l.random(H)
    u_foll = rng_f.random(H)
    lead = _StepState(leader_kernel, leader_spec, H, _initial(leader_kernel, cfg),
                      cfg.initial_index, cfg.min_count, trace)
    fs = FollowerSampler(follower, cfg.min_count)
    fbins = follower.index_bins
    center_l = leader_kernel.s // 2
    ftrack = IndexTracker(follower_spec, H)
    by_minute = follower.index_at == "minute"

    zl = np.empty(H, dtype=np.int64)
    zf = np.empty(H, dtype=np.int64)
    i1, u1 = follower.s // 2, 0
    zl[0], zf[0] = lead.i, i1
    lead.tracker.push(lead.i)
    u_prev = ftrack.value()
    v1 = fbins.level(u_prev)
    ftrack.push(i1)
    for t in range(1, H):
        i2 = lead.step(u_lead[t])
        zl[t] = i2
        lead.tracker.push(i2)
        sign = (i2 > center_l) - (i2 < center_l)
        if by_minute:
            v1 = fbins.level(u_prev)
        vec, _ = fs.lookup(i1, u1, v1, sign)
        o = int(np.searchsorted(np.cumsum(vec), u_foll[t] * vec.sum(), side="right"))
        o = min(o, len(vec) - 1)
        u_prev = ftrack.value()
        if o == i1:
            u1 += 1
        else:
            i1, u1 = o, 0
            if not by_minute:
                v1 = fbins.level(u_prev)
        zf[t] = i1
        ftrack.push(i1)
    if trace is not None:
        trace.follower_tier_counts += fs.tier_counts
    return BivariatePath(StatePath(zl), StatePath(zf))


def paths_to_returns(path: StatePath, bins: BinSpec) -> ReturnSeries:
    return ReturnSeries(bins.representatives[path.states])
