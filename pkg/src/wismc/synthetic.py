"""Hand-built models with known structure, used as ground truth in tests and scripts."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .estimation import FollowerKernel
from .index_process import IndexBins, IndexSpec
from .market_data import BinSpec, ReturnSeries
from .semimarkov import IndexedKernel
from .simulation import SimConfig, default_warmup, paths_to_returns, simulate_bivariate

# five return states at +-1 and +-2 per mille
REPS5 = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * 1e-3
REPS3 = np.array([-1.0, 0.0, 1.0]) * 1e-3


@dataclass(frozen=True)
class SyntheticModel:
    kernel: IndexedKernel
    bins: BinSpec
    spec: IndexSpec


def bins_for(reps: np.ndarray) -> BinSpec:
    """Return bins whose edges sit halfway between the representatives."""
    reps = np.asarray(reps, dtype=float)
    step = reps[-1] - reps[-2]
    mid = 0.5 * (reps[1:] + reps[:-1])
    mid = 0.5 * (mid - mid[::-1])  # exact symmetry
    edges = np.concatenate(([-(reps[-1] + step / 2)], mid, [reps[-1] + step / 2]))
    return BinSpec(edges, reps)


def truncated_geometric(p: float, t_max: int) -> np.ndarray:
    """P(T = t), t = 1..t_max, for a geometric sojourn conditioned on T <= t_max."""
    w = (1.0 - p) ** np.arange(t_max) * p
    return w / w.sum()


def geometric_kernel(P=None, exit_probs=(0.1, 0.15, 0.2), t_max: int = 8) -> IndexedKernel:
    """Single-level kernel q_ij(t) = P_ij g_i(t) with truncated geometric g_i."""
    if P is None:
        P = [[0.0, 0.6, 0.4], [0.5, 0.0, 0.5], [0.3, 0.7, 0.0]]
    P = np.asarray(P, dtype=float)
    s = len(P)
    q = np.zeros((s, 1, s, t_max))
    for i in range(s):
        q[i, 0] = P[i][:, None] * truncated_geometric(exit_probs[i], t_max)[None, :]
    return IndexedKernel.from_increments(q)


def clustering_model(strength: float = 0.7, lam: float = 0.97, t_max: int = 40,
                     index_bounds=(0.6e-6, 1.0e-6, 1.4e-6, 1.8e-6)) -> SyntheticModel:
    """Five-state model whose activity rises with the index level.

    Every non-center state lasts one minute and moves to states whose
    representative returns average to zero, so returns form a martingale
    difference sequence while the level feedback clusters |r|.
    """
    bins = IndexBins(np.asarray(index_bounds, dtype=float))
    L = bins.levels
    s = 5
    q = np.zeros((s, L, s, t_max))
    for v in range(L):
        w = strength * v / max(L - 1, 1)
        exit_p = 0.05 + 0.3 * w
        soj = (1.0 - exit_p) ** np.arange(t_max) * exit_p
        big = 0.2 + 0.3 * w
        for j, pj in ((0, big / 2), (4, big / 2), (1, (1 - big) / 2), (3, (1 - big) / 2)):
            q[2, v, j] = pj * soj
        c = 0.3 - 0.2 * w
        # from +2: a to -2, b to -1, d to +1 with -2a - b + d = 0
        a, b = 0.25 * (1 - c), 0.125 * (1 - c)
        d = 2 * a + b
        q[4, v, 0, 0], q[4, v, 1, 0], q[4, v, 3, 0], q[4, v, 2, 0] = a, b, d, c
        q[0, v, 4, 0], q[0, v, 3, 0], q[0, v, 1, 0], q[0, v, 2, 0] = a, b, d, c
        # from +1: a to -2, b to -1, e to +2 with -2a - b + 2e = 0
        a = (0.15 + 0.15 * w) * (1 - c)
        b = (1 - c - 2 * a) / 1.5
        e = a + b / 2
        q[3, v, 0, 0], q[3, v, 1, 0], q[3, v, 4, 0], q[3, v, 2, 0] = a, b, e, c
        q[1, v, 4, 0], q[1, v, 3, 0], q[1, v, 0, 0], q[1, v, 2, 0] = a, b, e, c
    kernel = IndexedKernel.from_increments(q, bins, meta={"model": "clustering"})
    return SyntheticModel(kernel, bins_for(REPS5), IndexSpec(lam, REPS5 ** 2))


def roundtrip_model(seed: int = 11, lam: float = 0.9, t_max: int = 4,
                    index_bounds=(1.65e-6, 1.97e-6, 2.22e-6, 2.47e-6)) -> SyntheticModel:
    """Random 5-state, 5-level kernel with short sojourns and mildly level-dependent rows."""
    rng = np.random.default_rng(seed)
    bins = IndexBins(np.asarray(index_bounds, dtype=float))
    s, L = 5, bins.levels
    q = np.zeros((s, L, s, t_max))
    base_soj = 0.6 ** np.arange(t_max)
    for i in range(s):
        base_dest = rng.dirichlet(np.full(s - 1, 4.0))
        for v in range(L):
            # tilt destinations towards the extreme states as the level rises
            tilt = np.exp(0.1 * (v - L // 2) * np.abs(np.arange(s) - s // 2))
            dest = np.delete(tilt, i) * base_dest
            soj = base_soj * np.exp(-0.2 * v * np.arange(t_max))
            q[i, v] = np.insert(dest / dest.sum(), i, 0.0)[:, None] * (soj / soj.sum())[None, :]
    kernel = IndexedKernel.from_increments(q, bins, meta={"model": "roundtrip", "seed": seed})
    return SyntheticModel(kernel, bins_for(REPS5), IndexSpec(lam, REPS5 ** 2))


def level_constant(kernel: IndexedKernel, index_bins: IndexBins) -> IndexedKernel:
    """Copy the level-0 rows of a kernel to every level of ``index_bins``."""
    Q = np.repeat(kernel.Q[:, :1], index_bins.levels, axis=1)
    return IndexedKernel(Q, index_bins, meta={"model": "level_constant"})


def copy_sign_follower(s: int, t_max: int, p_copy: float = 0.7,
                       index_bins: IndexBins | None = None) -> FollowerKernel:
    """Follower whose next state is center + leader sign with probability
    ``p_copy`` and uniform otherwise, regardless of its own history."""
    uniform = np.full(s, 1.0 / s)

    def fn(i, u, v, sign):
        out = (1.0 - p_copy) * uniform
        out[s // 2 + sign] += p_copy
        return out

    return FollowerKernel.from_function(s, t_max, fn, index_bins)


def independent_follower(s: int, t_max: int, probs=None,
                         index_bins: IndexBins | None = None) -> FollowerKernel:
    """Follower whose one-step law ignores the leader sign."""
    base = np.full(s, 1.0 / s) if probs is None else np.asarray(probs, dtype=float)

    def fn(i, u, v, sign):
        out = 0.5 * base.copy()
        out[i] += 0.5  # sticky, to keep some sojourns longer than a minute
        return out

    return FollowerKernel.from_function(s, t_max, fn, index_bins)


def bivariate_ground_truth(horizon: int, seed: int = 0, p_copy: float = 0.54,
                           warmup: int | None = None) -> tuple[ReturnSeries, ReturnSeries]:
    """Leader from the clustering model, follower copying the leader's sign."""
    lead = clustering_model()
    fbins = IndexBins(np.empty(0))
    follower = copy_sign_follower(5, lead.kernel.t_max, p_copy, fbins)
    warm = default_warmup(lead.spec.lam) if warmup is None else warmup
    bp = simulate_bivariate(lead.kernel, follower, lead.spec, lead.spec,
                            SimConfig(horizon + warm, seed))
    rl = paths_to_returns(bp.leader, lead.bins).values[warm:]
    rf = paths_to_returns(bp.follower, lead.bins).values[warm:]
    return ReturnSeries(rl, "LEAD"), ReturnSeries(rf, "FOLL")


def write_tick_csv(path, returns: ReturnSeries, t0: int = 1_599_999_960, p0: float = 100.0,
                   interval: int = 60) -> Path:
    """One tick per minute whose prices reproduce ``returns`` after resampling."""
    r = np.asarray(returns.values, dtype=float)
    prices = np.empty(len(r) + 1)
    prices[0] = p0
    for k, x in enumerate(r):
        prices[k + 1] = prices[k] * (1.0 + x)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "price"])
        for k, px in enumerate(prices.tolist()):
            w.writerow([t0 + interval * k, repr(px)])
    return path
