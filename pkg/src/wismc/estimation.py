"""Counting estimators for the indexed kernel and the follower's one-step law."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridMismatch, InsufficientData
from .index_process import IndexBins, IndexPath
from .market_data import StatePath
from .semimarkov import IndexedKernel, KernelSampler, OneStepDist, _base

log = logging.getLogger(__name__)

SIGNS = (-1, 0, 1)


@dataclass
class KernelCounts:
    n_transition: np.ndarray
    censored: int = 0

    @property
    def n_context(self) -> np.ndarray:
        return self.n_transition.sum(axis=(2, 3))

    def merge(self, other: "KernelCounts") -> "KernelCounts":
        return KernelCounts(self.n_transition + other.n_transition, self.censored + other.censored)


def count_transitions(path: StatePath, index: IndexPath, bins: IndexBins, t_max: int,
                      s: int | None = None) -> KernelCounts:
    """Tally completed sojourns by context (J_n, level of U_n) and outcome (J_{n+1}, length)."""
    s = s if s is not None else int(path.states.max()) + 1
    J, T = path.jumps, path.times
    counts = np.zeros((s, bins.levels, s, t_max), dtype=np.int64)
    if len(T) >= 2:
        i = J[:-1]
        v = bins.level(index.at_transitions[:-1])
        j = J[1:]
        t = np.minimum(np.diff(T), t_max)
        np.add.at(counts, (i, v, j, t - 1), 1)
    return KernelCounts(counts, censored=1)


def kernel_from_counts(counts: KernelCounts, bins: IndexBins, meta: dict | None = None) -> IndexedKernel:
    n = counts.n_transition.astype(float)
    ctx = n.sum(axis=(2, 3), keepdims=True)
    q = np.divide(n, ctx, out=np.zeros_like(n), where=ctx > 0)
    Q = np.cumsum(q, axis=3)
    # exact 1 at t_max for populated rows; the cumulative sum can land an ulp off
    tot = Q[..., -1].sum(axis=2, keepdims=True)
    Q = np.divide(Q, tot[..., None], out=Q, where=tot[..., None] > 0)
    np.clip(Q, 0.0, 1.0, out=Q)
    return IndexedKernel(Q, bins, counts.n_context.astype(float), dict(meta or {}))


def estimate_kernel(path: StatePath, index: IndexPath, bins: IndexBins, t_max: int,
                    s: int | None = None) -> IndexedKernel:
    """Plug-in estimate q_ij(v; t) = N(i, v, j, t) / N(i, v); the final sojourn is censored."""
    if path.n_transitions < 2:
        raise InsufficientData("no completed sojourn in the path")
    counts = count_transitions(path, index, bins, t_max, s)
    kernel = kernel_from_counts(counts, bins, {"censored": counts.censored,
                                               "transitions": int(path.n_transitions - 1)})
    log.info("estimated kernel from %d sojourns (%d censored)",
             path.n_transitions - 1, counts.censored)
    return kernel


# -- follower ----------------------------------------------------------------------

@dataclass(eq=False)
class FollowerKernel:
    """Sign-conditioned one-step counts of the follower.

    ``counts[i, u, v, k, o]`` counts minutes whose context is follower state
    ``i``, backward time ``u`` (clipped to ``t_max - 1``), index level ``v`` and
    leader sign ``SIGNS[k]``; outcome ``o == i`` means the follower stayed,
    ``o != i`` that it moved to state ``o``.
    """

    counts: np.ndarray
    index_bins: IndexBins = field(default_factory=IndexBins)
    index_at: str = "transition"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        if c.ndim != 5 or c.shape[3] != 3 or c.shape[0] != c.shape[4]:
            raise ValueError("counts must have shape (s, t_max, levels, 3, s)")
        if c.shape[2] != self.index_bins.levels:
            raise ValueError("level count does not match index bins")
        if self.index_at not in ("transition", "minute"):
            raise ValueError("index_at must be 'transition' or 'minute'")
        self.counts = c

    @property
    def s(self) -> int:
        return self.counts.shape[0]

    @property
    def t_max(self) -> int:
        return self.counts.shape[1]

    @property
    def levels(self) -> int:
        return self.counts.shape[2]

    @property
    def support_counts(self) -> np.ndarray:
        return self.counts.sum(axis=4)

    def probs(self, i: int, u: int, v: int, sign: int) -> np.ndarray:
        """Exact-context distribution as a length-s vector (slot i = stay)."""
        row = self.counts[i, min(u, self.t_max - 1), v, sign + 1]
        return row / row.sum()

    @classmethod
    def from_function(cls, s: int, t_max: int, fn, index_bins: IndexBins | None = None,
                      weight: float = 1e6) -> "FollowerKernel":
        """Hand-built kernel: ``fn(i, u, v, sign)`` returns the length-s outcome vector."""
        bins = index_bins if index_bins is not None else IndexBins(np.empty(0))
        c = np.zeros((s, t_max, bins.levels, 3, s))
        for i in range(s):
            for u in range(t_max):
                for v in range(bins.levels):
                    for k, sg in enumerate(SIGNS):
                        p = np.asarray(fn(i, u, v, sg), dtype=float)
                        c[i, u, v, k] = weight * p / p.sum()
        return cls(c, bins, meta={"hand_built": True})

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.counts).tobytes()).hexdigest()[:16]


def _sign_of_states(states: np.ndarray, s: int) -> np.ndarray:
    return np.sign(states - s // 2).astype(np.int64)


def follower_levels(follower: StatePath, index: IndexPath, bins: IndexBins,
                    index_at: str = "transition") -> np.ndarray:
    """Index level seen by the follower at each minute."""
    if index_at == "transition":
        return bins.level(index.at_minutes[follower.times[follower.counting()]])
    return bins.level(index.at_minutes)


def estimate_follower(leader: StatePath, follower: StatePath, follower_index: IndexPath,
                      bins: IndexBins, t_max: int, s: int | None = None,
                      index_at: str = "transition") -> FollowerKernel:
    """Ratio of counts N(i1, u1, v1; j1, d1, s2) / N(i1, u1, v1; s2) over minutes t >= 1."""
    if len(leader) != len(follower):
        raise GridMismatch(f"leader has {len(leader)} minutes, follower {len(follower)}")
    s = s if s is not None else int(max(leader.states.max(), follower.states.max())) + 1
    z1 = follower.states
    u1 = np.minimum(follower.backward(), t_max - 1)
    v1 = follower_levels(follower, follower_index, bins, index_at)
    sg = _sign_of_states(leader.states, s)
    counts = np.zeros((s, t_max, bins.levels, 3, s))
    # outcome slot z1[t]: equal to z1[t-1] exactly when the follower stayed
    np.add.at(counts, (z1[:-1], u1[:-1], v1[:-1], sg[1:] + 1, z1[1:]), 1.0)
    fk = FollowerKernel(counts, bins, index_at, {"minutes": int(len(z1))})
    log.info("estimated follower from %d minutes, %d populated contexts",
             len(z1) - 1, int(np.count_nonzero(fk.support_counts)))
    return fk


class FollowerSampler:
    """Tiered lookup of follower one-step laws.

    Tiers: 0 exact context, 1 pooled over the leader sign, 2 pooled over sign
    and index level, 3 pooled over sign, level and backward time, 4 global.
    """

    def __init__(self, fk: FollowerKernel, min_count: float = 5):
        self.fk = fk
        self.min_count = min_count
        c = fk.counts
        self.c0 = c
        self.c1 = c.sum(axis=3)
        self.c2 = self.c1.sum(axis=2)
        self.c3 = self.c2.sum(axis=1)
        s = fk.s
        diag = np.arange(s)
        self.g_stay = float(self.c3[diag, diag].sum())
        self.g_change = self.c3.sum(axis=0) - self.c3[diag, diag]
        if self.g_stay + self.g_change.sum() <= 0:
            raise InsufficientData("follower kernel has no observations")
        self.tier_counts = np.zeros(5, dtype=np.int64)
        self._cache: dict[tuple[int, int, int, int], tuple[np.ndarray, int]] = {}

    def lookup(self, i: int, u: int, v: int, sign: int) -> tuple[np.ndarray, int]:
        """(length-s outcome vector with slot i = stay, tier)."""
        u = min(u, self.fk.t_max - 1)
        key = (i, u, v, sign)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._lookup(i, u, v, sign)
            self._cache[key] = hit
        self.tier_counts[hit[1]] += 1
        return hit

    def _lookup(self, i, u, v, sign):
        for tier, row in ((0, self.c0[i, u, v, sign + 1]), (1, self.c1[i, u, v]),
                          (2, self.c2[i, u]), (3, self.c3[i])):
            tot = row.sum()
            if tot >= self.min_count:
                return row / tot, tier
        row = self.g_change.copy()
        row[i] = self.g_stay
        return row / row.sum(), 4


def query_with_fallback(model, context, min_count: float = 5) -> OneStepDist:
    """One-step law for ``context`` with tiered backoff; the tier is on the result.

    ``model`` is an :class:`IndexedKernel` (context ``(i, u, v)``), a
    :class:`FollowerKernel` (context ``(i, u, v, sign)``) or a prepared sampler.
    """
    if isinstance(model, FollowerKernel):
        model = FollowerSampler(model, min_count)
    if isinstance(model, FollowerSampler):
        i, u, v, sign = context
        vec, tier = model.lookup(i, u, v, sign)
        change = vec.copy()
        change[i] = 0.0
        return OneStepDist(i, float(vec[i]), change, tier)
    if isinstance(model, IndexedKernel):
        model = KernelSampler(model, min_count)
    from .semimarkov import BackwardState
    i, u, v = context
    return model.query(BackwardState(i, u, v))


# -- artifact I/O -----------------------------------------------------------------

def save_follower(fk: FollowerKernel, path, extra: dict | None = None) -> Path:
    """JSON index of populated contexts plus a binary block of probability rows."""
    base = _base(path)
    support = fk.support_counts
    ctx = np.argwhere(support > 0)
    rows = np.array([fk.counts[tuple(c)] / support[tuple(c)] for c in ctx]).reshape(-1, fk.s)
    payload = np.ascontiguousarray(rows, dtype="<f8").tobytes()
    bin_path = base.parent / (base.name + ".bin")
    bin_path.write_bytes(payload)
    env = {
        "format": "wismc-follower/1",
        "s": fk.s, "t_max": fk.t_max, "levels": fk.levels,
        "signs": list(SIGNS),
        "index_at": fk.index_at,
        "index_bins": fk.index_bins.to_dict(),
        "payload": bin_path.name,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "dtype": "<f8",
        # one entry per payload row: [i, u, v, sign, support_count]
        "contexts": [[int(c[0]), int(c[1]), int(c[2]), SIGNS[c[3]], float(support[tuple(c)])]
                     for c in ctx],
        "meta": fk.meta,
    }
    if extra:
        env.update(extra)
    json_path = base.parent / (base.name + ".json")
    json_path.write_text(json.dumps(env, indent=1, sort_keys=True))
    return json_path


def load_follower(path) -> tuple[FollowerKernel, dict]:
    base = _base(path)
    json_path = base.parent / (base.name + ".json")
    env = json.loads(json_path.read_text())
    payload = (json_path.parent / env["payload"]).read_bytes()
    if hashlib.sha256(payload).hexdigest() != env["payload_sha256"]:
        raise ValueError(f"{json_path}: payload checksum mismatch")
    s, t_max, levels = env["s"], env["t_max"], env["levels"]
    rows = np.frombuffer(payload, dtype="<f8").reshape(-1, s)
    counts = np.zeros((s, t_max, levels, 3, s))
    for row, (i, u, v, sign, n) in zip(rows, env["contexts"]):
        counts[i, u, v, sign + 1] = row * n
    fk = FollowerKernel(counts, IndexBins.from_dict(env["index_bins"]), env["index_at"],
                        env.get("meta", {}))
    return fk, env
