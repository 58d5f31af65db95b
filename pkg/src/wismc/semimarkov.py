"""Indexed semi-Markov kernel and the quantities derived from it.

The kernel is stored as cumulative probabilities ``Q[i, v, j, t-1]`` for
``t = 1..t_max`` (so ``Q(.; 0) = 0`` is implicit). Sojourns longer than
``t_max`` do not exist in the model: every populated row reaches total mass 1
at ``t_max``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientData, UnreachableBackwardState
from .index_process import IndexBins

# rows whose total mass at t_max is below this count as empty
_EMPTY_ROW = 0.5


@dataclass(frozen=True)
class BackwardState:
    i: int
    u: int
    v: int


@dataclass(frozen=True)
class OneStepDist:
    """Law of the next (state, backward time) from ``(i, u)``.

    ``change_probs[i]`` is always zero; a move to ``(j, 0)`` has probability
    ``change_probs[j]`` and staying (``(i, u + 1)``) has ``stay_prob``.
    """

    i: int
    stay_prob: float
    change_probs: np.ndarray
    tier: int = 0

    @property
    def total(self) -> float:
        return self.stay_prob + float(self.change_probs.sum())

    def as_vector(self) -> np.ndarray:
        """Length-s vector with the stay probability in slot ``i``."""
        out = self.change_probs.copy()
        out[self.i] = self.stay_prob
        return out


@dataclass(frozen=True, eq=False)
class IndexedKernel:
    Q: np.ndarray
    index_bins: IndexBins = field(default_factory=IndexBins)
    n_context: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 4 or Q.shape[0] != Q.shape[2]:
            raise ValueError("Q must have shape (s, levels, s, t_max)")
        s, levels = Q.shape[:2]
        if levels != self.index_bins.levels:
            raise ValueError(f"kernel has {levels} levels, index bins have {self.index_bins.levels}")
        diag = Q[np.arange(s), :, np.arange(s), :]
        if np.any(diag != 0):
            raise ValueError("Q_ii must be zero (no virtual transitions)")
        if np.any(Q < 0) or np.any(Q > 1 + 1e-12) or np.any(np.diff(Q, axis=3) < -1e-15):
            raise ValueError("Q entries must be non-decreasing in t and lie in [0, 1]")
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        populated = Q[..., -1].sum(axis=2) > _EMPTY_ROW
        if self.n_context is None:
            # hand-built kernels: treat every populated row as fully observed
            nc = np.where(populated, np.inf, 0.0)
        else:
            nc = np.asarray(self.n_context, dtype=float)
            if nc.shape != (s, levels):
                raise ValueError("n_context must have shape (s, levels)")
        object.__setattr__(self, "n_context", nc)

    @property
    def s(self) -> int:
        return self.Q.shape[0]

    @property
    def levels(self) -> int:
        return self.Q.shape[1]

    @property
    def t_max(self) -> int:
        return self.Q.shape[3]

    @classmethod
    def from_increments(cls, q, index_bins: IndexBins | None = None, **kw) -> "IndexedKernel":
        """Build from one-step masses ``q[i, v, j, t-1]``; each populated row is normalized."""
        q = np.asarray(q, dtype=float)
        tot = q.sum(axis=(2, 3), keepdims=True)
        q = np.divide(q, tot, out=np.zeros_like(q), where=tot > 0)
        bins = index_bins if index_bins is not None else IndexBins(np.empty(0))
        return cls(np.cumsum(q, axis=3), bins, **kw)

    def increments(self) -> np.ndarray:
        return np.diff(self.Q, axis=3, prepend=0.0)

    def digest(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.Q).tobytes())
        h.update(json.dumps(self.index_bins.to_dict(), sort_keys=True).encode())
        return h.hexdigest()[:16]


def embedded_p(kernel: IndexedKernel) -> np.ndarray:
    """Embedded chain p_ij(v) = Q_ij(v; t_max), shape ``(s, levels, s)``."""
    return kernel.Q[..., -1].copy()


def sojourn_cdf(kernel: IndexedKernel) -> np.ndarray:
    """H_i(v; t) = sum_j Q_ij(v; t), shape ``(s, levels, t_max)``."""
    return kernel.Q.sum(axis=2)


def conditional_g(kernel: IndexedKernel) -> np.ndarray:
    """Waiting-time law given the destination; 1 where p_ij(v) = 0."""
    p = embedded_p(kernel)[..., None]
    G = np.ones_like(kernel.Q)
    np.divide(kernel.Q, p, out=G, where=p > 0)
    return G


def kernel_increment(kernel: IndexedKernel, i: int, v: int, j: int, t: int) -> float:
    """q_ij(v; t) = Q_ij(v; t) - Q_ij(v; t - 1)."""
    if not 1 <= t <= kernel.t_max:
        raise ValueError(f"t must lie in 1..{kernel.t_max}")
    prev = kernel.Q[i, v, j, t - 2] if t > 1 else 0.0
    return float(kernel.Q[i, v, j, t - 1] - prev)


def survival(q_row: np.ndarray) -> np.ndarray:
    """S(u) = P(sojourn > u) for u = 0..t_max from one-step masses ``q_row[j, t-1]``.

    Built as a reverse cumulative sum so that ``S(u) == S(u+1) + h(u+1)`` holds
    to rounding, which keeps one-step distributions normalized even deep in
    the tail.
    """
    h = q_row.sum(axis=0)
    S = np.zeros(len(h) + 1)
    S[:-1] = np.cumsum(h[::-1])[::-1]
    return S


def one_step_from_row(q_row: np.ndarray, i: int, u: int, S: np.ndarray | None = None,
                      tier: int = 0) -> OneStepDist:
    if S is None:
        S = survival(q_row)
    t_max = q_row.shape[1]
    if not 0 <= u < t_max or S[u] <= 0.0:
        raise UnreachableBackwardState(f"state {i} cannot survive {u} minutes")
    change = q_row[:, u] / S[u]
    change[i] = 0.0
    return OneStepDist(i, float(S[u + 1] / S[u]), change, tier)


def one_step_probs(kernel: IndexedKernel, b: BackwardState) -> OneStepDist:
    """Per-minute law of (Z(n+1), B(n+1)) given Z(n)=i, B(n)=u and the level v of
    the index at the last transition.

    stay = (1 - H_i(v; u+1)) / (1 - H_i(v; u)),
    change to j = q_ij(v; u+1) / (1 - H_i(v; u)).
    """
    q = kernel.increments()[b.i, b.v]
    return one_step_from_row(q, b.i, b.u)


# -- fallback for sparsely observed contexts ------------------------------------

def pooled_rows(kernel: IndexedKernel) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Count-weighted one-step rows pooled over index levels and over everything.

    Returns ``(q_by_state, n_by_state, q_global, n_global)``. The global row has
    its destination law taken from all contexts; callers drop j == i and
    renormalize.
    """
    q = kernel.increments()
    n = kernel.n_context
    finite = np.where(np.isfinite(n), n, 1.0)
    weights = np.where(n > 0, finite, 0.0)
    q_state = np.einsum("iv,ivjt->ijt", weights, q)
    n_state = n.sum(axis=1)
    tot = q_state.sum(axis=(1, 2), keepdims=True)
    q_state = np.divide(q_state, tot, out=np.zeros_like(q_state), where=tot > 0)
    q_glob = np.einsum("iv,ivjt->jt", weights, q)
    gt = q_glob.sum()
    q_glob = q_glob / gt if gt > 0 else q_glob
    return q_state, n_state, q_glob, float(n.sum())


class KernelSampler:
    """Chooses, per (i, v), the one-step row used for a whole sojourn.

    Tier 0 is the exact context; tier 2 pools the state over index levels;
    tier 4 is the global row with the destination j == i removed. A context
    is used when its count reaches ``min_count``.
    """

    def __init__(self, kernel: IndexedKernel, min_count: float = 5):
        self.kernel = kernel
        self.min_count = min_count
        self.q = kernel.increments()
        self.q_state, self.n_state, self.q_glob, self.n_glob = pooled_rows(kernel)
        if not self.n_glob > 0:
            raise InsufficientData("kernel has no populated contexts")
        self._cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, int]] = {}

    def _global_row(self, i: int) -> np.ndarray:
        row = self.q_glob.copy()
        row[i] = 0.0
        tot = row.sum()
        if tot <= 0:
            raise InsufficientData(f"no transitions out of any state reach state != {i}")
        return row / tot

    def row(self, i: int, v: int) -> tuple[np.ndarray, np.ndarray, int]:
        """(q_row[j, t-1], survival S, tier) for a sojourn starting in (i, v)."""
        key = (i, v)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if self.kernel.n_context[i, v] >= self.min_count:
            q_row, tier = self.q[i, v], 0
        elif self.n_state[i] >= self.min_count:
            q_row, tier = self.q_state[i], 2
        else:
            q_row, tier = self._global_row(i), 4
        out = (q_row, survival(q_row), tier)
        self._cache[key] = out
        return out

    def query(self, b: BackwardState) -> OneStepDist:
        """One-step law with fallback; also backs off when (i, u) is unreachable."""
        q_row, S, tier = self.row(b.i, b.v)
        if b.u < self.kernel.t_max and S[b.u] > 0:
            return one_step_from_row(q_row, b.i, b.u, S, tier)
        # pooled-over-u hazard: geometric approximation of the pooled sojourn law
        for q_alt, t in ((self.q_state[b.i], 3), (self._global_row(b.i), 4)):
            mass = q_alt.sum()
            if mass <= 0:
                continue
            h = q_alt.sum(axis=0)
            mean = float(np.dot(np.arange(1, len(h) + 1), h) / mass)
            exit_p = 1.0 / mean
            change = q_alt.sum(axis=1) / mass * exit_p
            change[b.i] = 0.0
            change *= exit_p / change.sum()
            return OneStepDist(b.i, 1.0 - exit_p, change, t)
        raise InsufficientData(f"no usable law for state {b.i}")


# -- artifact I/O -----------------------------------------------------------------

def _base(path) -> Path:
    """Artifact path without a trailing ``.json`` / ``.bin``; other dots are kept."""
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".json", ".bin") else path


def save_kernel(kernel: IndexedKernel, path, extra: dict | None = None) -> Path:
    """Write ``<path>.json`` (envelope) and ``<path>.bin`` (float64 LE, order i, v, j, t)."""
    base = _base(path)
    bin_path = base.parent / (base.name + ".bin")
    payload = np.ascontiguousarray(kernel.Q, dtype="<f8").tobytes()
    bin_path.write_bytes(payload)
    envelope = {
        "format": "wismc-kernel/1",
        "s": kernel.s,
        "levels": kernel.levels,
        "t_max": kernel.t_max,
        "order": "i,v,j,t",
        "dtype": "<f8",
        "payload": bin_path.name,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "index_bins": kernel.index_bins.to_dict(),
        "n_context": [[None if not np.isfinite(x) else x for x in row]
                      for row in kernel.n_context.tolist()],
        "meta": kernel.meta,
    }
    if extra:
        envelope.update(extra)
    json_path = base.parent / (base.name + ".json")
    json_path.write_text(json.dumps(envelope, indent=2, sort_keys=True))
    return json_path


def load_kernel(path) -> tuple[IndexedKernel, dict]:
    base = _base(path)
    json_path = base.parent / (base.name + ".json")
    env = json.loads(json_path.read_text())
    payload = (json_path.parent / env["payload"]).read_bytes()
    if hashlib.sha256(payload).hexdigest() != env["payload_sha256"]:
        raise ValueError(f"{json_path}: payload checksum mismatch")
    shape = (env["s"], env["levels"], env["s"], env["t_max"])
    Q = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(float)
    n_context = np.array([[np.inf if x is None else x for x in row] for row in env["n_context"]])
    kernel = IndexedKernel(Q, IndexBins.from_dict(env["index_bins"]), n_context, env.get("meta", {}))
    return kernel, env
