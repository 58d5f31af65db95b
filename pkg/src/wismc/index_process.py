"""The weighted index process U^lambda and its EWMA specialization.

With the EWMA weighting, the index at minute ``t`` is the weighted average of
the squared representative returns of every past minute ``a < t`` with
weight ``lam ** (t - a)``; at a transition time it equals the index value that
conditions the kernel for the sojourn starting there.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import DegenerateIndex
from .market_data import StatePath


@dataclass(frozen=True)
class IndexSpec:
    lam: float
    squared_representative: np.ndarray
    u0: float | None = None
    truncation_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"lambda must lie in (0, 1], got {self.lam}")
        if not 0.0 <= self.truncation_eps < 1.0:
            raise ValueError("truncation_eps must lie in [0, 1)")
        sq = np.asarray(self.squared_representative, dtype=float)
        object.__setattr__(self, "squared_representative", sq)
        if self.u0 is None:
            object.__setattr__(self, "u0", float(np.median(sq)))

    @classmethod
    def from_bins(cls, bins, lam: float, **kw) -> "IndexSpec":
        return cls(lam, bins.representatives ** 2, **kw)

    @property
    def window(self) -> int | None:
        """Number of past minutes kept, or None for the full history."""
        if self.truncation_eps <= 0.0 or self.lam >= 1.0:
            return None
        return max(1, int(math.floor(math.log(self.truncation_eps) / math.log(self.lam))))

    def to_dict(self) -> dict:
        return {"lam": self.lam, "u0": self.u0, "truncation_eps": self.truncation_eps,
                "squared_representative": self.squared_representative.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "IndexSpec":
        return cls(d["lam"], d["squared_representative"], d["u0"], d["truncation_eps"])


@dataclass(frozen=True)
class IndexPath:
    at_transitions: np.ndarray
    at_minutes: np.ndarray


@dataclass(frozen=True)
class IndexBins:
    boundaries: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if np.any(np.diff(b) <= 0):
            raise ValueError("index boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", b)

    @property
    def levels(self) -> int:
        return len(self.boundaries) + 1

    def level(self, u):
        """Level index in ``0..levels-1``; works on scalars and arrays."""
        out = np.searchsorted(self.boundaries, u, side="right")
        return int(out) if np.ndim(out) == 0 else out

    def to_dict(self) -> dict:
        return {"levels": self.levels, "boundaries": self.boundaries.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "IndexBins":
        return cls(np.asarray(d["boundaries"], dtype=float))


def ewma_f(state: int, elapsed, spec: IndexSpec):
    """Un-normalized EWMA reward ``lam ** elapsed * r_state ** 2``."""
    return spec.lam ** np.asarray(elapsed, dtype=float) * spec.squared_representative[state]


def _weighted_sums(x: np.ndarray, spec: IndexSpec) -> tuple[np.ndarray, np.ndarray]:
    """Numerator and normalizer of the index at every minute t = 0..len(x)."""
    lam = spec.lam
    n = len(x)
    w = spec.window
    padded = np.concatenate((x, [0.0]))
    ones = np.concatenate((np.ones(n), [0.0]))
    if w is None or w >= n:
        b = np.array([0.0, lam])
    else:
        # FIR tail drop: weight lam**(w+1) leaves the window each step
        b = np.zeros(w + 2)
        b[1] = lam
        b[-1] = -lam ** (w + 1)
    a = np.array([1.0, -lam])
    return lfilter(b, a, padded), lfilter(b, a, ones)


def index_at_minutes(path: StatePath, spec: IndexSpec) -> np.ndarray:
    """U^lambda(t) for t = 0..L-1; U(0) is the initial value ``spec.u0``."""
    x = spec.squared_representative[path.states]
    num, den = _weighted_sums(x, spec)
    num, den = num[:len(x)], den[:len(x)]
    out = np.empty(len(x))
    out[0] = spec.u0
    out[1:] = num[1:] / den[1:]
    return out


def index_at_transitions(path: StatePath, spec: IndexSpec) -> np.ndarray:
    """U_n^lambda at every transition time T_n (U_0 = ``spec.u0``)."""
    return index_at_minutes(path, spec)[path.times]


def index_path(path: StatePath, spec: IndexSpec) -> IndexPath:
    minutes = index_at_minutes(path, spec)
    return IndexPath(minutes[path.times], minutes)


def lemma_delta(states: np.ndarray, n: int, last: int, f, u_n: float) -> float:
    """U_{N(n)} reconstructed from U(n) = ``u_n`` for an un-normalized reward ``f``.

    ``f(state, elapsed)`` must broadcast over arrays; ``last`` is the
    transition time T_{N(n)} <= n. The current sojourn's contribution over
    ``[last, n)`` is removed and every earlier minute is reweighted from
    elapsed time ``n - a`` to ``last - a``.
    """
    states = np.asarray(states)
    current = float(np.sum(f(states[last], n - np.arange(last, n)))) if n > last else 0.0
    a = np.arange(last)
    hist = states[:last]
    reweight = float(np.sum(f(hist, last - a) - f(hist, n - a))) if last else 0.0
    return u_n - current + reweight


class _EwmaLemma:
    """Evaluates the index decomposition at many minutes of one path.

    Powers of lambda are tabulated once, in reverse, so every history sum is
    a dot product over a contiguous slice.
    """

    def __init__(self, path: StatePath, spec: IndexSpec):
        self.path = path
        self.spec = spec
        self.x = spec.squared_representative[path.states]
        self.m = len(path.states)
        # rpow[m - k] == lam ** k
        self.rpow = spec.lam ** np.arange(self.m, -1, -1, dtype=float)

    def _pow_slice(self, hi: int, lo: int) -> np.ndarray:
        """lam ** (hi - a) for a = 0..lo-1 (hi >= lo)."""
        return self.rpow[self.m - hi:self.m - hi + lo]

    def __call__(self, n: int) -> float:
        times = self.path.times
        last = int(times[np.searchsorted(times, n, side="right") - 1])
        if n == last:
            return 0.0
        x = self.x
        w_n = self._pow_slice(n, n)
        num_n = float(np.dot(w_n, x[:n]))
        den_n = float(w_n.sum())
        u_n = num_n / den_n
        if last == 0:
            return self.spec.u0 - u_n
        cur_w = self._pow_slice(n, n)[last:]
        cur_num = x[last] * float(cur_w.sum())
        cur_den = float(cur_w.sum())
        dw = self._pow_slice(last, last) - w_n[:last]
        num_last = num_n - cur_num + float(np.dot(dw, x[:last]))
        den_last = den_n - cur_den + float(dw.sum())
        return num_last / den_last - u_n


def delta_u(path: StatePath, spec: IndexSpec, n: int) -> float:
    """U_{N(n)} - U(n) for the normalized EWMA index, via the decomposition above.

    The decomposition is applied separately to the weighted sum and to its
    normalizer. Uses the full history (``truncation_eps`` is ignored).
    """
    return _EwmaLemma(path, spec)(n)


def delta_u_series(path: StatePath, spec: IndexSpec, minutes=None) -> np.ndarray:
    """``delta_u`` at each requested minute (default: every minute of the path)."""
    ev = _EwmaLemma(path, spec)
    if minutes is None:
        minutes = range(len(path))
    return np.array([ev(int(n)) for n in minutes])


def fit_index_bins(index_values, levels: int = 5) -> IndexBins:
    """Equal-mass (quantile) bins over index values."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    v = np.asarray(index_values, dtype=float)
    v = v[np.isfinite(v)]
    if len(np.unique(v)) < levels:
        raise DegenerateIndex(f"{len(np.unique(v))} distinct index values for {levels} levels")
    if levels == 1:
        return IndexBins(np.empty(0))
    q = np.quantile(v, np.arange(1, levels) / levels)
    if np.any(np.diff(q) <= 0):
        raise DegenerateIndex("index quantiles coincide; too many tied values")
    return IndexBins(q)
