"""Tick ingestion, 1-minute resampling, returns and return-state discretization.

States are 0-based integers ``0..s-1`` inside the library; the center state is
``s // 2``. Files written by the CLI use 1-based labels.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateDistribution, EmptySeries, InputError, TooShort, UnsortedInput

log = logging.getLogger(__name__)

# epoch timestamps above this are taken to be milliseconds
_MS_THRESHOLD = 10**11


@dataclass(frozen=True)
class TickSeries:
    timestamps: np.ndarray
    prices: np.ndarray
    symbol: str = ""
    # timestamp units per second (1 for seconds, 1000 for milliseconds)
    units_per_second: int = 1

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        px = np.asarray(self.prices, dtype=float)
        if ts.shape != px.shape or ts.ndim != 1:
            raise ValueError("timestamps and prices must be 1-d arrays of equal length")
        if np.any(px <= 0):
            raise ValueError("prices must be positive")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "prices", px)

    def __len__(self):
        return len(self.timestamps)


@dataclass(frozen=True)
class PriceSeries:
    t0: int
    prices: np.ndarray
    interval: int = 60
    symbol: str = ""

    def __post_init__(self):
        object.__setattr__(self, "prices", np.asarray(self.prices, dtype=float))

    def __len__(self):
        return len(self.prices)

    @property
    def timestamps(self) -> np.ndarray:
        return self.t0 + self.interval * np.arange(len(self.prices), dtype=np.int64)


@dataclass(frozen=True)
class ReturnSeries:
    values: np.ndarray
    symbol: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class BinSpec:
    """Symmetric partition of the return axis into ``s`` states.

    ``boundaries`` has ``s + 1`` entries with ``boundaries[k] == -boundaries[s - k]``;
    ``representatives[k]`` is the return value emitted for state ``k``.
    """

    boundaries: np.ndarray
    representatives: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        r = np.asarray(self.representatives, dtype=float)
        s = len(r)
        if s < 3 or s % 2 == 0:
            raise ValueError(f"state count must be odd and >= 3, got {s}")
        if len(b) != s + 1:
            raise ValueError("need s + 1 boundaries")
        if np.any(np.diff(b) <= 0):
            raise ValueError("boundaries must be strictly increasing")
        if np.any(np.abs(b + b[::-1]) > 1e-15):
            raise ValueError("boundaries must be symmetric around zero")
        if np.any(np.diff(r) <= 0):
            raise ValueError("representatives must be strictly increasing")
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "representatives", r)

    @property
    def s(self) -> int:
        return len(self.representatives)

    @property
    def center(self) -> int:
        return self.s // 2

    @property
    def cuts(self) -> np.ndarray:
        """Positive cut points |r| separating the magnitude levels."""
        return self.boundaries[self.center + 1:-1]

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "boundaries": self.boundaries.tolist(),
            "representatives": self.representatives.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinSpec":
        spec = cls(d["boundaries"], d["representatives"])
        if spec.s != d.get("s", spec.s):
            raise ValueError("state count does not match representatives")
        return spec


@dataclass(frozen=True)
class StatePath:
    """Per-minute states plus the jump chain (J_n, T_n) of state changes."""

    states: np.ndarray
    jumps: np.ndarray = field(init=False)
    times: np.ndarray = field(init=False)

    def __post_init__(self):
        z = np.asarray(self.states, dtype=np.int64)
        if z.ndim != 1 or len(z) == 0:
            raise ValueError("a state path needs at least one minute")
        z.setflags(write=False)
        change = np.flatnonzero(z[1:] != z[:-1]) + 1
        times = np.concatenate(([0], change)).astype(np.int64)
        object.__setattr__(self, "states", z)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "jumps", z[times])

    def __len__(self):
        return len(self.states)

    @property
    def transitions(self) -> list[tuple[int, int]]:
        return list(zip(self.jumps.tolist(), self.times.tolist()))

    @property
    def n_transitions(self) -> int:
        return len(self.times)

    def counting(self) -> np.ndarray:
        """N(t) for every minute: index of the last transition at or before t."""
        return np.searchsorted(self.times, np.arange(len(self.states)), side="right") - 1

    def backward(self) -> np.ndarray:
        """Backward recurrence time B(t) = t - T_{N(t)}."""
        t = np.arange(len(self.states))
        return t - self.times[self.counting()]


def read_ticks_csv(path, symbol: str | None = None) -> TickSeries:
    """Read a ``timestamp,price`` CSV. Millisecond epochs are detected by magnitude."""
    path = Path(path)
    ts, px = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["timestamp", "price"]:
            raise InputError(f"{path}:1: expected header 'timestamp,price', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts.append(int(row[0]))
                price = float(row[1])
            except (ValueError, IndexError) as exc:
                raise InputError(f"{path}:{lineno}: cannot parse {row!r}") from exc
            if not price > 0:
                raise InputError(f"{path}:{lineno}: non-positive price {price}")
            px.append(price)
    if not ts:
        raise EmptySeries(f"{path}: no tick records")
    units = 1000 if max(ts) > _MS_THRESHOLD else 1
    return TickSeries(np.array(ts), np.array(px), symbol or path.stem, units)


def resample_to_grid(ticks: TickSeries, interval: int = 60) -> PriceSeries:
    """Last-price resampling onto a fixed grid, carrying prices across empty slots."""
    if len(ticks) == 0:
        raise EmptySeries("no ticks to resample")
    ts = ticks.timestamps
    if np.any(np.diff(ts) < 0):
        raise UnsortedInput("tick timestamps are not sorted")
    step = interval * ticks.units_per_second
    slots = ts // step
    first = slots[0]
    n = int(slots[-1] - first) + 1
    prices = np.full(n, np.nan)
    last = np.flatnonzero(np.r_[slots[1:] != slots[:-1], True])
    prices[slots[last] - first] = ticks.prices[last]
    filled = np.isfinite(prices)
    idx = np.where(filled, np.arange(n), 0)
    np.maximum.accumulate(idx, out=idx)
    return PriceSeries(int(first) * interval, prices[idx], interval, ticks.symbol)


def compute_returns(prices: PriceSeries) -> ReturnSeries:
    p = prices.prices
    if len(p) < 2:
        raise TooShort("need at least two prices for a return")
    return ReturnSeries((p[1:] - p[:-1]) / p[:-1], prices.symbol)


def _pick_cuts(sorted_abs: np.ndarray, targets: list[float]) -> list[float]:
    """Place cuts in the gaps between distinct |r| values nearest each target mass.

    Cuts are forced strictly increasing, so heavy ties can push a cut away from
    its target by at most the mass of the tied values it has to skip.
    """
    n = len(sorted_abs)
    values, counts = np.unique(sorted_abs, return_counts=True)
    # candidate gaps: below the smallest value (if > 0) and between neighbours
    lo = np.concatenate(([0.0], values[:-1])) if values[0] > 0 else values[:-1]
    hi = values if values[0] > 0 else values[1:]
    cum = np.cumsum(counts) / n
    mass_below = np.concatenate(([0.0], cum[:-1])) if values[0] > 0 else cum[:-1]
    midpoints = 0.5 * (lo + hi)
    if len(midpoints) < len(targets):
        raise DegenerateDistribution(
            f"{len(values)} distinct |return| values cannot support {len(targets)} cuts")

    cuts, start = [], 0
    for k, target in enumerate(targets):
        remaining = len(targets) - k - 1
        stop = len(midpoints) - remaining
        window = mass_below[start:stop]
        pos = start + int(np.argmin(np.abs(window - target)))
        cuts.append(float(midpoints[pos]))
        start = pos + 1
    return cuts


def fit_return_bins(returns: ReturnSeries, s: int = 5, center_mass: float = 0.25) -> BinSpec:
    """Symmetric equal-mass binning of returns.

    The center bin ``[-b, b]`` holds about ``center_mass`` of the sample; the
    remaining mass of ``|r|`` is split evenly over the ``(s - 1) / 2`` magnitude
    levels on each side. Representatives are conditional means of each tail
    bin and exactly zero for the center bin.
    """
    if s < 3 or s % 2 == 0:
        raise ValueError(f"s must be odd and >= 3, got {s}")
    if not 0.0 < center_mass < 1.0:
        raise ValueError("center_mass must lie in (0, 1)")
    r = returns.values
    if len(r) == 0 or np.all(r == r[0]):
        raise DegenerateDistribution("returns are constant")
    m = (s - 1) // 2
    a = np.sort(np.abs(r))
    targets = [center_mass] + [center_mass + (1 - center_mass) * k / m for k in range(1, m)]
    cuts = np.array(_pick_cuts(a, targets))
    top = max(float(a[-1]), cuts[-1] * (1 + 1e-12))
    positive = np.concatenate((cuts, [top]))
    boundaries = np.concatenate((-positive[::-1], positive))

    level = np.searchsorted(cuts, np.abs(r), side="left")
    reps = np.zeros(s)
    for k in range(1, m + 1):
        in_level = level == k
        for sign in (1, -1):
            sel = in_level & (np.sign(r) == sign)
            if sel.any():
                reps[m + sign * k] = r[sel].mean()
            else:
                reps[m + sign * k] = sign * np.abs(r[in_level]).mean()
    return BinSpec(boundaries, reps)


def assign_states(values: np.ndarray, bins: BinSpec) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    level = np.searchsorted(bins.cuts, np.abs(values), side="left")
    return (bins.center + np.sign(values) * level).astype(np.int64)


def discretize(returns: ReturnSeries, bins: BinSpec) -> StatePath:
    """Map each return to its bin. Returns outside the outer edges clamp to the extreme bins."""
    r = returns.values
    outside = np.count_nonzero((r < bins.boundaries[0]) | (r > bins.boundaries[-1]))
    if outside:
        log.info("clamped %d returns outside [%g, %g] to extreme states",
                 outside, bins.boundaries[0], bins.boundaries[-1])
    return StatePath(assign_states(r, bins))


def state_sign(state: int, bins: BinSpec | int) -> int:
    """-1, 0 or +1 according to the position of ``state`` relative to the center."""
    s = bins if isinstance(bins, int) else bins.s
    if not 0 <= state < s:
        raise ValueError(f"state {state} outside 0..{s - 1}")
    return int(np.sign(state - s // 2))


def save_bins(bins: BinSpec, path) -> None:
    Path(path).write_text(json.dumps(bins.to_dict(), indent=2))


def load_bins(path) -> BinSpec:
    return BinSpec.from_dict(json.loads(Path(path).read_text()))
