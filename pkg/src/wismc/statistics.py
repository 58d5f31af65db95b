"""Validation statistics: autocorrelation of (squared) returns and cross-correlation."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import DegenerateVariance, GridMismatch, SymbolMismatch
from .market_data import ReturnSeries

NOISE_FLOOR = 0.02


@dataclass(frozen=True)
class AcfReport:
    lags: np.ndarray
    values: np.ndarray
    n_obs: int


@dataclass(frozen=True)
class CrossCorrMatrix:
    """Lower triangle of a symmetric correlation matrix, row-major.

    ``values[k]`` belongs to ``pairs[k] == (symbols[a], symbols[b])`` with ``a > b``.
    """

    symbols: tuple[str, ...]
    values: np.ndarray

    @property
    def pairs(self) -> list[tuple[str, str]]:
        return [(self.symbols[a], self.symbols[b])
                for a in range(1, len(self.symbols)) for b in range(a)]

    def get(self, x: str, y: str) -> float:
        a, b = self.symbols.index(x), self.symbols.index(y)
        if a == b:
            return 1.0
        a, b = max(a, b), min(a, b)
        return float(self.values[a * (a - 1) // 2 + b])

    def as_dict(self) -> dict[tuple[str, str], float]:
        return dict(zip(self.pairs, self.values.tolist()))

    @classmethod
    def from_pairs(cls, symbols, entries: dict) -> "CrossCorrMatrix":
        symbols = tuple(symbols)
        vals = []
        for a in range(1, len(symbols)):
            for b in range(a):
                key = (symbols[a], symbols[b])
                vals.append(entries[key] if key in entries else entries[key[::-1]])
        return cls(symbols, np.array(vals, dtype=float))


def _acf(x: np.ndarray, max_lag: int) -> AcfReport:
    n = len(x)
    if n <= max_lag:
        raise ValueError(f"series of length {n} is too short for lag {max_lag}")
    d = x - x.mean()
    var = float(np.dot(d, d))
    if var <= 0.0 or not np.isfinite(var):
        raise DegenerateVariance("series has zero variance")
    vals = np.empty(max_lag + 1)
    vals[0] = 1.0
    for tau in range(1, max_lag + 1):
        vals[tau] = np.dot(d[:-tau], d[tau:]) / var
    return AcfReport(np.arange(max_lag + 1), vals, n)


def acf_squared(returns: ReturnSeries, max_lag: int = 100) -> AcfReport:
    """Sigma(tau) of R^2 with one shared mean and a common 1/n normalization."""
    r = returns.values
    return _acf(r * r, max_lag)


def acf_returns(returns: ReturnSeries, max_lag: int = 100) -> AcfReport:
    return _acf(returns.values, max_lag)


def cross_correlation(a: ReturnSeries, b: ReturnSeries) -> float:
    x, y = a.values, b.values
    if len(x) != len(y):
        raise GridMismatch(f"series lengths differ: {len(x)} vs {len(y)}")
    dx, dy = x - x.mean(), y - y.mean()
    vx, vy = float(np.dot(dx, dx)), float(np.dot(dy, dy))
    if vx <= 0 or vy <= 0:
        raise DegenerateVariance("a series has zero variance")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(vx * vy), -1.0, 1.0))


def corr_matrix(series: list[tuple[str, ReturnSeries]]) -> CrossCorrMatrix:
    if len(series) < 2:
        raise ValueError("need at least two series")
    symbols = tuple(sym for sym, _ in series)
    vals = []
    for a in range(1, len(series)):
        for b in range(a):
            try:
                vals.append(cross_correlation(series[a][1], series[b][1]))
            except (GridMismatch, DegenerateVariance) as exc:
                raise type(exc)(f"{symbols[a]}-{symbols[b]}: {exc}") from exc
    return CrossCorrMatrix(symbols, np.array(vals))


@dataclass(frozen=True)
class RatioReport:
    rows: list[tuple[str, str, float, float, float]]  # (a, b, real, synth, ratio or nan)
    median_ratio: float
    noise_floor: float = NOISE_FLOOR


def reproduction_ratio(real: CrossCorrMatrix, synth: CrossCorrMatrix,
                       noise_floor: float = NOISE_FLOOR) -> RatioReport:
    """Per-pair synth / real ratios; pairs with |real| below the noise floor get NaN."""
    if set(real.symbols) != set(synth.symbols):
        raise SymbolMismatch(f"{sorted(real.symbols)} vs {sorted(synth.symbols)}")
    rows, ratios = [], []
    for (a, b), rv in zip(real.pairs, real.values):
        sv = synth.get(a, b)
        ratio = sv / rv if abs(rv) >= noise_floor else float("nan")
        if np.isfinite(ratio):
            ratios.append(ratio)
        rows.append((a, b, float(rv), float(sv), ratio))
    median = float(np.median(ratios)) if ratios else float("nan")
    return RatioReport(rows, median, noise_floor)


def mann_kendall(values) -> tuple[float, float]:
    """Kendall's tau of ``values`` against time and its two-sided p-value."""
    v = np.asarray(values, dtype=float)
    res = stats.kendalltau(np.arange(len(v)), v)
    return float(res.statistic), float(res.pvalue)


def render_table(m: CrossCorrMatrix) -> str:
    """Lower-triangular text table of correlations x100, rounded to integers."""
    syms = m.symbols
    width = max(3, max(len(x) for x in syms)) + 1
    lines = []
    for a in range(1, len(syms)):
        cells = "".join(f"{int(round(100 * m.get(syms[a], syms[b]))):>{width}d}" for b in range(a))
        lines.append(f"{syms[a]:<{width}}{cells}")
    lines.append(" " * width + "".join(f"{x:>{width}}" for x in syms[:-1]))
    return "\n".join(lines)


def write_ratio_csv(report: RatioReport, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["symbol_a", "symbol_b", "real", "synth", "ratio"])
        for a, b, rv, sv, ratio in report.rows:
            w.writerow([a, b, f"{rv:.6f}", f"{sv:.6f}", "" if not np.isfinite(ratio) else f"{ratio:.6f}"])


def read_matrix_csv(path) -> CrossCorrMatrix:
    """Long-form ``symbol_a,symbol_b,value`` file; symbol order follows first appearance."""
    entries, order = {}, []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            a, b = row["symbol_a"], row["symbol_b"]
            for x in (b, a):
                if x not in order:
                    order.append(x)
            entries[(a, b)] = float(row["value"])
    return CrossCorrMatrix.from_pairs(order, entries)


def write_matrix_csv(m: CrossCorrMatrix, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["symbol_a", "symbol_b", "value"])
        for (a, b), v in zip(m.pairs, m.values):
            w.writerow([a, b, f"{v:.6f}"])
