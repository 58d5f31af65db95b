"""File-based pipeline behind the ``wismc`` subcommands.

Layout under ``RunConfig.output_dir``::

    data/<SYM>.prices.csv    timestamp,price (1-minute grid)
    data/<SYM>.returns.csv   minute,timestamp,return
    model/<SYM>.kernel.json  + .bin, embeds bins, index spec and config hash
    model/follower.json      + .bin, when a leader/follower pair is configured
    synth/<SYM>.csv          minute,state,return (state labels are 1-based)
    reports/                 ACF tables, correlation matrices, ratio report
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ArtifactMismatch, GridMismatch, InputError
from .estimation import estimate_follower, estimate_kernel, load_follower, save_follower
from .index_process import IndexSpec, fit_index_bins, index_path
from .market_data import (BinSpec, PriceSeries, ReturnSeries, StatePath, compute_returns,
                          discretize, fit_return_bins, read_ticks_csv, resample_to_grid)
from .semimarkov import IndexedKernel, load_kernel, save_kernel
from .simulation import (GENERATOR, SimConfig, SimTrace, default_warmup, paths_to_returns,
                         simulate_bivariate, simulate_stepwise)
from .statistics import (acf_returns, acf_squared, corr_matrix, read_matrix_csv, render_table,
                         reproduction_ratio, write_matrix_csv, write_ratio_csv)

log = logging.getLogger(__name__)


def _fmt(x: float) -> str:
    return repr(float(x))


def _map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_star, [(fn, it) for it in items]))


def _star(arg):
    fn, it = arg
    return fn(*it)


def symbol_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1, dtype=np.uint64)[0])


# -- ingest ------------------------------------------------------------------------

def write_prices(p: PriceSeries, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "price"])
        for ts, px in zip(p.timestamps.tolist(), p.prices.tolist()):
            w.writerow([ts, _fmt(px)])


def write_returns(r: ReturnSeries, timestamps: np.ndarray, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["minute", "timestamp", "return"])
        for k, (ts, v) in enumerate(zip(timestamps.tolist(), r.values.tolist())):
            w.writerow([k, ts, _fmt(v)])


def read_returns(path, symbol: str = "") -> ReturnSeries:
    path = Path(path)
    vals = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "return" not in reader.fieldnames:
            raise InputError(f"{path}:1: missing 'return' column")
        for lineno, row in enumerate(reader, start=2):
            try:
                vals.append(float(row["return"]))
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}:{lineno}: bad return value {row['return']!r}") from exc
    return ReturnSeries(np.array(vals), symbol or path.name.split(".")[0])


def align(series: dict[str, PriceSeries]) -> dict[str, PriceSeries]:
    """Trim every price series to the slots covered by all of them."""
    start = max(p.t0 for p in series.values())
    stop = min(p.t0 + p.interval * len(p) for p in series.values())
    if stop <= start:
        raise GridMismatch("symbols share no common minute")
    out = {}
    for sym, p in series.items():
        a = (start - p.t0) // p.interval
        b = (stop - p.t0) // p.interval
        out[sym] = PriceSeries(start, p.prices[a:b], p.interval, sym)
    return out


def run_ingest(cfg: RunConfig) -> dict[str, int]:
    if not cfg.symbols:
        raise InputError("no symbols configured")
    grids = {}
    for sym, src in cfg.symbols.items():
        ticks = read_ticks_csv(src, sym)
        grids[sym] = resample_to_grid(ticks, cfg.interval)
        log.info("%s: %d ticks -> %d slots", sym, len(ticks), len(grids[sym]))
    if len(grids) > 1:
        grids = align(grids)
    data = cfg.out / "data"
    data.mkdir(parents=True, exist_ok=True)
    rows = {}
    for sym, p in grids.items():
        r = compute_returns(p)
        write_prices(p, data / f"{sym}.prices.csv")
        write_returns(r, p.timestamps[1:], data / f"{sym}.returns.csv")
        rows[sym] = len(r)
    manifest = {"config_hash": cfg.model_hash(), "interval": cfg.interval,
                "symbols": {s: {"prices": len(grids[s]), "returns": rows[s]} for s in sorted(rows)}}
    (data / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return rows


# -- estimate ----------------------------------------------------------------------

def _fit_symbol(returns: ReturnSeries, cfg: RunConfig, lam: float):
    bins = fit_return_bins(returns, cfg.states, cfg.center_mass)
    path = discretize(returns, bins)
    spec = IndexSpec.from_bins(bins, lam, truncation_eps=cfg.truncation_eps)
    ipath = index_path(path, spec)
    ibins = fit_index_bins(ipath.at_transitions[1:], cfg.index_levels)
    kernel = estimate_kernel(path, ipath, ibins, cfg.t_max, cfg.states)
    return bins, path, spec, ipath, ibins, kernel


def _model_extra(cfg, sym, bins, spec, n_returns):
    return {"symbol": sym, "config_hash": cfg.model_hash(), "return_bins": bins.to_dict(),
            "index_spec": spec.to_dict(), "sample_length": n_returns}


def _acf_distance(real: np.ndarray, synth: np.ndarray) -> float:
    return float(np.sqrt(np.sum((real[1:] - synth[1:]) ** 2)))


def _select_lambda(sym: str, k: int, returns: ReturnSeries, cfg: RunConfig, model_dir: Path):
    """Fit one model per grid value; keep the one whose simulated Sigma(tau) is
    closest in L2 (lags 1..max_lag) to the real one."""
    real_acf = acf_squared(returns, cfg.max_lag).values
    rows = []
    best = None
    for lam in cfg.lam_grid:
        bins, _, spec, _, _, kernel = _fit_symbol(returns, cfg, lam)
        horizon = len(returns) + default_warmup(lam)
        sim = simulate_stepwise(kernel, spec, SimConfig(horizon, symbol_seed(cfg.seed, k),
                                                       min_count=cfg.min_count))
        synth = paths_to_returns(StatePath(sim.states[default_warmup(lam):]), bins)
        dist = _acf_distance(real_acf, acf_squared(synth, cfg.max_lag).values)
        save_kernel(kernel, model_dir / f"{sym}.lam{lam:.4f}.kernel",
                    _model_extra(cfg, sym, bins, spec, len(returns)))
        rows.append((sym, lam, dist))
        if best is None or dist < best[0]:
            best = (dist, lam)
    return rows, best[1]


def _estimate_one(sym: str, k: int, cfg: RunConfig) -> dict:
    data = cfg.out / "data"
    model_dir = cfg.out / "model"
    returns = read_returns(data / f"{sym}.returns.csv", sym)
    selection = []
    lam = cfg.lam_for(sym)
    if cfg.lam_grid:
        selection, lam = _select_lambda(sym, k, returns, cfg, model_dir)
    bins, path, spec, ipath, ibins, kernel = _fit_symbol(returns, cfg, lam)
    save_kernel(kernel, model_dir / f"{sym}.kernel", _model_extra(cfg, sym, bins, spec, len(returns)))
    sparse = int(np.count_nonzero((kernel.n_context > 0) & (kernel.n_context < cfg.min_count)))
    empty = int(np.count_nonzero(kernel.n_context == 0))
    log.info("%s: lambda=%.4f, %d sojourns, contexts below min_count: %d, empty: %d",
             sym, lam, path.n_transitions - 1, sparse, empty)
    return {"symbol": sym, "lam": lam, "selection": selection, "sparse_contexts": sparse,
            "empty_contexts": empty}


def run_estimate(cfg: RunConfig) -> dict:
    model_dir = cfg.out / "model"
    model_dir.mkdir(parents=True, exist_ok=True)
    syms = list(cfg.symbols) or sorted(p.name.split(".")[0] for p in (cfg.out / "data").glob("*.returns.csv"))
    for sym in syms:
        if not (cfg.out / "data" / f"{sym}.returns.csv").exists():
            raise FileNotFoundError(cfg.out / "data" / f"{sym}.returns.csv")
    results = _map(_estimate_one, [(sym, k, cfg) for k, sym in enumerate(syms)], cfg.jobs)
    chosen = {r["symbol"]: r["lam"] for r in results}
    if cfg.lam_grid:
        with (model_dir / "lambda_selection.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["symbol", "lam", "acf_l2", "selected"])
            for r in results:
                for sym, lam, dist in r["selection"]:
                    w.writerow([sym, f"{lam:.4f}", f"{dist:.6f}", int(lam == r["lam"])])
    if cfg.leader is not None:
        _estimate_follower(cfg, chosen)
    return {"lambda": chosen, "symbols": syms}


def _state_path_for(sym: str, cfg: RunConfig):
    kernel, env = load_kernel(cfg.out / "model" / f"{sym}.kernel.json")
    bins = BinSpec.from_dict(env["return_bins"])
    spec = IndexSpec.from_dict(env["index_spec"])
    returns = read_returns(cfg.out / "data" / f"{sym}.returns.csv", sym)
    return kernel, bins, spec, discretize(returns, bins)


def _estimate_follower(cfg: RunConfig, chosen: dict) -> None:
    _, _, _, lead_path = _state_path_for(cfg.leader, cfg)
    fkern, fbins, fspec, foll_path = _state_path_for(cfg.follower, cfg)
    fk = estimate_follower(lead_path, foll_path, index_path(foll_path, fspec), fkern.index_bins,
                           cfg.t_max, cfg.states, cfg.follower_index_at)
    support = fk.support_counts
    populated = support[support > 0]
    log.info("follower %s | leader %s: %d contexts, %d below min_count",
             cfg.follower, cfg.leader, populated.size, int(np.count_nonzero(populated < cfg.min_count)))
    save_follower(fk, cfg.out / "model" / "follower", {
        "leader": cfg.leader, "follower": cfg.follower, "config_hash": cfg.model_hash(),
        "follower_return_bins": fbins.to_dict(), "follower_index_spec": fspec.to_dict()})


# -- simulate ----------------------------------------------------------------------

def _check_hash(env: dict, cfg: RunConfig, what: str, force: bool) -> None:
    if env.get("config_hash") != cfg.model_hash():
        msg = f"{what} was built with config {env.get('config_hash')}, current is {cfg.model_hash()}"
        if not force:
            raise ArtifactMismatch(msg + " (use --force to override)")
        log.warning(msg)


def write_synth(path: Path, states: np.ndarray, returns: np.ndarray) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["minute", "state", "return"])
        for k, (z, r) in enumerate(zip(states.tolist(), returns.tolist())):
            w.writerow([k, z + 1, _fmt(r)])


def _load_model(sym: str, cfg: RunConfig, force: bool):
    path = cfg.out / "model" / f"{sym}.kernel.json"
    if not path.exists():
        raise FileNotFoundError(path)
    kernel, env = load_kernel(path)
    _check_hash(env, cfg, f"model {sym}", force)
    return kernel, BinSpec.from_dict(env["return_bins"]), IndexSpec.from_dict(env["index_spec"]), env


def _simulate_rep(rep: int, cfg: RunConfig, force: bool) -> dict:
    out = cfg.out / "synth" if cfg.replications == 1 else cfg.out / "synth" / f"rep{rep:03d}"
    out.mkdir(parents=True, exist_ok=True)
    syms = list(cfg.symbols) or sorted(p.name.split(".")[0]
                                       for p in (cfg.out / "model").glob("*.kernel.json")
                                       if ".lam" not in p.name)
    models = {sym: _load_model(sym, cfg, force) for sym in syms}
    manifest = {"generator": GENERATOR, "seed": cfg.seed, "replication": rep,
                "config_hash": cfg.model_hash(), "symbols": {}}
    base_seed = symbol_seed(cfg.seed, 10_000 + rep) if cfg.replications > 1 else cfg.seed
    for k, sym in enumerate(syms):
        if sym == cfg.follower:
            continue
        kernel, bins, spec, env = models[sym]
        warm = cfg.warmup if cfg.warmup is not None else default_warmup(spec.lam)
        horizon = cfg.horizon or env["sample_length"]
        sim_cfg = SimConfig(horizon + warm, symbol_seed(base_seed, k), min_count=cfg.min_count)
        trace = SimTrace()
        if sym == cfg.leader:
            fpath = cfg.out / "model" / "follower.json"
            if not fpath.exists():
                raise FileNotFoundError(fpath)
            fk, fenv = load_follower(fpath)
            _check_hash(fenv, cfg, "follower model", force)
            fkernel, fbins, fspec, _ = models[cfg.follower]
            bp = simulate_bivariate(kernel, fk, spec, fspec, sim_cfg, trace)
            paths = {sym: (bp.leader, bins, kernel), cfg.follower: (bp.follower, fbins, fkernel)}
        else:
            paths = {sym: (simulate_stepwise(kernel, spec, sim_cfg, trace), bins, kernel)}
        for name, (path, b, kern) in paths.items():
            states = path.states[warm:]
            write_synth(out / f"{name}.csv", states, b.representatives[states])
            manifest["symbols"][name] = {
                "lam": models[name][2].lam, "warmup": warm, "horizon": int(len(states)),
                "model_digest": kern.digest(), "stream_seed": sim_cfg.seed,
                "role": "follower" if name == cfg.follower else ("leader" if name == cfg.leader else "solo"),
            }
        manifest["symbols"][sym]["tier_counts"] = trace.tier_counts.tolist()
        if sym == cfg.leader:
            manifest["symbols"][cfg.follower]["tier_counts"] = trace.follower_tier_counts.tolist()
            log.info("follower fallback tiers used: %s", trace.follower_tier_counts.tolist())
    if cfg.follower is not None:
        manifest["follower_digest"] = load_follower(cfg.out / "model" / "follower.json")[0].digest()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def run_simulate(cfg: RunConfig, force: bool = False) -> list[dict]:
    if not (cfg.out / "model").is_dir():
        raise FileNotFoundError(cfg.out / "model")
    return _map(_simulate_rep, [(rep, cfg, force) for rep in range(cfg.replications)], cfg.jobs)


# -- analyze / compare ---------------------------------------------------------------

def read_synth(path, symbol: str = "") -> ReturnSeries:
    return read_returns(path, symbol)


def _load_set(directory: Path, pattern: str, syms) -> dict[str, ReturnSeries]:
    out = {}
    for sym in syms:
        p = directory / pattern.format(sym=sym)
        if not p.exists():
            raise FileNotFoundError(p)
        out[sym] = read_returns(p, sym)
    return out


def _symbols(cfg: RunConfig, directory: Path, pattern: str) -> list[str]:
    if cfg.symbols:
        return list(cfg.symbols)
    suffix = pattern.format(sym="")
    return sorted(p.name[: -len(suffix)] for p in directory.glob("*" + suffix))


def write_acf(path: Path, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    n = len(next(iter(columns.values())))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag", *names])
        for tau in range(n):
            w.writerow([tau, *(f"{columns[c][tau]:.10f}" for c in names)])


def run_analyze(cfg: RunConfig, source: str = "real") -> dict:
    directory, pattern = ((cfg.out / "data", "{sym}.returns.csv") if source == "real"
                          else (cfg.out / "synth", "{sym}.csv"))
    syms = _symbols(cfg, directory, pattern)
    series = _load_set(directory, pattern, syms)
    rep = cfg.out / "reports"
    rep.mkdir(parents=True, exist_ok=True)
    for sym, r in series.items():
        write_acf(rep / f"acf_{source}_{sym}.csv",
                  {"acf_squared": acf_squared(r, cfg.max_lag).values,
                   "acf_returns": acf_returns(r, cfg.max_lag).values})
    result = {"symbols": syms}
    if len(series) >= 2:
        m = corr_matrix(list(series.items()))
        write_matrix_csv(m, rep / f"corr_{source}.csv")
        (rep / f"table_{source}.txt").write_text(render_table(m) + "\n")
        result["corr"] = m
    return result


def compare_matrices(real, synth, rep_dir: Path) -> float:
    rep_dir.mkdir(parents=True, exist_ok=True)
    report = reproduction_ratio(real, synth)
    write_ratio_csv(report, rep_dir / "comparison.csv")
    (rep_dir / "table_real.txt").write_text(render_table(real) + "\n")
    (rep_dir / "table_synth.txt").write_text(render_table(synth) + "\n")
    lines = [f"{a}-{b}: real {rv:.2f} synth {sv:.2f} ratio "
             + (f"{ratio:.2f}" if np.isfinite(ratio) else "n/a")
             for a, b, rv, sv, ratio in report.rows]
    lines.append(f"median ratio {report.median_ratio:.2f} "
                 f"(pairs with |real| < {report.noise_floor} excluded)")
    (rep_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    return report.median_ratio


def run_compare(cfg: RunConfig, real_matrix=None, synth_matrix=None) -> dict:
    rep = cfg.out / "reports"
    if real_matrix is not None or synth_matrix is not None:
        if real_matrix is None or synth_matrix is None:
            raise InputError("--real-matrix and --synth-matrix go together")
        real, synth = read_matrix_csv(real_matrix), read_matrix_csv(synth_matrix)
        return {"median_ratio": compare_matrices(real, synth, rep), "summary": rep / "summary.txt"}

    syms = _symbols(cfg, cfg.out / "data", "{sym}.returns.csv")
    real = _load_set(cfg.out / "data", "{sym}.returns.csv", syms)
    synth = _load_set(cfg.out / "synth", "{sym}.csv", syms)
    rep.mkdir(parents=True, exist_ok=True)
    for sym in syms:
        write_acf(rep / f"acf_{sym}.csv", {"real": acf_squared(real[sym], cfg.max_lag).values,
                                           "synth": acf_squared(synth[sym], cfg.max_lag).values})
    result = {"symbols": syms, "median_ratio": None}
    if len(syms) >= 2:
        # a shorter synthetic run is compared on its own grid; pairs never mix sources
        mr = corr_matrix(list(real.items()))
        ms = corr_matrix(list(synth.items()))
        write_matrix_csv(mr, rep / "corr_real.csv")
        write_matrix_csv(ms, rep / "corr_synth.csv")
        result["median_ratio"] = compare_matrices(mr, ms, rep)
        result["real"], result["synth"] = mr, ms
    return result
