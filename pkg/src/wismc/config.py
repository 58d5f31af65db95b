"""Run configuration for the command-line pipeline."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import InputError

# fields that change the estimated models; runtime-only settings are excluded
MODEL_FIELDS = ("symbols", "states", "center_mass", "index_levels", "lam", "lam_grid",
                "truncation_eps", "t_max", "leader", "follower", "follower_index_at",
                "interval", "min_count")


@dataclass
class RunConfig:
    symbols: dict[str, str] = field(default_factory=dict)
    states: int = 5
    center_mass: float = 0.25
    index_levels: int = 5
    # one value for every symbol, or a per-symbol mapping
    lam: float | dict[str, float] = 0.97
    lam_grid: list[float] | None = None
    truncation_eps: float = 1e-8
    t_max: int = 1000
    horizon: int | None = None
    seed: int = 0
    warmup: int | None = None
    leader: str | None = None
    follower: str | None = None
    follower_index_at: str = "transition"
    min_count: int = 5
    interval: int = 60
    max_lag: int = 100
    replications: int = 1
    output_dir: str = "wismc_out"
    jobs: int = 1

    def validate(self) -> "RunConfig":
        lams = self.lam.values() if isinstance(self.lam, dict) else [self.lam]
        for lam in list(lams) + list(self.lam_grid or []):
            if not 0.0 < float(lam) <= 1.0:
                raise InputError(f"lambda must lie in (0, 1], got {lam}")
        if self.states < 3 or self.states % 2 == 0:
            raise InputError(f"states must be odd and >= 3, got {self.states}")
        if self.index_levels < 1:
            raise InputError("index_levels must be >= 1")
        if self.t_max < 1:
            raise InputError("t_max must be >= 1")
        if (self.leader is None) != (self.follower is None):
            raise InputError("leader and follower must be given together")
        if self.leader is not None:
            if self.leader == self.follower:
                raise InputError("leader and follower must differ")
            for sym in (self.leader, self.follower):
                if self.symbols and sym not in self.symbols:
                    raise InputError(f"{sym} is not a configured symbol")
        if self.follower_index_at not in ("transition", "minute"):
            raise InputError("follower_index_at must be 'transition' or 'minute'")
        return self

    def lam_for(self, symbol: str) -> float:
        if isinstance(self.lam, dict):
            return float(self.lam[symbol])
        return float(self.lam)

    def model_hash(self) -> str:
        d = asdict(self)
        payload = {k: d[k] for k in MODEL_FIELDS}
        payload["symbols"] = sorted(payload["symbols"])
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def out(self) -> Path:
        return Path(self.output_dir)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config file, then apply non-None overrides (from CLI flags)."""
    data = {}
    if path is not None:
        p = Path(path)
        try:
            data = json.loads(p.read_text())
        except FileNotFoundError:
            raise
        except json.JSONDecodeError as exc:
            raise InputError(f"{p}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k == "symbols":
            data.setdefault("symbols", {})
            data["symbols"] = {**data["symbols"], **v}
        else:
            data[k] = v
    if "jobs" not in (overrides or {}) or (overrides or {}).get("jobs") is None:
        env = os.environ.get("WISMC_JOBS")
        if env and "jobs" not in data:
            try:
                data["jobs"] = int(env)
            except ValueError:
                raise InputError(f"WISMC_JOBS must be an integer, got {env!r}") from None
    unknown = set(data) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**data).validate()
