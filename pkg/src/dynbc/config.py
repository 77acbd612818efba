"""Flat key-value run configuration with dotted section names.

A config file is plain text: one ``key = value`` pair per line, ``#``
comments, blank lines ignored.  Every key has a documented default except
``domain.kind`` (always required) and the disk resolution fields
``domain.n_r`` / ``domain.n_theta`` (required when kind is disk).  Unknown
keys are rejected with the list of valid keys.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from .dynamics import TimeGrid
from .errors import ConfigError
from .eta import default_flatness_tol
from .geometry import ArcSpec, DomainSpec, Mesh

_REQUIRED = object()


def _parse_float(s: str) -> float:
    try:
        return float(s)
    except ValueError as exc:
        raise ConfigError(f"not a number: {s!r}") from exc


def _parse_int(s: str) -> int:
    try:
        return int(s)
    except ValueError as exc:
        raise ConfigError(f"not an integer: {s!r}") from exc


def _parse_floats(s: str) -> tuple[float, ...]:
    if not s.strip():
        return ()
    return tuple(_parse_float(p) for p in s.split(","))


def _parse_str(s: str) -> str:
    return s.strip()


#: key -> (parser, default, help); _REQUIRED marks unconditionally required keys
SCHEMA: dict[str, tuple] = {
    "domain.kind": (_parse_str, _REQUIRED, "interval or disk"),
    "domain.size": (_parse_float, 1.0, "interval length or disk radius"),
    "domain.n": (_parse_int, 32, "interval cell count"),
    "domain.n_r": (_parse_int, None, "disk radial rings (required for disk)"),
    "domain.n_theta": (_parse_int, None, "disk angular nodes (required for disk)"),
    "domain.gamma": (_parse_str, "right", "interval control end: left/right/both"),
    "domain.gamma0": (_parse_str, "", "interval observation end(s); default gamma"),
    "domain.gamma_center": (_parse_float, 0.0, "disk control arc center angle"),
    "domain.gamma_half_width": (_parse_float, math.pi / 8, "disk control arc half-width"),
    "domain.gamma0_center": (_parse_float, None, "disk observation arc center; default gamma_center"),
    "domain.gamma0_half_width": (_parse_float, math.pi / 4, "disk observation arc half-width"),
    "physics.d": (_parse_float, 1.0, "bulk diffusivity"),
    "physics.delta": (_parse_float, 1.0, "surface diffusivity (ignored on the interval)"),
    "time.T": (_parse_float, 1.0, "final time"),
    "time.n_t": (_parse_int, 128, "time steps"),
    "time.scheme": (_parse_str, "implicit-euler", "implicit-euler or crank-nicolson"),
    "carleman.lambda": (_parse_float, 2.0, "weight sharpness parameter"),
    "carleman.C_for_s1": (_parse_float, 1.0, "constant in the s floor C(T + T^{8/3})"),
    "carleman.s_multipliers": (_parse_floats, (1.0, 2.0, 4.0), "s values as multiples of the floor"),
    "carleman.samples": (_parse_int, 20, "random terminal data per sweep point"),
    "eta.bump_power": (_parse_int, 3, "bump exponent of the boundary data"),
    "eta.tol": (_parse_str, "auto", "flatness tolerance or 'auto'"),
    "hum.epsilon": (_parse_float, 1e-8, "penalty strength"),
    "hum.cg_tol": (_parse_float, 1e-10, "CG relative residual"),
    "hum.cg_max_iter": (_parse_int, 500, "CG iteration cap"),
    "observability.power_tol": (_parse_float, 5e-3, "quotient settling tolerance"),
    "observability.power_max_iter": (_parse_int, 40, "power iteration cap"),
    "observability.cg_tol": (_parse_float, 1e-8, "inner CG relative residual"),
    "observability.cg_max_iter": (_parse_int, 400, "inner CG iteration cap"),
    "observability.T_values": (_parse_floats, (), "horizon sweep; default just time.T"),
    "regularity.samples": (_parse_int, 10, "random sources for the ratio study"),
    "cost.samples": (_parse_int, 10, "random draws for the cost study"),
    "simulate.y0": (_parse_str, "random", "initial state: random or zero"),
    "output.dir": (_parse_str, "out", "artifact directory"),
    "output.formats": (_parse_str, "csv,json,svg", "emitted formats"),
    "output.dump_fields": (_parse_str, "false", "also dump full snapshots (true/false)"),
    "seed": (_parse_int, 0, "random stream seed"),
}


@dataclass
class RunConfig:
    """Validated effective configuration (defaults filled in)."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    # -- derived objects -------------------------------------------------
    def domain_spec(self) -> DomainSpec:
        v = self.values
        if v["domain.kind"] == "interval":
            g0 = v["domain.gamma0"] or v["domain.gamma"]
            return DomainSpec(kind="interval", size=v["domain.size"], n=v["domain.n"],
                              gamma=v["domain.gamma"], gamma0=g0)
        g0c = v["domain.gamma0_center"]
        return DomainSpec(
            kind="disk", size=v["domain.size"],
            n_r=v["domain.n_r"], n_theta=v["domain.n_theta"],
            gamma=ArcSpec(v["domain.gamma_center"], v["domain.gamma_half_width"]),
            gamma0=ArcSpec(v["domain.gamma_center"] if g0c is None else g0c,
                           v["domain.gamma0_half_width"]),
        )

    def time_grid(self, T: float | None = None) -> TimeGrid:
        return TimeGrid(T=self.values["time.T"] if T is None else T,
                        n_t=self.values["time.n_t"],
                        scheme=self.values["time.scheme"])

    def eta_tol(self, mesh: Mesh) -> float:
        raw = self.values["eta.tol"]
        if raw == "auto":
            return default_flatness_tol(mesh)
        return _parse_float(raw)

    def observability_T_values(self) -> tuple[float, ...]:
        ts = self.values["observability.T_values"]
        return ts if ts else (self.values["time.T"],)

    # -- provenance ------------------------------------------------------
    def echo_lines(self) -> list[str]:
        """Canonical sorted ``key = value`` lines of the effective config.

        The output destination is excluded: it does not influence any
        computed value, so runs into different directories stay
        byte-identical.
        """
        out = []
        for key in sorted(self.values):
            if key == "output.dir":
                continue
            val = self.values[key]
            if isinstance(val, tuple):
                val = ",".join(repr(x) for x in val)
            elif val is None:
                val = ""
            elif isinstance(val, float):
                val = repr(val)
            out.append(f"{key} = {val}")
        return out

    def config_hash(self) -> str:
        text = "\n".join(self.echo_lines())
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _read_pairs(path: str | Path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if key in pairs:
            raise ConfigError(f"{p}:{lineno}: duplicate key {key!r}")
        pairs[key] = val.strip()
    return pairs


def parse_config(path: str | Path, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read, validate and default-fill a config file.

    ``overrides`` are command-line ``key=value`` pairs applied on top.
    """
    pairs = _read_pairs(path)
    if overrides:
        pairs.update(overrides)

    unknown = sorted(set(pairs) - set(SCHEMA))
    if unknown:
        valid = ", ".join(sorted(SCHEMA))
        raise ConfigError(f"unknown key(s) {unknown}; valid keys: {valid}")

    values: dict = {}
    for key, (parser, default, _help) in SCHEMA.items():
        if key in pairs:
            try:
                values[key] = parser(pairs[key])
            except ConfigError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key {key}")
        else:
            values[key] = default

    _validate(values)
    return RunConfig(values=values)


def _validate(v: dict) -> None:
    kind = v["domain.kind"]
    if kind not in ("interval", "disk"):
        raise ConfigError(f"domain.kind must be interval or disk, got {kind!r}")
    if v["domain.size"] <= 0:
        raise ConfigError(f"domain.size must be positive, got {v['domain.size']}")
    if kind == "interval":
        if v["domain.n"] < 4:
            raise ConfigError(f"domain.n must be at least 4, got {v['domain.n']}")
        for key in ("domain.gamma", "domain.gamma0"):
            if v[key] and v[key] not in ("left", "right", "both"):
                raise ConfigError(f"{key} must be left/right/both, got {v[key]!r}")
    else:
        if v["domain.n_r"] is None:
            raise ConfigError("domain.n_r is required when domain.kind = disk")
        if v["domain.n_theta"] is None:
            raise ConfigError("domain.n_theta is required when domain.kind = disk")
        if v["domain.n_r"] < 2:
            raise ConfigError(f"domain.n_r must be at least 2, got {v['domain.n_r']}")
        if v["domain.n_theta"] < 4:
            raise ConfigError(f"domain.n_theta must be at least 4, got {v['domain.n_theta']}")
        if not 0 < v["domain.gamma_half_width"] < math.pi:
            raise ConfigError("domain.gamma_half_width must lie in (0, pi)")
    if v["physics.d"] <= 0:
        raise ConfigError(f"physics.d must be positive, got {v['physics.d']}")
    if v["physics.delta"] < 0:
        raise ConfigError(f"physics.delta must be nonnegative, got {v['physics.delta']}")
    if v["time.T"] <= 0:
        raise ConfigError(f"time.T must be positive, got {v['time.T']}")
    if v["time.n_t"] < 4:
        raise ConfigError(f"time.n_t must be at least 4, got {v['time.n_t']}")
    if v["time.scheme"] not in ("implicit-euler", "crank-nicolson"):
        raise ConfigError(f"time.scheme must be implicit-euler or crank-nicolson, "
                          f"got {v['time.scheme']!r}")
    if v["simulate.y0"] not in ("random", "zero"):
        raise ConfigError(f"simulate.y0 must be random or zero, got {v['simulate.y0']!r}")
    if v["output.dump_fields"] not in ("true", "false"):
        raise ConfigError(f"output.dump_fields must be true or false, "
                          f"got {v['output.dump_fields']!r}")
    if v["carleman.lambda"] < 1:
        raise ConfigError(f"carleman.lambda must be at least 1, got {v['carleman.lambda']}")
    if v["carleman.C_for_s1"] <= 0:
        raise ConfigError(f"carleman.C_for_s1 must be positive, got {v['carleman.C_for_s1']}")
    if any(m <= 0 for m in v["carleman.s_multipliers"]):
        raise ConfigError("carleman.s_multipliers must be positive")
    if v["hum.epsilon"] <= 0:
        raise ConfigError(f"hum.epsilon must be positive, got {v['hum.epsilon']}")
    if not 0 < v["hum.cg_tol"] < 1:
        raise ConfigError(f"hum.cg_tol must lie in (0, 1), got {v['hum.cg_tol']}")
    if any(t <= 0 for t in v["observability.T_values"]):
        raise ConfigError("observability.T_values must be positive")
    for key in ("carleman.samples", "regularity.samples", "cost.samples",
                "hum.cg_max_iter", "observability.power_max_iter",
                "observability.cg_max_iter", "eta.bump_power"):
        if v[key] < 0:
            raise ConfigError(f"{key} must be nonnegative, got {v[key]}")
