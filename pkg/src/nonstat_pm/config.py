"""Experiment configuration files.

INI syntax (``key = value`` under ``[section]`` headers).  Every key is
declared in :data:`SCHEMA`; unknown sections or keys are errors, so typos
cannot silently change an experiment.  Lists are comma separated; matrix
rows (``transition``) are separated by ``;``.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

KINDS = ("stationary_clt", "sequential_clt", "self_norming", "quenched", "qds_covariance", "qds_clt",
         "rate_sweep")
SIMULATION_KINDS = ("stationary_clt", "sequential_clt", "self_norming", "qds_covariance", "qds_clt")
CLT_KINDS = KINDS[:-1]
SCHEDULE_TYPES = ("constant", "alternating", "list", "iid_uniform", "finite_markov", "qds")
QDS_KINDS = ("qds_covariance", "qds_clt")
REQUIRED = object()


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


def _number(text: str) -> float:
    """Float, also accepting ``a/b`` and ``2^-k``."""
    t = text.strip()
    m = re.fullmatch(r"([+-]?\d+(?:\.\d*)?)\s*\^\s*([+-]?\d+)", t)
    if m:
        return float(m.group(1)) ** int(m.group(2))
    if "/" in t:
        return float(Fraction(t))
    return float(t)


def _integer(text: str) -> int:
    t = text.strip()
    m = re.fullmatch(r"(\d+)\s*\^\s*(\d+)", t)
    if m:
        return int(m.group(1)) ** int(m.group(2))
    v = float(t)
    if v != int(v):
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


def _int_list(text: str) -> list[int]:
    return [_integer(s) for s in text.split(",") if s.strip()]


def _float_list(text: str) -> list[float]:
    return [_number(s) for s in text.split(",") if s.strip()]


def _str_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _matrix(text: str) -> list[list[float]]:
    return [_float_list(row) for row in text.split(";") if row.strip()]


def _boolean(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "experiment": {
        "kind": (str.strip, REQUIRED),
        "seed": (_integer, 0),
        "M": (_integer, None),
        "N": (_int_list, REQUIRED),
        "observable": (str.strip, "x_minus_half"),
        "beta_star": (_number, 0.3),
        "centering": (str.strip, "transfer_exact"),
        "threads": (_integer, None),
    },
    "grid": {
        "type": (str.strip, "graded"),
        "size": (_integer, 4096),
        "spacing": (_number, 2.0**-12),
        "ratio": (_number, 1.0 / 32),
    },
    "schedule": {
        "type": (str.strip, REQUIRED),
        "value": (_number, None),
        "values": (_float_list, None),
        "low": (_number, 0.0),
        "high": (_number, None),
        "states": (_float_list, None),
        "transition": (_matrix, None),
        "tau_a0": (_number, 0.05),
        "tau_slope": (_number, 0.2),
        "eta": (_number, 1.0),
        "c_pert": (_number, 0.0),
        "seed": (_integer, None),
    },
    "analysis": {
        "t": (_number, 1.0),
        "n_quad": (_integer, 32),
        "K_max": (_integer, 200),
        "tail_tol": (_number, 1e-10),
        "n_omega": (_integer, 50),
        "i_burn": (_integer, 200),
        "rds_K_max": (_integer, 40),
        "n_boot": (_integer, 50),
        "battery": (str.strip, "cosine"),
        "rates": (_str_list, ["thm21"]),
        "epsilon_var": (_number, 1.0),
        "gamma": (_number, None),  # None: no polynomial mixing constraint (iid)
        "eta": (_number, 1.0),
    },
    "output": {
        "dir": (str.strip, "results"),
    },
}
RATE_KINDS = ("thm21", "cor23", "prop25", "quenched", "rho", "stein_rhs")


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, Any]]
    source: str = ""
    path: str | None = None
    overrides: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @property
    def kind(self) -> str:
        return self.values["experiment"]["kind"]

    @property
    def seed(self) -> int:
        return self.values["experiment"]["seed"]

    def canonical(self) -> str:
        """Result-determining content; output location and thread count excluded."""
        vals = {k: dict(v) for k, v in self.values.items() if k != "output"}
        vals["experiment"].pop("threads", None)
        return json.dumps(vals, sort_keys=True, default=str)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def _line_of(source: str, section: str, key: str | None) -> int | None:
    current = None
    for no, raw in enumerate(source.splitlines(), start=1):
        line = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return no
    return None


def _where(source: str, section: str, key: str | None = None) -> str:
    no = _line_of(source, section, key)
    field_name = f"[{section}] {key}" if key else f"[{section}]"
    return f"line {no}: {field_name}" if no else field_name


def parse(text: str, path: str | None = None) -> tuple[ExperimentConfig | None, list[str]]:
    """Parse and type-check; returns ``(config or None, diagnostics)``."""
    diags: list[str] = []
    fatal = False
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text, source=path or "<config>")
    except configparser.Error as exc:
        return None, [f"syntax error: {exc}".replace("\n", " ")]
    values: dict[str, dict[str, Any]] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            diags.append(f"{_where(text, section)}: unknown section (expected one of {sorted(SCHEMA)})")
    for section, spec in SCHEMA.items():
        given = cp[section] if cp.has_section(section) else {}
        out: dict[str, Any] = {}
        for key in given:
            if key not in spec:
                diags.append(f"{_where(text, section, key)}: unknown key (expected one of {sorted(spec)})")
        for key, (parser, default) in spec.items():
            if key in given:
                try:
                    out[key] = parser(given[key])
                except (ValueError, ZeroDivisionError) as exc:
                    fatal = True
                    diags.append(f"{_where(text, section, key)}: cannot parse {given[key]!r} ({exc})")
            elif default is REQUIRED:
                if section != "schedule" or _needs_schedule(cp):
                    fatal = True
                    diags.append(f"{_where(text, section)}: missing required field '{key}'")
            else:
                out[key] = default
        values[section] = out
    if fatal:
        return None, diags
    cfg = ExperimentConfig(values, text, path)
    diags += _semantic(cfg)
    return (None if diags else cfg), diags


def _needs_schedule(cp: configparser.ConfigParser) -> bool:
    kind = cp.get("experiment", "kind", fallback="").strip()
    return kind != "rate_sweep"


def _semantic(cfg: ExperimentConfig) -> list[str]:
    src = cfg.source
    e, s, a, g = cfg["experiment"], cfg["schedule"], cfg["analysis"], cfg["grid"]
    d: list[str] = []

    def err(section, key, msg):
        d.append(f"{_where(src, section, key)}: {msg}")

    kind = e["kind"]
    if kind not in KINDS:
        err("experiment", "kind", f"unknown kind {kind!r} (expected one of {list(KINDS)})")
        return d
    beta = e["beta_star"]
    if kind in CLT_KINDS and not 0.0 < beta < 1.0 / 3.0:
        err("experiment", "beta_star",
            f"beta_star={beta:g} breaks the hypothesis beta_star < 1/3 under which the central "
            f"limit and its rates hold")
    elif not 0.0 <= beta < 1.0:
        err("experiment", "beta_star", "beta_star must lie in [0, 1)")
    Ns = e["N"]
    if not Ns:
        err("experiment", "N", "N list is empty")
    elif any(b <= a_ for a_, b in zip(Ns, Ns[1:])):
        err("experiment", "N", f"N values must be strictly increasing, got {Ns}")
    elif Ns[0] < 2:
        err("experiment", "N", "N values must be at least 2")
    if kind in SIMULATION_KINDS:
        if e["M"] is None:
            err("experiment", None, "missing required field 'M' (number of Monte Carlo samples)")
        elif e["M"] < 2:
            err("experiment", "M", "M must be at least 2")
    if e["centering"] not in ("transfer_exact", "ensemble_mean"):
        err("experiment", "centering", "centering must be transfer_exact or ensemble_mean")
    if e["threads"] is not None and e["threads"] < 1:
        err("experiment", "threads", "threads must be positive")
    from .observables import BUILTINS
    if e["observable"] not in BUILTINS:
        err("experiment", "observable", f"unknown observable (choose from {sorted(BUILTINS)})")
    elif kind in CLT_KINDS and kind not in QDS_KINDS and BUILTINS[e["observable"]]().dim != 1:
        err("experiment", "observable", f"{kind} needs a scalar observable")
    if g["type"] not in ("graded", "uniform"):
        err("grid", "type", "grid type must be graded or uniform")
    if g["type"] == "uniform" and (g["size"] < 2 or g["size"] % 2):
        err("grid", "size", "uniform grid size must be even and >= 2")
    if kind != "rate_sweep":
        _check_schedule_section(cfg, err)
    if kind in ("qds_covariance", "qds_clt") and not 0.0 <= a["t"] <= 1.0:
        err("analysis", "t", "t must lie in [0, 1]")
    if a["battery"] not in ("cosine", "default"):
        err("analysis", "battery", "battery must be cosine or default")
    if kind == "rate_sweep":
        for r in a["rates"]:
            if r not in RATE_KINDS:
                err("analysis", "rates", f"unknown rate kind {r!r} (choose from {list(RATE_KINDS)})")
    for key in ("n_quad", "K_max", "n_omega", "n_boot", "rds_K_max"):
        if a[key] < 1:
            err("analysis", key, f"{key} must be positive")
    if a["i_burn"] < 0:
        err("analysis", "i_burn", "i_burn must be non-negative")
    return d


def _check_schedule_section(cfg: ExperimentConfig, err) -> None:
    e, s = cfg["experiment"], cfg["schedule"]
    kind, beta = e["kind"], e["beta_star"]
    st = s["type"]
    if st not in SCHEDULE_TYPES:
        err("schedule", "type", f"unknown schedule type {st!r} (expected one of {list(SCHEDULE_TYPES)})")
        return
    expected = {
        "stationary_clt": ("constant",),
        "sequential_clt": ("constant", "alternating", "list"),
        "self_norming": ("constant", "alternating", "list"),
        "quenched": ("iid_uniform", "finite_markov"),
        "qds_covariance": ("qds",),
        "qds_clt": ("qds",),
    }[kind]
    if st not in expected:
        err("schedule", "type", f"{kind} needs a schedule of type {' or '.join(expected)}")
        return

    def admissible(key, vals):
        for i, v in enumerate(vals):
            if not 0.0 <= v <= beta:
                err("schedule", key, f"inadmissible at index {i}: {v:g} not in [0, beta_star={beta:g}]")
                return

    if st == "constant":
        if s["value"] is None:
            err("schedule", None, "missing required field 'value'")
        else:
            admissible("value", [s["value"]])
    elif st in ("alternating", "list"):
        vals = s["values"]
        if not vals:
            err("schedule", None, "missing required field 'values'")
        else:
            if st == "alternating" and len(vals) != 2:
                err("schedule", "values", "alternating needs exactly two values")
            admissible("values", vals)
            if st == "list" and len(vals) < max(e["N"]) - 1:
                err("schedule", "values", f"list has {len(vals)} values, {max(e['N']) - 1} needed")
    elif st == "iid_uniform":
        high = beta if s["high"] is None else s["high"]
        if not 0.0 <= s["low"] <= high <= beta:
            err("schedule", "high", f"need 0 <= low <= high <= beta_star={beta:g}")
    elif st == "finite_markov":
        if not s["states"] or not s["transition"]:
            err("schedule", None, "finite_markov needs 'states' and 'transition'")
        else:
            admissible("states", s["states"])
            P = s["transition"]
            n = len(s["states"])
            if len(P) != n or any(len(r) != n for r in P):
                err("schedule", "transition", f"transition must be {n}x{n}")
            elif any(v < 0 for r in P for v in r) or any(abs(sum(r) - 1.0) > 1e-12 for r in P):
                err("schedule", "transition", "rows must be probability vectors")
    elif st == "qds":
        lo = s["tau_a0"]
        hi = s["tau_a0"] + s["tau_slope"]
        if min(lo, hi) < 0 or max(lo, hi) > beta:
            err("schedule", "tau_slope", f"tau leaves [0, beta_star={beta:g}] on [0, 1]")
        if not 0.0 < s["eta"] <= 1.0:
            err("schedule", "eta", "eta must lie in (0, 1]")
        if s["c_pert"] < 0:
            err("schedule", "c_pert", "c_pert must be non-negative")


def load(path: str | Path, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read, apply ``overrides`` (``{"seed": .., "threads": .., "dir": ..}``) and validate."""
    text = Path(path).read_text()
    cfg, diags = parse(text, str(path))
    if diags:
        raise ConfigError(diags)
    apply_overrides(cfg, overrides or {})
    return cfg


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, Any]) -> None:
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "seed":
            cfg.values["experiment"]["seed"] = int(value)
        elif key == "threads":
            cfg.values["experiment"]["threads"] = int(value)
        elif key == "dir":
            cfg.values["output"]["dir"] = str(value)
        else:
            raise KeyError(key)
        cfg.overrides[key] = value


def validate(path_or_text: str | Path) -> list[str]:
    """Diagnostics for a config file (or its text); empty when valid."""
    p = Path(path_or_text)
    try:
        is_file = p.is_file()
    except OSError:
        is_file = False
    text = p.read_text() if is_file else str(path_or_text)
    _, diags = parse(text, str(p) if is_file else None)
    return diags
