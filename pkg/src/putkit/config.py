"""Problem configuration files.

A config is a JSON object::

    {
      "source":    {"binary_symmetric": {"q": 0.8}}   or a |U| x |V| joint table,
      "channel":   {"bsc": {"crossover": 0.2}}        or a row-stochastic matrix,
      "tau":       2.0,
      "leak":      0.3  or [0.1, 0.2]  or {"from": 1e-3, "to": 1, "points": 25, "scale": "log"},
      "mechanism": "optimize"  or {"bsc": {"p": 0.1}}  or a row-stochastic matrix,
      "z_size":    2            (optional, defaults to |U|)
    }

Shorthands are expanded before validation, so error messages point at the
expanded tables. :func:`canonical` gives the fully expanded form; parsing
it again yields the same problem, and its hash identifies the run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .prob import ConditionalDistribution, JointDistribution, PutInstance, binary_symmetric_source

_KEYS = {"source", "channel", "tau", "leak", "mechanism", "z_size"}


@dataclass(frozen=True, eq=False)
class ProblemConfig:
    source: JointDistribution
    channel: ConditionalDistribution
    tau: float
    leak: tuple
    mechanism: ConditionalDistribution | None = None
    z_size: int | None = None

    def instance(self, leak=None) -> PutInstance:
        """The problem at one leakage budget (default: the first grid point)."""
        leak = self.leak[0] if leak is None else leak
        return PutInstance(self.source, self.channel, self.tau, leak, self.z_size)

    def __eq__(self, other):
        if not isinstance(other, ProblemConfig):
            return NotImplemented
        return canonical(self) == canonical(other)

    __hash__ = None


def _number(x, path, lo=None):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"expected a number, got {x!r}", path)
    x = float(x)
    if not np.isfinite(x):
        raise ConfigError(f"expected a finite number, got {x!r}", path)
    if lo is not None and x < lo:
        raise ConfigError(f"must be >= {lo}, got {x!r}", path)
    return x


def _matrix(x, path):
    if not isinstance(x, list) or not x or not all(isinstance(r, list) for r in x):
        raise ConfigError("expected a nested list of numbers", path)
    width = len(x[0])
    rows = []
    for i, r in enumerate(x):
        if len(r) != width:
            raise ConfigError(f"row has {len(r)} entries, expected {width}", f"{path}[{i}]")
        rows.append([_number(v, f"{path}[{i}][{j}]") for j, v in enumerate(r)])
    return np.array(rows)


def _shorthand(x, path, name, fields, optional=()):
    """Body of ``{name: {field: ...}}``, or ``None`` if ``x`` is not a dict."""
    if not isinstance(x, dict):
        return None
    if set(x) != {name}:
        raise ConfigError(f"expected {{\"{name}\": {{...}}}}, got keys {sorted(x)}", path)
    body = x[name]
    if not isinstance(body, dict) or set(body) - set(fields) - set(optional) or set(fields) - set(body):
        raise ConfigError(f"expected fields {sorted(fields)}", f"{path}.{name}")
    return body


def _bsc_matrix(e):
    return np.array([[1.0 - e, e], [e, 1.0 - e]])


def _validated(build, table, path):
    try:
        return build(table)
    except ValueError as exc:  # InvalidDistribution and AlphabetMismatch are ValueErrors
        raise ConfigError(str(exc), path) from None


def _source(x):
    path = "source"
    body = _shorthand(x, path, "binary_symmetric", {"q"}, {"p_u"})
    if body is not None:
        q = _number(body["q"], f"{path}.binary_symmetric.q")
        p_u = body.get("p_u", [0.5, 0.5])
        if not isinstance(p_u, list):
            raise ConfigError("expected a list of two probabilities", f"{path}.binary_symmetric.p_u")
        p_u = [_number(v, f"{path}.binary_symmetric.p_u[{i}]") for i, v in enumerate(p_u)]
        try:
            return binary_symmetric_source(q, p_u)
        except ValueError as exc:
            raise ConfigError(str(exc), f"{path}.binary_symmetric") from None
    return _validated(JointDistribution, _matrix(x, path), path)


def _channel(x, path, name, field):
    body = _shorthand(x, path, name, {field})
    if body is not None:
        e = _number(body[field], f"{path}.{name}.{field}")
        return _validated(ConditionalDistribution, _bsc_matrix(e), path)
    return _validated(ConditionalDistribution, _matrix(x, path), path)


def _leak(x):
    path = "leak"
    if isinstance(x, list):
        if not x:
            raise ConfigError("leak grid is empty", path)
        grid = [_number(v, f"{path}[{i}]", lo=0.0) for i, v in enumerate(x)]
    elif isinstance(x, dict):
        extra = set(x) - {"from", "to", "points", "scale"}
        if extra or not {"from", "to", "points"} <= set(x):
            raise ConfigError("expected fields from, to, points and optional scale", path)
        lo = _number(x["from"], f"{path}.from", lo=0.0)
        hi = _number(x["to"], f"{path}.to", lo=lo)
        n = x["points"]
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError(f"expected a positive integer, got {n!r}", f"{path}.points")
        scale = x.get("scale", "linear")
        if scale == "linear":
            grid = np.linspace(lo, hi, n)
        elif scale == "log":
            if lo <= 0:
                raise ConfigError("log scale needs from > 0", f"{path}.from")
            grid = np.logspace(np.log10(lo), np.log10(hi), n)
        else:
            raise ConfigError(f"scale must be 'linear' or 'log', got {scale!r}", f"{path}.scale")
        grid = [float(v) for v in grid]
    else:
        grid = [_number(x, path, lo=0.0)]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ConfigError("leak grid must be ascending", path)
    return tuple(grid)


def parse_config(raw) -> ProblemConfig:
    """Validate a decoded JSON object and expand its shorthands.

    Raises
    ------
    ConfigError
        With the path of the first offending entry.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(raw) - _KEYS
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)}", sorted(extra)[0])
    for key in ("source", "channel", "tau", "leak"):
        if key not in raw:
            raise ConfigError("missing required entry", key)
    source = _source(raw["source"])
    if source.ndim != 2:
        raise ConfigError("source must be a |U| x |V| table", "source")
    channel = _channel(raw["channel"], "channel", "bsc", "crossover")
    tau = _number(raw["tau"], "tau", lo=0.0)
    leak = _leak(raw["leak"])

    z_size = raw.get("z_size")
    if z_size is not None and (isinstance(z_size, bool) or not isinstance(z_size, int) or z_size < 1):
        raise ConfigError(f"expected a positive integer, got {z_size!r}", "z_size")

    mech = raw.get("mechanism", "optimize")
    if mech == "optimize":
        mechanism = None
    elif isinstance(mech, str):
        raise ConfigError(f"expected 'optimize', a matrix or a bsc shorthand, got {mech!r}", "mechanism")
    else:
        mechanism = _channel(mech, "mechanism", "bsc", "p")
        if mechanism.n_in != source.shape[0]:
            raise ConfigError(f"mechanism has {mechanism.n_in} rows but |U| = {source.shape[0]}",
                              "mechanism")
        if z_size is not None and z_size != mechanism.n_out:
            raise ConfigError(f"z_size {z_size} disagrees with the mechanism's {mechanism.n_out} outputs",
                              "z_size")
    return ProblemConfig(source, channel, tau, leak, mechanism, z_size)


def load_config(path) -> ProblemConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}",
                          str(path)) from None
    return parse_config(raw)


def canonical(cfg: ProblemConfig) -> dict:
    """Fully expanded JSON-ready form; ``parse_config(canonical(c))`` reproduces ``c``."""
    out = {
        "source": cfg.source.table.tolist(),
        "channel": cfg.channel.matrix.tolist(),
        "tau": cfg.tau,
        "leak": list(cfg.leak),
        "mechanism": "optimize" if cfg.mechanism is None else cfg.mechanism.matrix.tolist(),
    }
    if cfg.z_size is not None:
        out["z_size"] = cfg.z_size
    return out


def dumps_canonical(cfg: ProblemConfig) -> str:
    return json.dumps(canonical(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ProblemConfig) -> str:
    return hashlib.sha256(dumps_canonical(cfg).encode("utf-8")).hexdigest()
