"""Run configuration: a flat ``key = value`` text file with dotted sections.

Example::

    # example density, coarse grid
    N = 2
    L = 8
    density.kind = example
    tol.flat = 1e-6
    dynamics.times = 0, 0.25, 0.5

Blank lines and ``#`` comments are ignored.  Unknown keys and malformed
values raise :class:`ConfigError`.  Every default is materialized by
:meth:`RunConfig.materialize`, which is what output headers and the config
hash are computed from.  The output directory (``out``) is excluded, so runs
that differ only in where they write produce identical files.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import T_MODEL
from .density import DEFAULT_RADIUS, DELTA_MIN, IonDensity, example_density
from .errors import ConfigError
from .spectral import TOL_PSD_REL
from .sweep import FLAT_TOL, GRAD_TOL, HESS_TOL


@dataclass
class DensitySpec:
    """``kind``: example | separable | gaussian | tabulated."""

    kind: str = "example"
    profile: str = "sinc_gauss"
    beta: float = 1.0
    width: float = 1.0
    c: float = 1.0
    e: float = 1.0
    Z: float | None = None
    M_ion: float = 1.0
    decay_rate: float = 1.0
    table: str = ""

    def build(self, base_dir=".") -> IonDensity:
        k = self.kind
        if k == "example":
            return example_density(e=self.e, M_ion=self.M_ion)
        if k == "separable":
            kw = {"beta": self.beta} if self.profile == "sinc_gauss" else {}
            return IonDensity.separable(self.profile, e=self.e, Z=self.Z, M_ion=self.M_ion,
                                        decay_rate=self.decay_rate, **kw)
        if k == "gaussian":
            return IonDensity.gaussian(self.width, self.c, e=self.e, Z=self.Z,
                                       M_ion=self.M_ion, decay_rate=self.decay_rate)
        if k == "tabulated":
            axis, samples = load_table(Path(base_dir) / self.table)
            return IonDensity.tabulated(axis, samples, e=self.e, Z=self.Z, M_ion=self.M_ion,
                                        decay_rate=self.decay_rate)
        raise ConfigError(f"unknown density.kind {k!r}")


def load_table(path):
    """Read ``xi1 xi2 xi3 re im`` rows on a cubic grid into ``(axis, samples)``."""
    try:
        data = np.loadtxt(path, comments="#", delimiter=None, ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read density table: {exc}") from None
    if data.shape[1] != 5:
        raise ConfigError("density table needs 5 columns: xi1 xi2 xi3 re im")
    axis = np.unique(data[:, 0])
    n = len(axis)
    if len(data) != n ** 3:
        raise ConfigError("density table is not a full cubic grid")
    idx = np.searchsorted(axis, data[:, :3])
    samples = np.zeros((n, n, n), dtype=complex)
    samples[idx[:, 0], idx[:, 1], idx[:, 2]] = data[:, 3] + 1j * data[:, 4]
    return axis, samples


@dataclass
class Tolerances:
    flat: float = FLAT_TOL
    grad: float = GRAD_TOL
    hess: float = HESS_TOL
    psd: float = TOL_PSD_REL
    delta_min: float = DELTA_MIN
    jellium: float = 1e-12


@dataclass
class DynamicsSpec:
    """Initial data (``initial``: band | flat) and decay-curve settings.

    ``times`` is an explicit list, or ``auto:n`` for ``n`` equally spaced
    times from 0 to the horizon.  Flat bands are detected on a sweep of
    ``flat_L`` (0 disables detection).
    """

    initial: str = "band"
    band: int = 6
    center: tuple = (1.6, 1.6, 1.6)
    width: float = 2.0
    amplitude: float = 1.0
    times: str = "auto:6"
    alpha: float = -2.0
    R: int = 4
    nu: float = math.inf
    c_horizon: float = 0.25
    flat_L: int = 4


@dataclass
class ResolventSpec:
    """Probe (``probe``: band | random | zero), omega samples and epsilons.

    An empty ``omega_window`` means the probe's occupied band range.
    ``epsilons`` is an explicit descending list or ``geom:start,factor,count``.
    """

    probe: str = "band"
    band: int = 6
    center: tuple = (1.6, 1.6, 1.6)
    width: float = 1.6
    omega_window: tuple = ()
    omega_samples: int = 5
    epsilons: str = "geom:0.8,1.25,16"
    alpha: float = -4.0
    R: int = 4


@dataclass
class RunConfig:
    N: int = 3
    L: int = 8
    radius: int = DEFAULT_RADIUS
    jellium: bool = True
    jellium_radius: int = 5
    coupling: float | None = None
    growth_k: tuple = (20, 150)
    growth_theta: tuple = ()
    seed: int = 0
    out: str = field(default="out", metadata={"internal": True})
    density: DensitySpec = field(default_factory=DensitySpec)
    tol: Tolerances = field(default_factory=Tolerances)
    dynamics: DynamicsSpec = field(default_factory=DynamicsSpec)
    resolvent: ResolventSpec = field(default_factory=ResolventSpec)
    base_dir: str = field(default=".", metadata={"internal": True})

    def validate(self, command=None):
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if self.N > 6:
            raise ConfigError("N must be <= 6")
        if self.L < 2:
            raise ConfigError("L must be >= 2")
        if self.radius < max(1, self.N):
            raise ConfigError("radius must be >= max(1, N)")
        if command == "evolve" and self.dynamics.alpha >= 0:
            raise ConfigError("dynamics.alpha must be < 0 for decay runs")
        if 0 < self.dynamics.flat_L < 4:
            # every point of the L=2 grid is symmetry-equivalent: all bands look flat
            raise ConfigError("dynamics.flat_L must be 0 (off) or >= 4")
        if self.dynamics.initial not in ("band", "flat"):
            raise ConfigError("dynamics.initial must be 'band' or 'flat'")
        if self.resolvent.probe not in ("band", "random", "zero"):
            raise ConfigError("resolvent.probe must be 'band', 'random' or 'zero'")
        for name in ("center",):
            for spec in (self.dynamics, self.resolvent):
                if len(getattr(spec, name)) != 3:
                    raise ConfigError(f"{name} needs three components")
        self.time_list(None)
        self.epsilon_list()
        return self

    # -- derived values -----------------------------------------------------

    def time_list(self, horizon):
        """Explicit times, or ``n`` times up to ``horizon`` for ``auto:n``."""
        spec = self.dynamics.times.strip()
        if spec.startswith("auto:"):
            try:
                n = int(spec[5:])
            except ValueError:
                raise ConfigError(f"bad dynamics.times {spec!r}") from None
            if n < 1:
                raise ConfigError("dynamics.times auto:n needs n >= 1")
            if horizon is None:
                return []
            if not math.isfinite(horizon):
                raise ConfigError("auto times need a finite horizon")
            return [float(x) for x in np.linspace(0.0, horizon, n)]
        return list(_floats(spec, "dynamics.times"))

    def epsilon_list(self):
        spec = self.resolvent.epsilons.strip()
        if spec.startswith("geom:"):
            parts = _floats(spec[5:], "resolvent.epsilons")
            if len(parts) != 3 or parts[0] <= 0 or parts[1] <= 1 or parts[2] < 1:
                raise ConfigError("resolvent.epsilons geom:start,factor,count needs "
                                  "start > 0, factor > 1, count >= 1")
            start, fac, count = parts
            return [start * fac ** -i for i in range(int(count))]
        eps = _floats(spec, "resolvent.epsilons")
        if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("resolvent.epsilons must be positive and descending")
        return eps

    # -- serialization ------------------------------------------------------

    def materialize(self) -> dict:
        """Every key with its (possibly default) value, as canonical strings."""
        out = {}
        for f in dataclasses.fields(self):
            if f.metadata.get("internal"):
                continue
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                for g in dataclasses.fields(v):
                    out[f"{f.name}.{g.name}"] = format_value(getattr(v, g.name))
            else:
                out[f.name] = format_value(v)
        return dict(sorted(out.items()))

    def digest(self) -> str:
        text = "".join(f"{k} = {v}\n" for k, v in self.materialize().items())
        return hashlib.sha256(text.encode()).hexdigest()

    def metadata(self) -> dict:
        """Header block for every output file."""
        meta = {"config_sha256": self.digest(), "N": str(self.N), "L": str(self.L),
                "T_model": T_MODEL}
        for k, v in self.materialize().items():
            if k.startswith("tol."):
                meta[k] = v
        meta.update({f"config.{k}": v for k, v in self.materialize().items()})
        return meta


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format_float(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(format_value(x) for x in v)
    return str(v)


def format_float(x: float) -> str:
    """17 significant digits; ``inf`` and ``nan`` spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def _floats(text, key):
    text = text.strip()
    if not text:
        return []
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None


def _coerce(raw: str, tp, key):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if raw.lower() in ("none", ""):
            return None
        tp = next(a for a in args if a is not type(None))
    try:
        if tp is bool:
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is tuple:
            return tuple(_floats(raw, key))
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") \
            from None


def _field_types(cls):
    return typing.get_type_hints(cls)


def parse_config(text: str, base_dir=".") -> RunConfig:
    cfg = RunConfig(base_dir=str(base_dir))
    top = _field_types(RunConfig)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            sub = getattr(cfg, section, None)
            if section == "base_dir" or not dataclasses.is_dataclass(sub):
                raise ConfigError(f"line {lineno}: unknown section {section!r}")
            types = _field_types(type(sub))
            if name not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            setattr(sub, name, _coerce(raw, types[name], key))
        else:
            if key not in top or key == "base_dir" or dataclasses.is_dataclass(
                    getattr(cfg, key)):
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            setattr(cfg, key, _coerce(raw, top[key], key))
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, base_dir=path.parent)
