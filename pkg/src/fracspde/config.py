"""Flat ``dotted.key = value`` run configuration.

Lines starting with ``#`` are comments. Lists are comma separated.
Unknown keys are rejected; every key has a default.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .montecarlo import ICSpec, SWEEP_AXES
from .simulator import GridSpec, ModelParams

PROFILES = {
    "desk": {"grid.N": 2000, "ensemble.n_realizations": 1000},
    "full": {"grid.N": 10_000, "ensemble.n_realizations": 10_000},
}


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class EnsembleOpts:
    n_realizations: int = 1000
    master_seed: int = 0


@dataclass(frozen=True)
class SweepOpts:
    axis: str = ""
    values: tuple = ()


@dataclass(frozen=True)
class BoundsOpts:
    alpha1: float = 0.0  # 0 selects min(1, H + 0.2)
    n_paths: int = 200
    T_sup: float = 20.0
    b: float = 1.5
    n_seeds: int = 1


@dataclass(frozen=True)
class FbmTestOpts:
    n_paths: int = 2000


@dataclass(frozen=True)
class OutputOpts:
    dir: str = "out"
    formats: tuple = ("csv", "json")
    trajectory_stride: int = 0


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams = field(default_factory=ModelParams)
    grid: GridSpec = field(default_factory=GridSpec)
    ic: ICSpec = field(default_factory=ICSpec)
    ensemble: EnsembleOpts = field(default_factory=EnsembleOpts)
    sweep: SweepOpts = field(default_factory=SweepOpts)
    bounds: BoundsOpts = field(default_factory=BoundsOpts)
    fbmtest: FbmTestOpts = field(default_factory=FbmTestOpts)
    output: OutputOpts = field(default_factory=OutputOpts)


_SECTIONS = {
    "model": ModelParams, "grid": GridSpec, "ic": ICSpec, "ensemble": EnsembleOpts,
    "sweep": SweepOpts, "bounds": BoundsOpts, "fbmtest": FbmTestOpts, "output": OutputOpts,
}

_INT_KEYS = {"grid.M", "grid.N", "ensemble.n_realizations", "ensemble.master_seed",
             "bounds.n_paths", "bounds.n_seeds", "fbmtest.n_paths", "output.trajectory_stride"}
_STR_KEYS = {"model.noise_shape", "ic.kind", "sweep.axis", "output.dir"}
_LIST_KEYS = {"sweep.values": float, "output.formats": str}


def _section_defaults(name):
    cls = _SECTIONS[name]
    obj = cls()
    return obj._asdict() if hasattr(obj, "_asdict") else asdict(obj)


def known_keys():
    return sorted(f"{s}.{k}" for s in _SECTIONS for k in _section_defaults(s))


def _parse_value(key, raw):
    raw = raw.strip()
    if key in _STR_KEYS:
        return raw
    if key in _LIST_KEYS:
        conv = _LIST_KEYS[key]
        items = [x.strip() for x in raw.split(",") if x.strip()]
        try:
            return tuple(conv(x) for x in items)
        except ValueError:
            raise ConfigError(key, f"expected a comma-separated list of {conv.__name__}, got {raw!r}") from None
    if key in _INT_KEYS:
        try:
            return int(raw)
        except ValueError:
            try:
                v = float(raw)
            except ValueError:
                v = None
            if v is not None and v.is_integer():
                return int(v)
            raise ConfigError(key, f"expected an integer, got {raw!r}") from None
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {raw!r}") from None


def _build(values):
    parts = {}
    for sec, cls in _SECTIONS.items():
        kw = {k[len(sec) + 1:]: v for k, v in values.items() if k.startswith(sec + ".")}
        try:
            parts[sec] = cls(**{**_section_defaults(sec), **kw})
        except (ValueError, TypeError) as exc:
            head = str(exc).split()[0] if str(exc) else ""
            key = f"{sec}.{head}" if head in _section_defaults(sec) else sec
            raise ConfigError(key, str(exc)) from None
    cfg = RunConfig(**parts)
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.ic.kind not in ("bump_plus_eigen", "pure_eigen"):
        raise ConfigError("ic.kind", f"must be bump_plus_eigen or pure_eigen, got {cfg.ic.kind!r}")
    if cfg.ic.c < 0:
        raise ConfigError("ic.c", "must be >= 0")
    if cfg.ensemble.n_realizations < 1:
        raise ConfigError("ensemble.n_realizations", "must be >= 1")
    if not 0 <= cfg.ensemble.master_seed < 2 ** 64:
        raise ConfigError("ensemble.master_seed", "must be an unsigned 64-bit integer")
    if cfg.sweep.axis and cfg.sweep.axis not in SWEEP_AXES:
        raise ConfigError("sweep.axis", f"must be one of {SWEEP_AXES}, got {cfg.sweep.axis!r}")
    if cfg.bounds.alpha1 and not cfg.bounds.alpha1 > cfg.model.hurst:
        raise ConfigError("bounds.alpha1", "must exceed model.hurst")
    if cfg.bounds.n_paths < 2:
        raise ConfigError("bounds.n_paths", "must be >= 2")
    if not cfg.bounds.b > 1:
        raise ConfigError("bounds.b", "must be > 1")
    if cfg.bounds.n_seeds < 1:
        raise ConfigError("bounds.n_seeds", "must be >= 1")
    if cfg.fbmtest.n_paths < 2:
        raise ConfigError("fbmtest.n_paths", "must be >= 2")
    bad = set(cfg.output.formats) - {"csv", "json"}
    if bad or not cfg.output.formats:
        raise ConfigError("output.formats", "must be a nonempty subset of {csv, json}")
    if cfg.output.trajectory_stride < 0:
        raise ConfigError("output.trajectory_stride", "must be >= 0")


def parse_config(source, overrides=None, profile=None):
    """Parse a flat key-value document into a validated RunConfig.

    A ``profile`` supplies base values that the document may override;
    ``overrides`` (dotted keys) win over both.
    """
    keys = set(known_keys())
    if profile is not None and profile not in PROFILES:
        raise ConfigError("profile", f"must be one of {sorted(PROFILES)}, got {profile!r}")
    values = {}
    for lineno, line in enumerate(source.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in keys:
            raise ConfigError(key, "unknown key")
        if key in values:
            raise ConfigError(key, "duplicate key")
        values[key] = _parse_value(key, raw)
    if profile is not None:
        values = {**PROFILES[profile], **values}
    for key, v in (overrides or {}).items():
        if key not in keys:
            raise ConfigError(key, "unknown key")
        values[key] = v
    return _build(values)


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg):
    """Serialise every key (sorted) so that parse_config(format_config(c)) == c."""
    lines = []
    for sec in _SECTIONS:
        obj = getattr(cfg, sec)
        d = obj._asdict() if hasattr(obj, "_asdict") else asdict(obj)
        for k in sorted(d):
            lines.append(f"{sec}.{k} = {_fmt(d[k])}")
    return "\n".join(sorted(lines)) + "\n"
