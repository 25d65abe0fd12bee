"""Experiment configuration: INI-style text files plus command-line overrides.

File format (every key optional; unknown sections or keys are errors)::

    [run]
    out = results/fedrep.csv
    replicates = 3
    seed_stride = 1
    algo = fedrep
    check_theorem = false

    [problem]
    n = 100
    d = 10
    k = 2
    seed = 0

    [fedrep]
    m = 5
    r = 0.1
    eta = auto
    rounds = 500
    noise_var = 0.001
    ortho = off
    data_mode = fresh
    grad_mode = empirical
    init = random
    init_steps = 10

    [newclient]
    m_new = 2
    test_size = 10000

``eta = auto`` selects the default step size of the chosen engine.
"""
import configparser
import io
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError
from .fedrep import DATA_MODES, GRAD_MODES, INIT_MODES, FedConfig

__all__ = ["ExperimentConfig", "parse_config", "ALGOS", "SECTIONS"]

ALGOS = ("fedrep", "gdgd", "10gd", "local", "global")

SECTIONS = {
    "run": ("out", "replicates", "seed_stride", "algo", "check_theorem"),
    "problem": ("n", "d", "k", "seed"),
    "fedrep": (
        "m", "r", "eta", "rounds", "noise_var", "ortho",
        "data_mode", "grad_mode", "init", "init_steps",
    ),
    "newclient": ("m_new", "test_size"),
}

_CHOICES = {
    "data_mode": DATA_MODES,
    "grad_mode": GRAD_MODES,
    "init": INIT_MODES,
}


@dataclass(frozen=True)
class ExperimentConfig:
    out: str = "fedrep_lab_out.csv"
    replicates: int = 1
    seed_stride: int = 1
    algo: str = "fedrep"
    check_theorem: bool = False
    n: int = 100
    d: int = 10
    k: int = 2
    seed: int = 0
    m: int = 5
    r: float = 0.1
    eta: float | None = None
    rounds: int = 500
    noise_var: float = 1e-3
    ortho: bool = False
    data_mode: str = "fresh"
    grad_mode: str = "empirical"
    init: str = "random"
    init_steps: int = 10
    m_new: int = 2
    test_size: int = 10_000

    @property
    def algos(self):
        return tuple(a.strip() for a in self.algo.split(","))

    def fed_config(self, seed=None):
        return FedConfig(
            n=self.n, d=self.d, k=self.k, m=self.m, r=self.r, eta=self.eta,
            rounds=self.rounds, seed=self.seed if seed is None else seed,
            noise_var=self.noise_var, ortho=self.ortho, data_mode=self.data_mode,
            grad_mode=self.grad_mode, init=self.init, init_steps=self.init_steps,
        )

    def replicate_seeds(self):
        return [self.seed + i * self.seed_stride for i in range(self.replicates)]

    def to_dict(self):
        return asdict(self)

    def to_text(self):
        """Serialize to the file format; :func:`parse_config` reads it back exactly."""
        cp = configparser.ConfigParser()
        for section, keys in SECTIONS.items():
            cp[section] = {key: _format_value(getattr(self, key)) for key in keys}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_SECTION_OF = {key: sec for sec, keys in SECTIONS.items() for key in keys}


def _format_value(value):
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_bool(key, raw):
    text = str(raw).strip().lower()
    if text in ("on", "true", "yes", "1"):
        return True
    if text in ("off", "false", "no", "0"):
        return False
    raise ConfigError(key, f"expected on/off, got {raw!r}")


def _coerce(key, raw):
    """Convert a raw string (or already-typed value) for `key`."""
    kind = _FIELD_TYPES[key]
    path = f"{_SECTION_OF.get(key, 'run')}.{key}"
    if isinstance(raw, str):
        raw = raw.strip()
    if kind in ("bool", bool):
        return _parse_bool(path, raw)
    if kind in ("int", int):
        try:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError
            return int(raw)
        except (TypeError, ValueError):
            raise ConfigError(path, f"expected an integer, got {raw!r}") from None
    if kind in ("float", float) or key == "eta":
        if key == "eta" and (raw is None or (isinstance(raw, str) and raw.lower() in ("auto", "none", ""))):
            return None
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(path, f"expected a number, got {raw!r}") from None
    value = str(raw)
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(path, f"must be one of {', '.join(_CHOICES[key])}, got {value!r}")
    if key == "algo":
        for a in value.split(","):
            if a.strip() not in ALGOS:
                raise ConfigError(path, f"unknown algorithm {a.strip()!r}; choose from {', '.join(ALGOS)}")
    return value


def _validate(cfg):
    checks = [
        ("problem.k", 1 <= cfg.k < min(cfg.n, cfg.d), "need 1 <= k < min(n, d)"),
        ("fedrep.r", 0 < cfg.r <= 1, "participation rate must lie in (0, 1]"),
        ("fedrep.m", cfg.m >= 1, "must be >= 1"),
        ("fedrep.rounds", cfg.rounds >= 0, "must be >= 0"),
        ("fedrep.noise_var", cfg.noise_var >= 0, "must be >= 0"),
        ("fedrep.eta", cfg.eta is None or cfg.eta > 0, "must be positive"),
        ("fedrep.init_steps", cfg.init_steps >= 1, "must be >= 1"),
        ("run.replicates", cfg.replicates >= 1, "must be >= 1"),
        ("run.seed_stride", cfg.seed_stride >= 1, "must be >= 1"),
        ("problem.seed", cfg.seed >= 0, "must be >= 0"),
        ("newclient.m_new", cfg.m_new >= 1, "must be >= 1"),
        ("newclient.test_size", cfg.test_size >= 1, "must be >= 1"),
    ]
    for key, ok, reason in checks:
        if not ok:
            raise ConfigError(key, reason)
    return cfg


def parse_config(text=None, path=None, overrides=None):
    """Build an :class:`ExperimentConfig` from file text and/or overrides.

    Parameters
    ----------
    text : str, optional
        Config file contents.
    path : str or Path, optional
        Config file to read (ignored when `text` is given).
    overrides : dict, optional
        Field name to value; ``None`` values are skipped. These take
        precedence over the file.

    Raises
    ------
    ConfigError
        On syntax errors, unknown sections/keys or malformed values.
    """
    values = {}
    if text is None and path is not None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    if text:
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError("<file>", f"syntax error: {exc}") from None
        for section in cp.sections():
            if section not in SECTIONS:
                raise ConfigError(section, "unknown section")
            for key, raw in cp[section].items():
                if key not in SECTIONS[section]:
                    raise ConfigError(f"{section}.{key}", "unknown key")
                values[key] = _coerce(key, raw)
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(key, "unknown key")
        values[key] = _coerce(key, raw)
    return _validate(replace(ExperimentConfig(), **values))
