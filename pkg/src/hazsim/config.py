"""Line-based ``key = value`` run configuration with strict validation.

Keys live either at top level (``duration = 300``, ``speeding.ratio = 1.5``)
or under a ``[section]`` header. Speeds are written in km/h and times in
seconds. Unknown keys, malformed lines and out-of-range values raise
:class:`ConfigParseError` naming the key and the line.
"""

from __future__ import annotations

import configparser
import dataclasses
import re

from .behaviors import PROFILE_TYPES
from .core import HAZARD_KINDS, ConfigError
from .experiment import DEFAULT_VALIDATION_SEEDS, ExperimentConfig, NetworkParams, default_profiles

_TOP = "__top__"

# key -> (ExperimentConfig field, parser)
_RUN_KEYS = {
    "mode": ("mode", str),
    "behavior": ("behavior", str),
    "densities": ("densities", "ints"),
    "density": ("densities", "ints"),
    "penetrations": ("penetrations", "floats"),
    "penetration": ("penetrations", "floats"),
    "seeds": ("seeds", "ints"),
    "seed": ("seeds", "ints"),
    "n_vehicles": ("n_vehicles", int),
    "duration": ("duration", float),
    "record_hz": ("record_hz", float),
    "dt": ("dt", float),
    "sensing_range": ("sensing_range", float),
}
_NETWORK_KEYS = {
    "rows": int,
    "cols": int,
    "block_len": float,
    "speed_limit": float,  # km/h
    "cycle": float,
    "green": float,
    "all_red": float,
}
_NETWORK_FIELD = {"speed_limit": "speed_limit_kmh"}


class ConfigParseError(ConfigError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


def _convert(raw: str, kind, key: str, line: int):
    raw = raw.strip()
    try:
        if kind == "ints":
            return tuple(int(x) for x in _split(raw))
        if kind == "floats":
            return tuple(float(x) for x in _split(raw))
        if kind is str:
            if not raw:
                raise ValueError("empty value")
            return raw
        return kind(raw)
    except ValueError as exc:
        raise ConfigParseError(f"cannot parse {raw!r}: {exc}", key, line) from None


def _split(raw: str) -> list[str]:
    parts = [p for p in re.split(r"[,\s]+", raw.strip("[] ")) if p]
    if not parts:
        raise ValueError("empty list")
    return parts


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Map (section, key) to the 1-based line where it is assigned."""
    out = {}
    section = _TOP
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            continue
        key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
        out.setdefault((section, key), i)
    return out


def _read(text: str) -> list[tuple[str, str, str, int]]:
    """Parse the document into ``(section, key, value, line)`` entries."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    try:
        cp.read_string(f"[{_TOP}]\n" + text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigParseError("assigned twice", exc.option, exc.lineno - 1) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigParseError("section repeated", exc.section, exc.lineno - 1) from None
    except configparser.ParsingError as exc:
        lineno, raw = exc.errors[0]
        raise ConfigParseError(f"malformed line {raw.strip().strip(chr(39))!r}", None, lineno - 1) from None
    except configparser.Error as exc:
        raise ConfigParseError(f"malformed document: {exc}") from None
    lines = _key_lines(text)
    out = []
    for section in cp.sections():
        for key, value in cp.items(section):
            line = lines.get((section, key))
            if section == _TOP and "." in key:
                sec, _, sub = key.partition(".")
                out.append((sec, sub, value, line))
            else:
                out.append(("run" if section == _TOP else section, key, value, line))
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a configuration document.

    Omitted keys keep their defaults. Seeds are always resolved, so the
    result echoes and re-parses to an equal config.
    """
    run: dict = {}
    net: dict = {}
    prof: dict[str, dict] = {}
    seen: dict[str, tuple[str, int]] = {}
    where: dict[str, tuple[str, int]] = {}

    for section, key, value, line in _read(text):
        full = key if section == "run" else f"{section}.{key}"
        if section == "run":
            if key not in _RUN_KEYS:
                raise ConfigParseError("unknown key", full, line)
            fname, kind = _RUN_KEYS[key]
            if fname in seen:
                raise ConfigParseError(f"conflicts with '{seen[fname][0]}' on line {seen[fname][1]}", full, line)
            seen[fname] = (full, line)
            run[fname] = _convert(value, kind, full, line)
            where[fname] = (full, line)
        elif section == "network":
            if key not in _NETWORK_KEYS:
                raise ConfigParseError("unknown key", full, line)
            fname = _NETWORK_FIELD.get(key, key)
            net[fname] = _convert(value, _NETWORK_KEYS[key], full, line)
            where[f"network.{fname}"] = (full, line)
        elif section in PROFILE_TYPES:
            fields = {f.name: f.type for f in dataclasses.fields(PROFILE_TYPES[section])}
            if key not in fields:
                raise ConfigParseError("unknown key", full, line)
            prof.setdefault(section, {})[key] = _convert(value, float, full, line)
            where[f"{section}.{key}"] = (full, line)
        else:
            raise ConfigParseError(f"unknown section '{section}'", full, line)

    def fail(field_name, msg):
        key, line = where.get(field_name, (field_name, None))
        raise ConfigParseError(msg, key, line)

    if any(not 0 <= p <= 1 for p in run.get("penetrations", ())):
        fail("penetrations", "penetration must lie in [0, 1]")
    if any(d <= 0 for d in run.get("densities", ())):
        fail("densities", "densities must be positive")
    for name in ("n_vehicles", "duration", "record_hz", "dt", "sensing_range"):
        if name in run and not run[name] > 0:
            fail(name, "must be positive")
    if any(s < 0 for s in run.get("seeds", ())):
        fail("seeds", "seeds must be non-negative")
    for name, val in net.items():
        if not val > 0 and name != "all_red":
            fail(f"network.{name}", "must be positive")

    profiles = default_profiles()
    for kind, kw in prof.items():
        try:
            profiles[kind] = PROFILE_TYPES[kind](**kw)
        except ConfigError as exc:
            key, line = where[f"{kind}.{next(iter(kw))}"]
            raise ConfigParseError(str(exc), kind if len(kw) > 1 else key, line) from None
    try:
        network = NetworkParams(**net)
        if network.green + 2 * network.all_red >= network.cycle:
            raise ConfigError("green plus two all-red windows must be shorter than the cycle")
        cfg = ExperimentConfig(network=network, profiles=profiles, **run)
    except ConfigError as exc:
        raise ConfigParseError(str(exc)) from None
    if cfg.seeds is None:
        default = DEFAULT_VALIDATION_SEEDS.get(cfg.behavior, (10,)) if cfg.mode == "validate" else (10,)
        cfg = dataclasses.replace(cfg, seeds=default)
    return cfg


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def echo_config(cfg: ExperimentConfig) -> str:
    """Render every parameter, defaults included, in the configuration format."""
    lines = ["[run]"]
    for key in ("mode", "behavior", "densities", "penetrations", "seeds", "n_vehicles",
                "duration", "record_hz", "dt", "sensing_range"):
        val = getattr(cfg, key)
        if key == "seeds" and val is None:
            val = cfg.run_seeds
        if val is None:
            continue
        lines.append(f"{key} = {_fmt(val)}")
    lines += ["", "[network]"]
    for key in _NETWORK_KEYS:
        lines.append(f"{key} = {_fmt(getattr(cfg.network, _NETWORK_FIELD.get(key, key)))}")
    for kind in HAZARD_KINDS:
        prof = cfg.profile(kind)
        lines += ["", f"[{kind}]"]
        for f in dataclasses.fields(prof):
            lines.append(f"{f.name} = {_fmt(float(getattr(prof, f.name)))}")
    return "\n".join(lines) + "\n"
