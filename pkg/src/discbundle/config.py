"""Run configuration: a flat TOML document validated into a frozen RunConfig."""

from __future__ import annotations

import json
import re
import sys
from dataclasses import asdict, dataclass, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CASES = ("I", "II", "III", "IV", "V")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


class ParseError(ConfigError):
    pass


class UnknownKey(ConfigError):
    pass


class TypeMismatch(ConfigError):
    pass


class ConstraintViolation(ConfigError):
    pass


@dataclass(frozen=True)
class RunConfig:
    case: str = "I"
    # holonomy parameters; only those of the selected case are used
    twist: float = 0.5
    length: float = 1.0
    assignment: tuple[str, ...] = ("H", "E", "E", "H")
    lengths: tuple[float, ...] = (0.3, 0.5, 0.7, 1.1)
    kind: str = "hyperbolic"
    angles: tuple[float, ...] = (0.4, 1.1, -0.7, 2.0)
    genus: int = 2
    resolution: int = 48
    # solver
    tol: float = 1e-8
    max_iters: int = 60
    continuation_steps: int = 4
    theta_small: float = 1e-3
    # certificate
    zeta_radii: int = 12
    zeta_angles: int = 16
    eps_v: float = 1e-2
    c_start: float = 1.0
    c_shrink: float = 0.5
    c_budget: int = 60
    hessian_points: int = 100
    output: str = "out"
    seed: int = 0

    def holonomy_params(self) -> dict:
        return {
            "I": {"twist": self.twist},
            "II": {},
            "III": {"length": self.length, "assignment": self.assignment},
            "IV": {"lengths": self.lengths, "kind": self.kind},
            "V": {"angles": self.angles},
        }[self.case]

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*[\"']?{re.escape(key)}[\"']?\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return i
    return None


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _coerce(key: str, value, line):
    t = _TYPES[key]
    if t == "float":
        if not _is_number(value):
            raise TypeMismatch(f"expected a number, got {type(value).__name__}", key, line)
        return float(value)
    if t == "int":
        if not isinstance(value, int) or isinstance(value, bool):
            raise TypeMismatch(f"expected an integer, got {type(value).__name__}", key, line)
        return value
    if t == "str":
        if not isinstance(value, str):
            raise TypeMismatch(f"expected a string, got {type(value).__name__}", key, line)
        return value
    if t == "tuple[float, ...]":
        if not isinstance(value, list) or not all(_is_number(v) for v in value):
            raise TypeMismatch("expected a list of numbers", key, line)
        return tuple(float(v) for v in value)
    if t == "tuple[str, ...]":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise TypeMismatch("expected a list of strings", key, line)
        return tuple(value)
    raise AssertionError(f"unhandled field type {t}")


def validate(cfg: RunConfig, text: str = "") -> RunConfig:
    def fail(key, msg):
        raise ConstraintViolation(msg, key, _line_of(text, key))

    if cfg.case not in CASES:
        fail("case", f"case must be one of {', '.join(CASES)}")
    if cfg.case == "I" and cfg.twist == 0:
        fail("twist", "case I requires nonzero twist")
    if cfg.case == "III":
        if not cfg.length > 0:
            fail("length", "case III requires a positive length")
        if len(cfg.assignment) != 4 or any(not w or set(w) - set("HhEe") for w in cfg.assignment):
            fail("assignment", "case III assignment needs four words over H, h, E")
    if cfg.case == "IV":
        if len(cfg.lengths) != 4:
            fail("lengths", "case IV needs four lengths")
        if cfg.kind not in ("hyperbolic", "parabolic"):
            fail("kind", "kind must be 'hyperbolic' or 'parabolic'")
        if cfg.kind == "hyperbolic" and any(x == 0 for x in cfg.lengths):
            fail("lengths", "hyperbolic lengths must be nonzero")
    if cfg.case == "V" and len(cfg.angles) != 4:
        fail("angles", "case V needs four angles")
    if cfg.genus != 2:
        fail("genus", "only genus 2 is supported")
    if cfg.resolution < 2:
        fail("resolution", "resolution must be at least 2")
    for key in ("tol", "theta_small", "eps_v", "c_start"):
        if not getattr(cfg, key) > 0:
            fail(key, "must be positive")
    if not 0 < cfg.c_shrink < 1:
        fail("c_shrink", "must lie in (0, 1)")
    for key, lo in (("max_iters", 1), ("continuation_steps", 1), ("zeta_radii", 2),
                    ("zeta_angles", 1), ("c_budget", 1), ("hessian_points", 1), ("seed", 0)):
        if getattr(cfg, key) < lo:
            fail(key, f"must be at least {lo}")
    if not cfg.output:
        fail("output", "output directory must be non-empty")
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run configuration; missing keys take defaults."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(str(exc)) from None
    values = {}
    for key, value in doc.items():
        line = _line_of(text, key)
        if key not in _TYPES:
            raise UnknownKey("unknown key", key, line)
        values[key] = _coerce(key, value, line)
    return validate(RunConfig(**values), text)


def _render_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_render_value(x) for x in v) + "]"
    return str(v)


def render(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_render_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
