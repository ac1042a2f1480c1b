"""INI-style run configuration.

Lengths are given in millimetres in the file and converted to meters on
load.  Example::

    [geometry]
    chamber_length_mm = 28
    chamber_depth_mm = 0.5
    waveguide_width_mm = 13
    waveguide_length_mm = 33
    plug_length_mm = 17
    slit_width_mm = 4.6

    [mesh]
    h_mm = 0.45

    [physics]
    c0 = 343.20
    rho0 = 1.2044
    nu = 1.5061e-5
    prandtl = 0.7078
    gamma = 1.4
    cp = 1004.9

    [frequencies]
    f_min_hz = 3750
    f_max_hz = 15000
    count = 35

    [optimization]
    objective = track
    max_iters = 100
    grad_tol = 1e-12
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from .helmholtz import PhysicsParams
from .mesh import GeometryParams
from .optimizer import ObjectiveSpec
from .shape_gradient import Objective


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {msg}" if where else msg)
        self.line = line


# section -> key -> (required, kind, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "geometry": {
        "chamber_length_mm": (True, "pos", None),
        "chamber_depth_mm": (True, "pos", None),
        "waveguide_width_mm": (True, "pos", None),
        "waveguide_length_mm": (True, "pos", None),
        "plug_length_mm": (True, "pos", None),
        "slit_width_mm": (True, "pos", None),
        "slit_start_mm": (False, "nonneg", 0.0),
        "design_height_mm": (False, "pos", None),
        "n_slits": (False, "int", 32),
    },
    "mesh": {"h_mm": (True, "pos", None)},
    "physics": {
        "c0": (True, "pos", None),
        "rho0": (True, "pos", None),
        "nu": (True, "pos", None),
        "prandtl": (True, "pos", None),
        "gamma": (True, "pos", None),
        "cp": (True, "pos", None),
        "a_d": (False, "float", 1.0),
        "losses": (False, "bool", True),
    },
    "frequencies": {
        "f_min_hz": (True, "pos", None),
        "f_max_hz": (True, "pos", None),
        "count": (True, "int", None),
        "eval_count": (False, "int", 69),
    },
    "optimization": {
        "objective": (True, "objective", None),
        "tikhonov_eps": (False, "nonneg", 0.0),
        "max_iters": (True, "int", None),
        "grad_tol": (True, "nonneg", None),
        "max_step_frac": (False, "pos", 0.5),
        "h0_frac": (False, "pos", 0.1),
        "solver": (False, "solver", "condensed"),
        "seed": (False, "int", 0),
    },
    "stabilization": {"eps_s": (False, "nonneg", 1e-2)},
}

OPTIONAL_SECTIONS = {"stabilization"}


@dataclass
class Config:
    geometry: GeometryParams
    h: float
    physics: PhysicsParams
    spec: ObjectiveSpec
    eval_count: int = 69
    max_iters: int = 100
    grad_tol: float = 1e-12
    eps_s: float = 1e-2
    max_step_frac: float = 0.5
    h0_frac: float = 0.1
    solver: str = "condensed"
    seed: int = 0
    n_slits: int = 32
    source: Path | None = field(default=None, repr=False)


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            lines[(section, "")] = i
            continue
        key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
        if section is not None:
            lines.setdefault((section, key), i)
    return lines


def _convert(raw: str, kind: str, key: str, line, path):
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "yes", "true", "on"):
                return True
            if low in ("0", "no", "false", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            value = int(raw)
            if value < 1:
                raise ConfigError(f"{key} must be a positive integer, got {raw!r}", line, path)
            return value
        if kind == "objective":
            return Objective(raw.strip().lower())
        if kind == "solver":
            if raw.strip() not in ("condensed", "direct"):
                raise ValueError(raw)
            return raw.strip()
        value = float(raw)
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {key}", line, path) from None
    if value != value or value in (float("inf"), float("-inf")):
        raise ConfigError(f"{key} must be finite", line, path)
    if kind == "pos" and not value > 0:
        raise ConfigError(f"{key} must be positive, got {raw!r}", line, path)
    if kind == "nonneg" and value < 0:
        raise ConfigError(f"{key} must be non-negative, got {raw!r}", line, path)
    return value


def parse_config_text(text: str, path=None) -> Config:
    parser = configparser.ConfigParser(strict=True, interpolation=None)
    try:
        parser.read_string(text, source=str(path or "<config>"))
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno, path) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, path) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any section", exc.lineno, path) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", line, path) from None
    lines = _line_numbers(text)
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, "")), path)
    for section, keys in SCHEMA.items():
        if not parser.has_section(section):
            if section in OPTIONAL_SECTIONS:
                values[section] = {k: d for k, (_, _, d) in keys.items()}
                continue
            raise ConfigError(f"missing section [{section}]", None, path)
        sect = parser[section]
        for key in sect:
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in [{section}]",
                                  lines.get((section, key)), path)
        out = {}
        for key, (required, kind, default) in keys.items():
            if key not in sect:
                if required:
                    raise ConfigError(f"missing key {key!r} in [{section}]",
                                      lines.get((section, "")), path)
                out[key] = default
            else:
                out[key] = _convert(sect[key], kind, key, lines.get((section, key)), path)
        values[section] = out

    g = values["geometry"]
    mm = 1e-3
    try:
        geometry = GeometryParams(
            chamber_length=g["chamber_length_mm"] * mm,
            chamber_depth=g["chamber_depth_mm"] * mm,
            waveguide_width=g["waveguide_width_mm"] * mm,
            waveguide_length=g["waveguide_length_mm"] * mm,
            plug_length=g["plug_length_mm"] * mm,
            slit_width=g["slit_width_mm"] * mm,
            slit_start=g["slit_start_mm"] * mm,
            design_height=None if g["design_height_mm"] is None else g["design_height_mm"] * mm,
        )
        geometry.validate()
    except ValueError as exc:
        raise ConfigError(str(exc), lines.get(("geometry", "")), path) from None
    h = values["mesh"]["h_mm"] * mm
    if not h < geometry.chamber_depth:
        raise ConfigError("h_mm must be smaller than chamber_depth_mm",
                          lines.get(("mesh", "h_mm")), path)
    p = values["physics"]
    try:
        physics = PhysicsParams(c0=p["c0"], rho0=p["rho0"], nu=p["nu"], prandtl=p["prandtl"],
                                gamma=p["gamma"], cp=p["cp"], a_d=p["a_d"], losses=p["losses"])
    except ValueError as exc:
        raise ConfigError(str(exc), lines.get(("physics", "gamma")), path) from None
    f = values["frequencies"]
    o = values["optimization"]
    try:
        spec = ObjectiveSpec(o["objective"], o["tikhonov_eps"], f["f_min_hz"], f["f_max_hz"], f["count"])
    except ValueError as exc:
        raise ConfigError(str(exc), lines.get(("frequencies", "")), path) from None
    return Config(geometry=geometry, h=h, physics=physics, spec=spec, eval_count=f["eval_count"],
                  max_iters=o["max_iters"], grad_tol=o["grad_tol"],
                  eps_s=values["stabilization"]["eps_s"], max_step_frac=o["max_step_frac"],
                  h0_frac=o["h0_frac"], solver=o["solver"], seed=o["seed"],
                  n_slits=g["n_slits"], source=Path(path) if path else None)


def parse_config(path) -> Config:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), path)


DEFAULT_CONFIG = __doc__.split("Example::", 1)[1]
DEFAULT_CONFIG = "\n".join(line[4:] for line in DEFAULT_CONFIG.strip("\n").splitlines()) + "\n"
