"""Run configuration: INI-style ``[section]`` blocks of ``key = value`` pairs.

Example::

    [geometry]
    m = 2
    n = 64
    shape = frame
    width = 0.125

    [operator]
    family = divergence
    lambdas = 1e2, 1e3, 1e4

    [bloch]
    n_theta = 5
    k_max = 6
    e_ceiling = 100

    [task]
    name = sweep
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .assembly import Family
from .geometry import SHAPES

TASKS = ("bands", "gaps", "ids", "sweep", "bracketing", "susy", "criterion")
FORMATS = ("csv", "json")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    m: int
    n: int
    shape: str
    shape_param: float
    family: Family
    lambdas: list[float]
    n_theta: int
    k_max: int
    e_ceiling: float
    task: str
    tol: float = 1e-12
    potential_width: float = 0.0
    beta: float = 1.0
    gauge_margin: Optional[float] = None
    coeff_a: object = 1.0
    coeff_b: object = 1.0
    k: int = 1
    threshold: float = 1e-4
    ids_points: int = 201
    refine: bool = True
    directory: str = "out"
    formats: tuple[str, ...] = FORMATS
    echo: dict = field(default_factory=dict)  # sections as read, minus [output]


class _Reader:
    """Typed access to a parsed config that reports ``file:line [section] key`` on errors."""

    def __init__(self, parser: configparser.ConfigParser, path: str, lines: dict):
        self.parser = parser
        self.path = path
        self.lines = lines

    def where(self, section: str, key: Optional[str] = None) -> str:
        line = self.lines.get((section, key))
        loc = f"{self.path}:{line}" if line else self.path
        return f"{loc} [{section}]" + (f" {key}" if key else "")

    def raw(self, section: str, key: str, default=None, required: bool = False):
        if not self.parser.has_section(section):
            if required:
                raise ConfigError(f"{self.path}: missing section [{section}]")
            return default
        if key not in self.parser[section]:
            if required:
                raise ConfigError(f"{self.where(section)}: missing key {key!r}")
            return default
        return self.parser[section][key].strip()

    def typed(self, section, key, kind, default=None, required=False, check=None, expect=""):
        text = self.raw(section, key, None, required)
        if text is None:
            return default
        try:
            value = kind(text)
        except ValueError:
            raise ConfigError(f"{self.where(section, key)}: expected {kind.__name__}, got {text!r}") from None
        if check is not None and not check(value):
            raise ConfigError(f"{self.where(section, key)}: expected {expect}, got {text!r}")
        return value

    def floats(self, section, key) -> Optional[list[float]]:
        text = self.raw(section, key)
        if text is None:
            return None
        try:
            return [float(t) for t in text.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"{self.where(section, key)}: expected a list of numbers, got {text!r}") from None


def _line_numbers(text: str) -> dict:
    out, section = {}, None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            out[(section, None)] = i
        elif section and "=" in s and not s.startswith(("#", ";")):
            out[(section, s.split("=", 1)[0].strip().lower())] = i
    return out


def _coefficient(reader: _Reader, key: str):
    vals = reader.floats("operator", key)
    if vals is None:
        return 1.0
    if len(vals) == 1:
        return vals[0]
    size = int(round(len(vals) ** 0.5))
    if size * size != len(vals):
        raise ConfigError(f"{reader.where('operator', key)}: expected 1 or m*m numbers, got {len(vals)}")
    return tuple(tuple(vals[i * size:(i + 1) * size]) for i in range(size))


def parse_config(text: str, path: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    r = _Reader(parser, path, _line_numbers(text))

    m = r.typed("geometry", "m", int, required=True, check=lambda v: v in (1, 2, 3), expect="1, 2 or 3")
    n = r.typed("geometry", "n", int, required=True, check=lambda v: v >= 2, expect="an integer >= 2")
    shape = r.raw("geometry", "shape", required=True)
    if shape not in SHAPES:
        raise ConfigError(f"{r.where('geometry', 'shape')}: unknown shape {shape!r}; expected one of {sorted(SHAPES)}")
    param_key = SHAPES[shape][1]
    shape_param = r.typed("geometry", param_key, float, required=True)

    fam_text = r.raw("operator", "family", required=True)
    try:
        family = Family(fam_text)
    except ValueError:
        raise ConfigError(f"{r.where('operator', 'family')}: unknown family {fam_text!r}; "
                          f"expected one of {[f.value for f in Family]}") from None
    ladder = r.floats("operator", "lambdas")
    single = r.typed("operator", "lambda", float)
    if ladder is None and single is None:
        raise ConfigError(f"{r.where('operator')}: one of 'lambda' or 'lambdas' is required")
    if ladder is not None and single is not None:
        raise ConfigError(f"{r.where('operator')}: give either 'lambda' or 'lambdas', not both")
    lambdas = ladder if ladder is not None else [single]
    if not lambdas or any(x < 0 for x in lambdas):
        raise ConfigError(f"{r.where('operator', 'lambdas' if ladder else 'lambda')}: contrast values must be >= 0")
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise ConfigError(f"{r.where('operator', 'lambdas')}: ladder must be strictly increasing")

    task = r.raw("task", "name", required=True)
    if task not in TASKS:
        raise ConfigError(f"{r.where('task', 'name')}: unknown task {task!r}; expected one of {list(TASKS)}")

    needs_bloch = task != "criterion"
    n_theta = r.typed("bloch", "n_theta", int, default=3, required=needs_bloch,
                      check=lambda v: v >= 3 and v % 2 == 1, expect="an odd integer >= 3")
    k_max = r.typed("bloch", "k_max", int, default=6, required=needs_bloch, check=lambda v: v >= 1, expect=">= 1")
    e_ceiling = r.typed("bloch", "e_ceiling", float, default=0.0, required=needs_bloch,
                        check=lambda v: v > 0, expect="a positive number")
    tol = r.typed("bloch", "tol", float, default=1e-12, check=lambda v: 0 < v < 1, expect="a number in (0, 1)")

    formats = tuple((r.raw("output", "formats") or ",".join(FORMATS)).replace(",", " ").split())
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"{r.where('output', 'formats')}: unknown formats {bad}; expected {list(FORMATS)}")

    margin = r.typed("operator", "gauge_margin", float)
    echo = {s: dict(parser[s]) for s in parser.sections() if s != "output"}
    return RunConfig(
        m=m, n=n, shape=shape, shape_param=shape_param, family=family, lambdas=lambdas,
        n_theta=n_theta, k_max=k_max, e_ceiling=e_ceiling, task=task, tol=tol,
        potential_width=r.typed("operator", "potential_width", float, 0.0, check=lambda v: v >= 0, expect=">= 0"),
        beta=r.typed("operator", "beta", float, 1.0),
        gauge_margin=margin,
        coeff_a=_coefficient(r, "coeff_a"),
        coeff_b=_coefficient(r, "coeff_b"),
        k=r.typed("task", "k", int, 1, check=lambda v: v >= 1, expect=">= 1"),
        threshold=r.typed("task", "threshold", float, 1e-4, check=lambda v: v > 0, expect="> 0"),
        ids_points=r.typed("task", "ids_points", int, 201, check=lambda v: v >= 2, expect=">= 2"),
        refine=r.typed("task", "refine", boolean, True),
        directory=r.raw("output", "directory", "out"),
        formats=formats,
        echo=echo,
    )


def boolean(text: str) -> bool:
    try:
        return configparser.ConfigParser.BOOLEAN_STATES[text.lower()]
    except KeyError:
        raise ValueError(text) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
