"""
Run configuration: sectioned key = value files.

    [domain]
    kind = interval
    lengths = 1.0
    cells = 64

    [params]
    gamma = 0.1
    g = 1.0          # g_left/g_right/g_bottom/g_top override per side

    [time]
    t_end = 50

Sections: domain, params, init, time, solver, analysis, output (and sweep
for sweep specs). Unknown sections and keys are rejected.
"""

from __future__ import annotations

from dataclasses import MISSING, dataclass, field, fields, replace
import math
import os
from pathlib import Path
from typing import Any, Callable

from util import fileio
from util.errors import ConfigError
from util.grid import MESH_KINDS, BoundaryData, Mesh, boundary_data, build_mesh

OUT_DIR_ENV = "CHEMO_OUT_DIR"
"""
Environment variable overriding [output] directory.
"""

INIT_PROFILES = ("constant", "gaussian-bump", "two-bumps")
LINEAR_SOLVERS = ("direct", "pcg")
FLUX_SCHEMES = ("exponential", "upwind")
OUTPUT_FORMATS = ("csv", "json")


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true/false, got '{text}'")


def _parse_int(text: str) -> int:
    return int(text)


def _tuple_of(parse: Callable[[str], Any]) -> Callable[[str], tuple]:
    def parser(text: str) -> tuple:
        return tuple(parse(tok.strip()) for tok in text.split(",") if tok.strip())

    return parser


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_render(v) for v in value)
    return str(value)


def _opt(parse: Callable[[str], Any], default: Any = MISSING, **kwargs) -> Any:
    """
    Dataclass field that knows how to parse itself from config text.
    """
    if default is MISSING:
        return field(metadata={"parse": parse}, **kwargs)
    return field(default=default, metadata={"parse": parse}, **kwargs)


@dataclass(frozen=True)
class DomainConfig:
    kind: str = _opt(str)
    lengths: tuple[float, ...] = _opt(_tuple_of(float))
    cells: tuple[int, ...] = _opt(_tuple_of(_parse_int))


@dataclass(frozen=True)
class ParamsConfig:
    gamma: float = _opt(float)
    chi: float = _opt(float, 1.0)
    g: float = _opt(float, 1.0)
    g_left: float | None = _opt(float, None)
    g_right: float | None = _opt(float, None)
    g_bottom: float | None = _opt(float, None)
    g_top: float | None = _opt(float, None)

    def g_sides(self) -> dict[str, float]:
        """
        Per-side overrides that are set.
        """
        sides = {
            "left": self.g_left,
            "right": self.g_right,
            "bottom": self.g_bottom,
            "top": self.g_top,
        }
        return {side: g for side, g in sides.items() if g is not None}


@dataclass(frozen=True)
class InitConfig:
    profile: str = _opt(str, "constant")
    amplitude: float = _opt(float, 0.0)
    center: tuple[float, ...] = _opt(_tuple_of(float), (0.5,))
    center2: tuple[float, ...] = _opt(_tuple_of(float), (0.75,))
    width: float = _opt(float, 0.1)
    baseline: float = _opt(float, 1.0)
    mass: float | None = _opt(float, None)


@dataclass(frozen=True)
class TimeConfig:
    t_end: float = _opt(float)
    dt_cap: float | None = _opt(float, None)
    output_every: float | None = _opt(float, None)


@dataclass(frozen=True)
class SolverConfig:
    elliptic_tol: float = _opt(float, 1e-12)
    mass_tol: float = _opt(float, 1e-10)
    newton_cap: int = _opt(_parse_int, 30)
    outer_cap: int = _opt(_parse_int, 200)
    linear_solver: str = _opt(str, "direct")
    flux: str = _opt(str, "exponential")


@dataclass(frozen=True)
class AnalysisConfig:
    trace_lambda: float = _opt(float, 1.0 / 3.0)
    trace_q: float = _opt(float, 2.0)
    trace_samples: int = _opt(_parse_int, 200)
    c_trace: float | None = _opt(float, None)
    stationary: bool = _opt(_parse_bool, True)
    seed: int = _opt(_parse_int, 42)


@dataclass(frozen=True)
class OutputConfig:
    directory: str = _opt(str, "output")
    formats: tuple[str, ...] = _opt(_tuple_of(str), OUTPUT_FORMATS)


@dataclass(frozen=True)
class RunConfig:
    domain: DomainConfig
    params: ParamsConfig
    init: InitConfig = field(default_factory=InitConfig)
    time: TimeConfig = field(default_factory=lambda: TimeConfig(t_end=0.0))
    solver: SolverConfig = field(default_factory=SolverConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


@dataclass(frozen=True)
class SweepConfig:
    gammas: tuple[float, ...] = _opt(_tuple_of(float))
    masses: tuple[float, ...] = _opt(_tuple_of(float), ())
    gnorms: tuple[float, ...] = _opt(_tuple_of(float), ())
    tail_fraction: float = _opt(float, 0.5)


@dataclass(frozen=True)
class SweepSpec:
    template: RunConfig
    """
    Per-point run configuration; gamma, g and the initial mass are replaced
    """
    sweep: SweepConfig
    """
    The parameter grid and convergence criterion
    """

    def points(self) -> list[tuple[float | None, float | None, float]]:
        """
        (m, gnorm, gamma) triples; None keeps the template's value.
        """
        masses = self.sweep.masses or (None,)
        gnorms = self.sweep.gnorms or (None,)
        return [(m, g, gamma) for m in masses for g in gnorms for gamma in self.sweep.gammas]

    def point_config(self, m: float | None, gnorm: float | None, gamma: float) -> RunConfig:
        """
        The run configuration for one sweep point.
        """
        config = self.template
        params = replace(config.params, gamma=gamma)
        if gnorm is not None:
            params = replace(
                params, g=gnorm, g_left=None, g_right=None, g_bottom=None, g_top=None
            )
        init = config.init if m is None else replace(config.init, mass=m)
        return replace(config, params=params, init=init)


RUN_SECTIONS = {
    "domain": DomainConfig,
    "params": ParamsConfig,
    "init": InitConfig,
    "time": TimeConfig,
    "solver": SolverConfig,
    "analysis": AnalysisConfig,
    "output": OutputConfig,
}
"""
Section name -> dataclass, in file order.
"""


def _read_sections(
    path: str | Path, allowed: dict[str, type]
) -> dict[str, dict[str, tuple[int, str]]]:
    """
    Split a config file into {section: {key: (line, raw value)}}.
    """
    sections: dict[str, dict[str, tuple[int, str]]] = {}
    current = None
    for lineno, line in fileio.read_data_lines(path):
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in allowed:
                raise ConfigError(f"unknown section [{current}]", lineno)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", lineno)
            sections[current] = {}
            continue
        if current is None:
            raise ConfigError("key outside of any [section]", lineno)
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got '{line}'", lineno)
        key, value = (tok.strip() for tok in line.split("=", 1))
        if key in sections[current]:
            raise ConfigError(f"duplicate key '{key}' in [{current}]", lineno)
        sections[current][key] = (lineno, value)
    return sections


def _build_section(name: str, cls: type, entries: dict[str, tuple[int, str]]) -> Any:
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, (lineno, raw) in entries.items():
        if key not in known:
            raise ConfigError(f"unknown key '{key}' in [{name}]", lineno)
        try:
            kwargs[key] = known[key].metadata["parse"](raw)
        except ValueError as e:
            raise ConfigError(f"bad value for {name}.{key}: {e}", lineno) from e
    for f in known.values():
        if f.default is MISSING and f.name not in kwargs:
            raise ConfigError(f"missing required key {name}.{f.name}")
    return cls(**kwargs)


def _build_run_config(sections: dict[str, dict[str, tuple[int, str]]]) -> RunConfig:
    for required in ("domain", "params", "time"):
        if required not in sections:
            raise ConfigError(f"missing required section [{required}]")
    built = {
        name: _build_section(name, cls, sections[name])
        for name, cls in RUN_SECTIONS.items()
        if name in sections
    }
    config = RunConfig(**built)
    if config.time.output_every is None and config.time.t_end > 0:
        config = replace(
            config, time=replace(config.time, output_every=config.time.t_end / 100)
        )
    validate(config)
    return config


def load_config(path: str | Path) -> RunConfig:
    """
    Load and validate a run configuration.

    Args:
        path: The config file.

    Raises: ConfigError naming the line or the violated invariant.
    """
    return _build_run_config(_read_sections(path, RUN_SECTIONS))


def load_sweep(path: str | Path) -> SweepSpec:
    """
    Load a sweep spec: a run configuration plus a [sweep] section.
    """
    sections = _read_sections(path, {**RUN_SECTIONS, "sweep": SweepConfig})
    if "sweep" not in sections:
        raise ConfigError("missing required section [sweep]")
    sweep = _build_section("sweep", SweepConfig, sections.pop("sweep"))
    spec = SweepSpec(_build_run_config(sections), sweep)
    validate_sweep(spec)
    return spec


def _check(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def validate(config: RunConfig) -> None:
    """
    Check every RunConfig invariant.

    Raises: ConfigError naming the violated invariant.
    """
    d, p, i, t, s, a, o = (
        config.domain,
        config.params,
        config.init,
        config.time,
        config.solver,
        config.analysis,
        config.output,
    )
    _check(d.kind in MESH_KINDS, f"domain.kind must be one of {MESH_KINDS}")
    mesh = build_mesh(d.kind, d.lengths, d.cells)

    _check(math.isfinite(p.gamma) and p.gamma >= 0, "params.gamma must be >= 0")
    _check(p.chi > 0, "params.chi must be > 0")
    _check(p.g >= 0, "params.g must be >= 0")
    for side, g in p.g_sides().items():
        _check(side in mesh.sides, f"params.g_{side} given but a {d.kind} has no {side} side")
        _check(g >= 0, f"params.g_{side} must be >= 0")

    _check(i.profile in INIT_PROFILES, f"init.profile must be one of {INIT_PROFILES}")
    _check(i.baseline > 0, "init.baseline must be > 0 (initial density n0 > 0)")
    _check(i.amplitude >= 0, "init.amplitude must be >= 0 (initial density n0 > 0)")
    _check(i.width > 0, "init.width must be > 0")
    _check(
        len(i.center) == mesh.ndim and len(i.center2) == mesh.ndim,
        f"init.center and init.center2 need {mesh.ndim} coordinate(s)",
    )
    _check(i.mass is None or i.mass > 0, "init.mass must be > 0")

    _check(t.t_end >= 0, "time.t_end must be >= 0")
    _check(t.dt_cap is None or t.dt_cap > 0, "time.dt_cap must be > 0")
    _check(
        t.output_every is None or t.output_every > 0, "time.output_every must be > 0"
    )

    _check(s.elliptic_tol > 0, "solver.elliptic_tol must be > 0")
    _check(s.mass_tol > 0, "solver.mass_tol must be > 0")
    _check(s.newton_cap >= 1, "solver.newton_cap must be >= 1")
    _check(s.outer_cap >= 1, "solver.outer_cap must be >= 1")
    _check(s.linear_solver in LINEAR_SOLVERS, f"solver.linear_solver must be one of {LINEAR_SOLVERS}")
    _check(s.flux in FLUX_SCHEMES, f"solver.flux must be one of {FLUX_SCHEMES}")

    _check(0 < a.trace_q <= 2, "analysis.trace_q must lie in (0, 2]")
    window = a.trace_q / (2 * mesh.ndim + 2 * a.trace_q - mesh.ndim * a.trace_q)
    _check(
        0 < a.trace_lambda < window,
        f"analysis.trace_lambda must lie in (0, {window:g}) for q={a.trace_q:g}, N={mesh.ndim}",
    )
    _check(a.trace_samples >= 1, "analysis.trace_samples must be >= 1")
    _check(a.c_trace is None or a.c_trace > 0, "analysis.c_trace must be > 0")

    _check(len(o.formats) > 0, "output.formats must not be empty")
    for fmt in o.formats:
        _check(fmt in OUTPUT_FORMATS, f"output.formats entries must be in {OUTPUT_FORMATS}")


def validate_sweep(spec: SweepSpec) -> None:
    """
    Check the sweep grid.
    """
    sweep = spec.sweep
    _check(len(sweep.gammas) > 0, "sweep.gammas must not be empty")
    _check(all(g >= 0 for g in sweep.gammas), "sweep.gammas entries must be >= 0")
    _check(all(m > 0 for m in sweep.masses), "sweep.masses entries must be > 0")
    _check(all(g > 0 for g in sweep.gnorms), "sweep.gnorms entries must be > 0")
    _check(0 < sweep.tail_fraction <= 1, "sweep.tail_fraction must lie in (0, 1]")
    for point in spec.points():
        validate(spec.point_config(*point))


def write_config(config: RunConfig) -> str:
    """
    Render a config as text that load_config() reads back to an equal config.
    """
    blocks = []
    for name in RUN_SECTIONS:
        section = getattr(config, name)
        lines = [f"[{name}]"]
        for f in fields(section):
            value = getattr(section, f.name)
            if value is not None:
                lines.append(f"{f.name} = {_render(value)}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def as_dict(config: RunConfig) -> dict:
    """
    Plain nested dict of a config, for manifests.
    """
    return {
        name: {f.name: getattr(getattr(config, name), f.name) for f in fields(getattr(config, name))}
        for name in RUN_SECTIONS
    }


def build_problem(config: RunConfig) -> tuple[Mesh, BoundaryData]:
    """
    Mesh and boundary data described by a config.
    """
    d, p = config.domain, config.params
    mesh = build_mesh(d.kind, d.lengths, d.cells)
    return mesh, boundary_data(mesh, p.gamma, p.g, p.g_sides())


def output_directory(config: RunConfig, override: str | None = None) -> Path:
    """
    Where outputs go: --out flag, then $CHEMO_OUT_DIR, then [output] directory.
    """
    if override:
        return Path(override)
    if os.environ.get(OUT_DIR_ENV):
        return Path(os.environ[OUT_DIR_ENV])
    return Path(config.output.directory)
