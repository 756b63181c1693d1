"""INI scenario configuration.

A config has a ``[scenario]`` section (``name``, ``seed``, ``n_trajectories``,
``output_dir``, ``format``), a ``[params]`` section of overrides applied to the
reference parameter set, an optional ``[grid]`` section (``t0``, ``t_end``,
``dt``) and scenario-specific sections such as ``[sweep]``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError, InvalidParameterError
from .params import DetectionPort, PhysicalParams, reference_params
from .stochastic import TimeGrid

SCENARIOS = ("fig2", "trajectory", "exact_vs_gaussian", "signal_pdf", "sweep", "checks")
STOCHASTIC = ("trajectory", "exact_vs_gaussian")
FORMATS = ("csv", "json")

_FLOAT_FIELDS = {
    f.name for f in dataclasses.fields(PhysicalParams) if f.name not in ("detection_port", "flux_table")
}


@dataclass
class ScenarioConfig:
    scenario: str
    params: PhysicalParams
    grid: Optional[TimeGrid]
    seed: Optional[int] = None
    n_trajectories: int = 1
    output_dir: Path = Path("out")
    format: str = "csv"
    options: dict = field(default_factory=dict)
    source_text: str = ""

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {', '.join(SCENARIOS)}")
        if self.format not in FORMATS:
            raise ConfigError(f"unknown format {self.format!r}")
        if self.scenario in STOCHASTIC and self.seed is None:
            raise ConfigError(f"scenario {self.scenario!r} needs a seed")
        if self.scenario == "trajectory" and self.n_trajectories < 1:
            raise ConfigError("n_trajectories must be >= 1")
        if self.scenario in ("trajectory", "exact_vs_gaussian") and self.grid is None:
            raise ConfigError(f"scenario {self.scenario!r} needs a [grid] section")
        try:
            self.params.validate()
        except InvalidParameterError as exc:
            raise ConfigError(f"invalid [params]: {exc}") from exc
        return self

    def digest(self) -> str:
        """SHA-256 of the resolved configuration (independent of formatting in the file)."""
        doc = {
            "scenario": self.scenario,
            "params": {k: (v.value if isinstance(v, DetectionPort) else v)
                       for k, v in dataclasses.asdict(self.params).items()},
            "grid": None if self.grid is None else dataclasses.asdict(self.grid),
            "seed": self.seed,
            "n_trajectories": self.n_trajectories,
            "format": self.format,
            "options": self.options,
        }
        blob = json.dumps(doc, sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()


def _parse_params(section) -> PhysicalParams:
    overrides = {}
    for key, raw in section.items():
        if key == "detection_port":
            try:
                overrides[key] = DetectionPort(raw.strip().lower())
            except ValueError as exc:
                raise ConfigError(f"detection_port must be transmission or reflection, got {raw!r}") from exc
        elif key == "flux_table":
            try:
                pairs = [tuple(float(x) for x in item.split(":")) for item in raw.split(",")]
                times, values = zip(*pairs)
            except ValueError as exc:
                raise ConfigError(f"flux_table must be 't:flux, t:flux, ...', got {raw!r}") from exc
            overrides[key] = (tuple(times), tuple(values))
        elif key in _FLOAT_FIELDS:
            try:
                overrides[key] = float(raw)
            except ValueError as exc:
                raise ConfigError(f"[params] {key} is not a number: {raw!r}") from exc
        else:
            raise ConfigError(f"unknown parameter {key!r} in [params]")
    try:
        return reference_params(**overrides)
    except InvalidParameterError as exc:
        raise ConfigError(f"invalid [params]: {exc}") from exc


def _parse_grid(section) -> TimeGrid:
    try:
        t0 = section.getfloat("t0", 0.0)
        t_end = section.getfloat("t_end")
        dt = section.getfloat("dt")
    except ValueError as exc:
        raise ConfigError(f"malformed [grid]: {exc}") from exc
    if t_end is None or dt is None:
        raise ConfigError("[grid] needs t_end and dt")
    try:
        return TimeGrid.span(t0, t_end, dt)
    except InvalidParameterError as exc:
        raise ConfigError(f"invalid [grid]: {exc}") from exc


def parse_config(text: str, seed: Optional[int] = None, output_dir=None, fmt: Optional[str] = None) -> ScenarioConfig:
    """Build a validated :class:`ScenarioConfig`; keyword arguments override the file."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if not cp.has_section("scenario"):
        raise ConfigError("config needs a [scenario] section")
    sc = cp["scenario"]
    try:
        file_seed = sc.getint("seed") if "seed" in sc else None
        n_traj = sc.getint("n_trajectories", 1)
    except ValueError as exc:
        raise ConfigError(f"malformed [scenario]: {exc}") from exc
    options = {
        name: dict(cp[name]) for name in cp.sections() if name not in ("scenario", "params", "grid")
    }
    cfg = ScenarioConfig(
        scenario=sc.get("name", "").strip(),
        params=_parse_params(cp["params"] if cp.has_section("params") else {}),
        grid=_parse_grid(cp["grid"]) if cp.has_section("grid") else None,
        seed=seed if seed is not None else file_seed,
        n_trajectories=n_traj,
        output_dir=Path(output_dir if output_dir is not None else sc.get("output_dir", "out")),
        format=fmt if fmt is not None else sc.get("format", "csv").strip(),
        options=options,
        source_text=text,
    )
    return cfg.validate()


def load_config(path, **overrides) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, **overrides)
