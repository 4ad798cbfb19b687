"""Run configuration: nested dataclasses, a JSON file, dotted-path overrides.

Resolution order is defaults < config file < command-line flags. The file
is JSON because it is the one structured format the standard library both
reads and writes on every supported Python.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

from .criterion import PipelineConfig
from .model import DEFAULT_ANGLES, DetectionParams
from .reconstruct import DeconvolutionSettings

CONFIG_ENV = "PSDCERT_CONFIG"


@dataclass(frozen=True)
class SweepConfig:
    n_cutoff_max: int = 16
    z: float = 2.0


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 150
    seed: int = 0


def _default_state() -> dict:
    # sigma^2 = 1500 mu_B^2 puts the mean photon number near 13 at the default lambda
    return {"kind": "gaussian_reference", "sigma": 1500**0.5}


@dataclass(frozen=True)
class SimulateConfig:
    state: dict = field(default_factory=_default_state)
    pulses_per_angle: int = 25000
    seed: int = 0
    via_histogram: bool = False


@dataclass(frozen=True)
class IOConfig:
    reports_dir: str = "reports"


@dataclass(frozen=True)
class RunConfig:
    detection: DetectionParams = field(default_factory=DetectionParams)
    angles: tuple = DEFAULT_ANGLES
    route: str = "factorial"
    weighting: str = "counts"
    tail_tol: float | None = None
    deconvolution: DeconvolutionSettings = field(default_factory=DeconvolutionSettings)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    io: IOConfig = field(default_factory=IOConfig)

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        if not self.angles:
            raise ValueError("angles must not be empty")
        if self.weighting not in ("counts", "angles"):
            raise ValueError(f"weighting must be 'counts' or 'angles', got {self.weighting!r}")
        if self.bootstrap.replicates < 2:
            raise ValueError("bootstrap.replicates must be >= 2")
        if self.simulate.pulses_per_angle < 1:
            raise ValueError("simulate.pulses_per_angle must be >= 1")
        if not isinstance(self.simulate.state, dict):
            raise ValueError("simulate.state must be a kind + parameter mapping")
        self.pipeline()  # route and cutoff validation lives there

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(params=self.detection, angles=self.angles, weighting=self.weighting,
                              route=self.route, n_cutoff_max=self.sweep.n_cutoff_max, z=self.sweep.z,
                              deconvolution=self.deconvolution, tail_tol=self.tail_tol)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["angles"] = list(self.angles)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, "")


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ValueError(f"config section '{prefix or '<root>'}' must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ValueError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        kwargs[name] = _build(type(current), value, f"{prefix}{name}.") if is_dataclass(current) else value
    return cls(**kwargs)


def leaf_paths(obj=None, prefix: str = "") -> dict[str, Any]:
    """Dotted path -> default value for every non-section field of a config dataclass."""
    obj = RunConfig() if obj is None else obj
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        if is_dataclass(value):
            out.update(leaf_paths(value, f"{prefix}{f.name}."))
        else:
            out[f"{prefix}{f.name}"] = value
    return out


def parse_value(text: str) -> Any:
    """JSON literal if it parses (numbers, lists, null, booleans), else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: dict[str, Any]) -> dict:
    """Set dotted-path keys in a nested dict copy."""
    out = json.loads(json.dumps(data))
    for path, value in overrides.items():
        node = out
        *parents, leaf = path.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValueError(f"cannot override {path}: {p} is not a section")
        node[leaf] = value
    return out


def config_path(explicit: str | None) -> Path | None:
    """The explicit path, else $PSDCERT_CONFIG, else none."""
    if explicit:
        return Path(explicit)
    env = os.environ.get(CONFIG_ENV)
    return Path(env) if env else None


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from None
    data = apply_overrides(data, overrides or {})
    return RunConfig.from_dict(data)


def with_overrides(config: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    return RunConfig.from_dict(apply_overrides(config.to_dict(), overrides))

