"""JSON experiment configuration: parsing, validation, dotted overrides, sweeps."""
from __future__ import annotations

import copy
import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .camera import StereoRig
from .errors import ConfigError
from .filters import FILTER_TYPES, FilterConfig
from .grasp import GraspBounds, NeedleSpec
from .observation import ObservationParams


@dataclass
class FilterSpec:
    name: str
    n: int = 2000
    motion_cov_diag: list | None = None
    n_eff_threshold: float | None = None
    proposal_scale: float = 1.0
    max_retries: int = 100

    def filter_config(self, seed) -> FilterConfig:
        return FilterConfig(
            n_candidates=self.n,
            motion_cov_diag=None if self.motion_cov_diag is None else tuple(self.motion_cov_diag),
            n_eff_threshold=self.n_eff_threshold,
            rng_seed=seed,
            proposal_scale=self.proposal_scale,
            max_retries=self.max_retries,
        )


@dataclass
class ExperimentConfig:
    trajectory: str | dict = "orbit"
    steps: int = 100
    trials: int = 20
    sigma_n_px: float = 3.0
    sigma_ep_mm: float = 0.0
    sigma_eo_deg: float = 0.0
    seed: int = 0
    detections: int = 5
    drift_cov_diag: list | None = None


@dataclass
class TrialConfig:
    needle: NeedleSpec = field(default_factory=NeedleSpec)
    bounds: GraspBounds = field(default_factory=GraspBounds)
    rig: StereoRig = field(default_factory=StereoRig.from_params)
    observation: ObservationParams = field(default_factory=ObservationParams)
    filters: list[FilterSpec] = field(default_factory=lambda: [FilterSpec("PF"), FilterSpec("cPFrp")])
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    label: str = "default"
    raw: dict = field(default_factory=dict)


def default_config_dict() -> dict:
    text = resources.files("needletrack").joinpath("default_config.json").read_text()
    return json.loads(text)


def load_config_file(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` assignments; list elements are addressed by index."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            if isinstance(node, list):
                try:
                    node = node[int(p)]
                except (ValueError, IndexError):
                    raise ConfigError(f"override {key!r}: bad list index {p!r}") from None
            else:
                node = node.setdefault(p, {})
        last = parts[-1]
        if isinstance(node, list):
            try:
                node[int(last)] = _parse_value(value)
            except (ValueError, IndexError):
                raise ConfigError(f"override {key!r}: bad list index {last!r}") from None
        elif isinstance(node, dict):
            node[last] = _parse_value(value)
        else:
            raise ConfigError(f"override {key!r} does not address a JSON object")
    return out


def _section(raw, name):
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"'{name}' must be a JSON object")
    return sec


def _build(cls, kwargs: dict, where: str, rename=None):
    rename = rename or {}
    args = {rename.get(k, k): v for k, v in kwargs.items()}
    try:
        return cls(**args)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(raw: dict, label: str | None = None) -> TrialConfig:
    """Validate a config dict and build the typed :class:`TrialConfig`."""
    known = {"needle", "bounds", "rig", "observation", "filters", "experiment", "sweep", "label"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    needle = _build(NeedleSpec, _section(raw, "needle"), "needle",
                    {"radius_mm": "radius", "arc_span_rad": "arc_span"})
    bounds = _build(GraspBounds, _section(raw, "bounds"), "bounds")
    rig_raw = _section(raw, "rig")
    try:
        rig = StereoRig.from_params(**rig_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"rig: {exc}") from None
    obs = _build(ObservationParams, _section(raw, "observation"), "observation",
                 {"sigma_o_px": "sigma_o", "curve_samples": "curve_samples"})
    filters_raw = raw.get("filters", [{"name": "PF"}, {"name": "cPFrp"}])
    if not isinstance(filters_raw, list) or not filters_raw:
        raise ConfigError("'filters' must be a nonempty list")
    filters = []
    for i, f in enumerate(filters_raw):
        if not isinstance(f, dict) or "name" not in f:
            raise ConfigError(f"filters[{i}] must be an object with a 'name'")
        spec = _build(FilterSpec, f, f"filters[{i}]")
        if spec.name not in FILTER_TYPES:
            raise ConfigError(f"filters[{i}]: unknown filter {spec.name!r}; choose from {sorted(FILTER_TYPES)}")
        try:
            spec.filter_config(0)
        except ValueError as exc:
            raise ConfigError(f"filters[{i}]: {exc}") from None
        filters.append(spec)
    exp = _build(ExperimentConfig, _section(raw, "experiment"), "experiment")
    if exp.steps < 1 or exp.trials < 1:
        raise ConfigError("experiment: steps and trials must be at least 1")
    if min(exp.sigma_n_px, exp.sigma_ep_mm, exp.sigma_eo_deg) < 0:
        raise ConfigError("experiment: noise levels must be nonnegative")
    if exp.detections < 1:
        raise ConfigError("experiment: detections must be at least 1")
    from .harness import validate_trajectory  # local import: harness depends on this module

    validate_trajectory(exp.trajectory)
    return TrialConfig(needle, bounds, rig, obs, filters, exp,
                       label or raw.get("label", "default"), copy.deepcopy(raw))


def _fmt(v) -> str:
    return f"{v:g}" if isinstance(v, (int, float)) and not isinstance(v, bool) else str(v)


def expand_sweep(raw: dict) -> list[TrialConfig]:
    """Expand an optional ``sweep`` block (dotted key -> list of values) into configs."""
    sweep = raw.get("sweep") or {}
    if not isinstance(sweep, dict):
        raise ConfigError("'sweep' must map dotted keys to lists of values")
    base = {k: v for k, v in raw.items() if k != "sweep"}
    base_label = raw.get("label", "default")
    if not sweep:
        return [parse_config(base, base_label)]
    keys = list(sweep)
    for k in keys:
        if not isinstance(sweep[k], list) or not sweep[k]:
            raise ConfigError(f"sweep[{k!r}] must be a nonempty list")
    out = []
    for combo in itertools.product(*(sweep[k] for k in keys)):
        sets = [f"{k}={json.dumps(v)}" for k, v in zip(keys, combo)]
        label = ",".join(f"{k.split('.')[-1]}={_fmt(v)}" for k, v in zip(keys, combo))
        out.append(parse_config(apply_overrides(base, sets), label))
    return out


def noise_level(cfg: TrialConfig) -> float:
    return float(np.asarray(cfg.experiment.sigma_n_px))
