"""Configuration loading: packaged defaults, user YAML overlay, CLI flags.

The merged dictionary is validated and lowered into the typed configs the
pipeline modules take. One documented defaults file ships inside the
package; user files only need the keys they change.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .association import AssociationConfig
from .io import config_hash
from .predictor import TrainConfig
from .sim import PRESET_NAMES, ScenarioSpec, preset, spec_from_dict
from .tracker import LifecycleParams, NoiseConfig, TrackerConfig

# config-level spelling -> tracker-level mode name
_ASSOCIATION_ALIASES = {
    "two_stage": "two_stage",
    "mahalanobis_only": "mahalanobis",
    "mahalanobis": "mahalanobis",
}


class ConfigError(ValueError):
    """Raised for unknown keys, bad enum values, or malformed config files."""


def load_defaults() -> dict:
    text = resources.files("radarmot").joinpath("defaults.yaml").read_text("utf-8")
    return yaml.safe_load(text)


def _deep_merge(base: dict, overlay: dict) -> dict:
    merged = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the user file, then explicit overrides (e.g. CLI flags)."""
    merged = load_defaults()
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text("utf-8"))
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        unknown = set(raw) - set(merged)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        merged = _deep_merge(merged, raw)
    if overrides:
        merged = _deep_merge(merged, overrides)
    return merged


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved parameters for one tracking run."""

    seed: int
    out_dir: Path
    paths: dict
    scenario_preset: str | None
    scenario_path: Path | None
    scenario_overrides: dict
    tau_iou: float
    min_support: float
    motion_mode: str
    n_p: int
    association: AssociationConfig
    noise: NoiseConfig
    lifecycle: LifecycleParams
    training: TrainConfig
    dist_threshold: float
    raw: dict = dataclasses.field(repr=False)

    _DEFAULT_FILES = {
        "ground_truth": "ground_truth.jsonl",
        "samples": "samples.jsonl",
        "model": "model.json",
        "tracks": "tracks.jsonl",
    }

    def path_for(self, name: str) -> Path:
        """Resolve a pipeline file: explicit config path or out_dir default."""
        explicit = self.paths.get(name)
        if explicit is not None:
            return Path(explicit)
        return self.out_dir / self._DEFAULT_FILES[name]

    def scenario_spec(self) -> ScenarioSpec:
        if self.scenario_path is not None:
            data = yaml.safe_load(Path(self.scenario_path).read_text("utf-8"))
            spec = spec_from_dict(data)
        elif self.scenario_preset is not None:
            spec = preset(self.scenario_preset, seed=self.seed)
        else:
            raise ConfigError("config needs scenario.preset or scenario.path")
        spec = dataclasses.replace(spec, seed=self.seed)
        if self.scenario_overrides:
            spec = _apply_scenario_overrides(spec, self.scenario_overrides)
        return spec

    def tracker_config(self, dt: float) -> TrackerConfig:
        return TrackerConfig(
            motion_mode=self.motion_mode,
            n_p=self.n_p,
            dt=dt,
            seed=self.seed,
            tau_iou=self.tau_iou,
            min_support=self.min_support,
            noise=self.noise,
            association=self.association,
            lifecycle=self.lifecycle,
        )

    def semantic_config(self) -> dict:
        """The part of the config that determines outputs.

        File locations are excluded: where results land does not change
        what is computed, so reruns into different directories keep the
        same run identity.
        """
        return {k: v for k, v in self.raw.items()
                if k not in ("out_dir", "paths")}

    def hash(self) -> str:
        return config_hash(self.semantic_config())


_SCENARIO_OVERRIDE_FIELDS = (
    "duration", "frame_rate", "clutter_rate", "p_detect", "n_d", "name",
)


def _apply_scenario_overrides(spec: ScenarioSpec, overrides: dict) -> ScenarioSpec:
    changes: dict[str, Any] = {}
    for key, value in overrides.items():
        if key in _SCENARIO_OVERRIDE_FIELDS:
            changes[key] = value
        elif key == "noise":
            changes["noise"] = dataclasses.replace(spec.noise, **value)
        else:
            raise ConfigError(f"cannot override scenario field {key!r}")
    return dataclasses.replace(spec, **changes)


def _enum(section: str, key: str, value: str, allowed) -> str:
    if value not in allowed:
        raise ConfigError(f"{section}.{key} must be one of {sorted(allowed)}, got {value!r}")
    return value


def build_run_config(merged: dict) -> RunConfig:
    """Validate a merged config dict and lower it into typed configs."""
    try:
        scenario = merged["scenario"]
        fusion = merged["fusion"]
        tracker = merged["tracker"]
        assoc = merged["association"]
        noise = merged["noise"]
        lifecycle = merged["lifecycle"]
        training = merged["training"]
        evaluation = merged["evaluation"]
    except KeyError as missing:
        raise ConfigError(f"config is missing section {missing}") from None

    preset_name = scenario.get("preset")
    if preset_name is not None:
        _enum("scenario", "preset", preset_name, PRESET_NAMES)
    mode = _enum("association", "mode", assoc["mode"], _ASSOCIATION_ALIASES)
    motion = _enum("tracker", "motion_mode", tracker["motion_mode"], ("cv", "predictor"))
    _enum("noise", "process", noise["process"], ("fixed", "mc_variance"))
    _enum("noise", "measurement", noise["measurement"], ("fixed", "detection_variance"))

    association = AssociationConfig(
        w1=float(assoc["w1"]),
        w2=float(assoc["w2"]),
        sigma_v=float(assoc["sigma_v"]),
        **({} if assoc.get("gate1") is None else {"gate1": float(assoc["gate1"])}),
        gate2=None if assoc.get("gate2") is None else float(assoc["gate2"]),
        mode=_ASSOCIATION_ALIASES[mode],
    )
    noise_config = NoiseConfig(
        mode_process=noise["process"],
        mode_measurement=noise["measurement"],
        q0=tuple(float(v) for v in noise["q0"]),
        r0=tuple(float(v) for v in noise["r0"]),
        p0=tuple(float(v) for v in noise["p0"]),
        floor_process=bool(noise["floor_process"]),
        floor_measurement=bool(noise["floor_measurement"]),
    )
    lifecycle_params = LifecycleParams(
        min_hits=int(lifecycle["min_hits"]),
        max_age=int(lifecycle["max_age"]),
        init_score_min=float(lifecycle["init_score_min"]),
    )
    train_config = TrainConfig(
        epochs=int(training["epochs"]),
        learning_rate=float(training["learning_rate"]),
        batch_size=int(training["batch_size"]),
        seed=int(merged["seed"]),
        momentum=float(training["momentum"]),
        horizon=int(training["horizon"]),
        d_model=int(training["d_model"]),
        d_ff=int(training["d_ff"]),
        dropout_rate=float(training["dropout_rate"]),
        history_noise=float(training["history_noise"]),
        clip_norm=None if training["clip_norm"] is None else float(training["clip_norm"]),
    )
    return RunConfig(
        seed=int(merged["seed"]),
        out_dir=Path(merged["out_dir"]),
        paths=dict(merged.get("paths") or {}),
        scenario_preset=preset_name,
        scenario_path=None if scenario.get("path") is None else Path(scenario["path"]),
        scenario_overrides=dict(scenario.get("overrides") or {}),
        tau_iou=float(fusion["tau_iou"]),
        min_support=float(fusion["min_support"]),
        motion_mode=motion,
        n_p=int(tracker["n_p"]),
        association=association,
        noise=noise_config,
        lifecycle=lifecycle_params,
        training=train_config,
        dist_threshold=float(evaluation["dist_threshold"]),
        raw=merged,
    )
