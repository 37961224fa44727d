"""Experiment configuration: typed schema, TOML loading and named profiles."""
from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .clutter import ClutterParams, Scene
from .detector import ALL_DETECTORS, DetectorSpec
from .robustness import ESTIMATORS

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ExperimentConfig",
    "SceneConfig",
    "DetectionConfig",
    "RobustnessConfig",
    "PROFILES",
    "load_config",
    "load_profile",
    "merge",
]

PROFILES = ("paper-gaussian", "paper-compound", "desk-gaussian", "desk-robustness")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SceneConfig(_Strict):
    n: int = Field(8, ge=2, description="vector dimension N")
    m: int = Field(8, ge=1, description="training cells per trial")
    clutter: Literal["gaussian", "compound"] = "gaussian"
    sigma_c_sq_db: float = 20.0
    rho: float = Field(0.9, gt=0, lt=1)
    f_c: float = 0.2
    alpha: float = Field(4.0, gt=0)
    beta: float = Field(3.0, gt=0)
    f_d: float = 0.2
    f_i: float = 0.2
    n_interferences: int = Field(2, ge=0)
    icr_db: float = 20.0

    def build(self, m=None):
        params = ClutterParams(self.sigma_c_sq_db, self.rho, self.f_c, self.alpha, self.beta)
        return Scene(
            n=self.n, m=self.m if m is None else m, params=params, clutter=self.clutter,
            f_d=self.f_d, f_i=self.f_i,
            n_interferences=min(self.n_interferences, self.m if m is None else m),
            icr_db=self.icr_db,
        )


class DetectionConfig(_Strict):
    detectors: List[str] = Field(default_factory=lambda: [d.name for d in ALL_DETECTORS])
    pfa: float = 1e-2
    scr_grid_db: List[float] = Field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0, 25.0])
    trials: int = Field(500, ge=1)
    calibration_trials: Optional[int] = Field(None, ge=1, description="default ceil(100/pfa)")
    verification_trials: int = Field(10000, ge=1)

    @field_validator("detectors")
    @classmethod
    def _known_detectors(cls, v):
        if not v:
            raise ValueError("detector list is empty")
        names = [DetectorSpec.parse(name).name for name in v]
        if len(set(names)) != len(names):
            raise ValueError("duplicate detectors")
        return names

    @field_validator("pfa")
    @classmethod
    def _sensible_pfa(cls, v):
        if not 0 < v <= 0.5:
            raise ValueError(f"pfa must lie in (0, 0.5], got {v}")
        return v

    @field_validator("scr_grid_db")
    @classmethod
    def _non_empty_grid(cls, v):
        if not v:
            raise ValueError("SCR grid is empty")
        return v

    def specs(self):
        return [DetectorSpec.parse(name) for name in self.detectors]


class RobustnessConfig(_Strict):
    estimators: List[str] = Field(default_factory=lambda: list(ESTIMATORS))
    m: int = Field(20, ge=1)
    n_grid: List[int] = Field(default_factory=lambda: [2, 4, 6, 8, 10, 12])
    trials: int = Field(100, ge=1)
    scr_outlier_db: float = 40.0

    @field_validator("estimators")
    @classmethod
    def _known_estimators(cls, v):
        if not v:
            raise ValueError("estimator list is empty")
        bad = [e for e in v if e not in ESTIMATORS]
        if bad:
            raise ValueError(f"unknown estimators {bad}; expected a subset of {list(ESTIMATORS)}")
        return v

    @field_validator("n_grid")
    @classmethod
    def _positive_counts(cls, v):
        if not v or any(n < 1 for n in v):
            raise ValueError("n_grid must be a non-empty list of outlier counts >= 1")
        return v


class ExperimentConfig(_Strict):
    """Everything one run needs; serializes back to the same TOML schema."""

    description: str = ""
    seed: int = Field(0, ge=0, lt=2**64)
    output_path: str = "results"
    scene: SceneConfig = Field(default_factory=SceneConfig)
    detection: DetectionConfig = Field(default_factory=DetectionConfig)
    robustness: RobustnessConfig = Field(default_factory=RobustnessConfig)

    def is_paper_scale(self):
        d, r = self.detection, self.robustness
        return d.pfa < 1e-2 or d.trials > 500 or r.trials > 100 or r.m > 20


def merge(base, override):
    """Recursively overlay ``override`` on ``base`` (plain dicts)."""
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def _profile_data(name):
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; available: {', '.join(PROFILES)}")
    text = resources.files("tbdcfar").joinpath("profiles").joinpath(f"{name}.toml").read_text("utf-8")
    return tomllib.loads(text)


def load_profile(name):
    return ExperimentConfig.model_validate(_profile_data(name))


def load_config(path=None, profile=None, overrides=None):
    """Resolve a configuration from a profile, a TOML file and explicit overrides.

    Later sources win key by key.  Unknown keys anywhere raise a
    ``pydantic.ValidationError``.
    """
    data = _profile_data(profile) if profile else {}
    if path is not None:
        with open(Path(path), "rb") as fh:
            data = merge(data, tomllib.load(fh))
    if overrides:
        data = merge(data, overrides)
    return ExperimentConfig.model_validate(data)
