"""Scenario files: schema, validation, bundled presets and digests.

A scenario is a YAML mapping. Unknown keys are rejected, omitted keys take the
defaults below, and :func:`load_scenario` returns the fully populated model.
"""

from __future__ import annotations

import hashlib
import json
import math
from importlib import resources
from pathlib import Path
from typing import Literal

import pydantic
import yaml
from pydantic import ConfigDict, Field, model_validator

from .errors import ScenarioParseError, ScenarioValidationError, UnknownKey
from .optics import ChannelSpec, DetectorSpec, SourceSpec, SwitchSchedule, _Spec
from .security import KeyRateParams

PRESETS = ("table1_4qnu", "ideal_single", "high_loss")
GIB = 1 << 30


class Impairments(_Spec):
    lo_drift_amplitude: float = Field(0.0, ge=0.0, lt=1.0, description="relative LO power swing")
    lo_drift_period_frames: float = Field(2000.0, gt=0.0, description="slots per LO power cycle")
    phase_drift_std_rad: float = Field(0.0, ge=0.0, description="random-walk step per phase block")
    initial_phase_rad: float = 0.0
    max_offset_samples: int = Field(0, ge=0, description="largest QLT/QNU misalignment")


class DspSettings(_Spec):
    oversample: int = Field(1, ge=1)
    filter_taps: int = Field(0, ge=0, description="0 disables the low-pass stage")
    filter_cutoff: float = Field(0.45, gt=0.0, lt=0.5, description="fraction of the symbol rate")
    sync_threshold: float | None = Field(None, gt=0.0, lt=1.0)
    sync_segment: int = Field(1 << 16, ge=256)
    predictor: Literal["hold", "window_linear"] = "window_linear"
    predictor_window: int = Field(8, ge=1)
    revealed_fraction: float = Field(0.5, gt=0.0, le=1.0)
    phase_block_samples: int = Field(40000, ge=200)
    phase_compensation: bool = True
    calibration_before: int = Field(10, ge=1)
    calibration_after: int = Field(10, ge=1)
    electronic_noise_mode: Literal["included", "subtract"] = "included"

    @model_validator(mode="after")
    def _taps_odd(self):
        if self.filter_taps and self.filter_taps % 2 == 0:
            raise ValueError("filter_taps must be odd (or 0)")
        if self.revealed_fraction * self.phase_block_samples < 100:
            raise ValueError("revealed part of a phase block must hold at least 100 samples")
        return self


class KeyRateSettings(_Spec):
    f_hz: float = Field(4e9, gt=0.0)
    fer: float = Field(0.0, ge=0.0, le=1.0)
    beta: float = Field(0.96, gt=0.0, le=1.0)
    trusted_detector: bool = True


class FrameSettings(_Spec):
    count: int = Field(100, ge=1, description="signal frames")
    samples: int = Field(400_000, ge=1000, description="symbols per frame")
    estimation_group: int = Field(25, ge=1)
    splice_group: int = Field(100, ge=1)


class ScenarioConfig(_Spec):
    model_config = ConfigDict(frozen=True, extra="forbid", ser_json_inf_nan="strings")

    format_version: Literal[1] = 1
    name: str = ""
    seed: int = Field(0, ge=0)
    source: SourceSpec
    qlt_detector: DetectorSpec
    qnu_detector: DetectorSpec
    fanout: int = Field(ge=1)
    channels: tuple[ChannelSpec, ...]
    switch: SwitchSchedule = SwitchSchedule()
    impairments: Impairments = Impairments()
    dsp: DspSettings = DspSettings()
    keyrate: KeyRateSettings = KeyRateSettings()
    frames: FrameSettings = FrameSettings()
    memory_budget_bytes: int = Field(4 * GIB, gt=0)

    @model_validator(mode="after")
    def _network(self):
        if self.fanout & (self.fanout - 1):
            raise ValueError("fanout must be a power of two")
        if len(self.channels) != self.fanout:
            raise ScenarioValidationError(
                "channels", f"{len(self.channels)} channels given for fanout {self.fanout}"
            )
        for i, ch in enumerate(self.channels):
            if ch.transmittance * self.fanout > 1.0 + 1e-12:
                raise ScenarioValidationError(
                    f"channels[{i}].transmittance_db",
                    f"{ch.transmittance_db} dB exceeds the {-10 * math.log10(self.fanout):.2f} dB splitter limit",
                )
        if self.impairments.max_offset_samples >= self.frames.samples // 4:
            raise ScenarioValidationError("impairments.max_offset_samples", "must be < frames.samples / 4")
        if self.working_set_bytes() > self.memory_budget_bytes:
            raise ScenarioValidationError(
                "frames.samples",
                f"working set {self.working_set_bytes()} B exceeds memory budget {self.memory_budget_bytes} B",
            )
        return self

    def working_set_bytes(self) -> int:
        """Peak frame memory of the streaming pipeline (pending frames awaiting calibration)."""
        per_frame = 16 * (self.fanout + 1) * self.raw_frame_length
        return per_frame * (self.dsp.calibration_after + 2) * 3

    @property
    def raw_frame_length(self) -> int:
        """Recorded samples per frame, including the sync margin and oversampling."""
        return (self.frames.samples + 2 * self.impairments.max_offset_samples) * self.dsp.oversample

    def keyrate_params(self) -> KeyRateParams:
        return KeyRateParams(detector=self.qnu_detector, **self.keyrate.model_dump())

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def digest(self) -> str:
        return scenario_digest(self)

    def with_updates(self, updates: dict) -> "ScenarioConfig":
        """Revalidated copy with nested ``updates`` merged in."""
        data = _deep_merge(self.to_dict(), updates)
        return validate_scenario(data)


def _deep_merge(base: dict, updates: dict) -> dict:
    out = dict(base)
    for k, v in updates.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def scenario_digest(config: ScenarioConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _loc(loc) -> str:
    out = ""
    for part in loc:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def validate_scenario(data) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ScenarioParseError(f"scenario must be a mapping, got {type(data).__name__}")
    try:
        return ScenarioConfig.model_validate(data)
    except pydantic.ValidationError as exc:
        err = exc.errors()[0]
        cause = err.get("ctx", {}).get("error")
        if isinstance(cause, ScenarioValidationError):
            raise type(cause)(cause.field, cause.constraint) from None
        field = _loc(err["loc"])
        if err["type"] == "extra_forbidden":
            raise UnknownKey(field, "unknown key") from None
        raise ScenarioValidationError(field, err["msg"]) from None


def preset_path(name: str) -> Path:
    ref = resources.files("psp_qpon") / "presets" / f"{name}.yaml"
    return Path(str(ref))


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load and validate a scenario file or a bundled preset name."""
    p = Path(path)
    if not p.exists() and str(path) in PRESETS:
        p = preset_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise ScenarioParseError(f"{path}: {getattr(exc, 'problem', None) or exc}", line, col) from None
    if data is None:
        raise ScenarioParseError(f"{path}: scenario file is empty")
    return validate_scenario(data)


def dump_scenario(config: ScenarioConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
