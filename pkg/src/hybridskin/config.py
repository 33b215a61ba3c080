"""
Experiment configuration read from a ``key = value`` text file.

Every key is optional; missing keys take the defaults below. Lists are
comma separated. ``#`` starts a comment.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .fusion import PadCalibration
from .inverse import PRIORS
from .phantom import SimConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # geometry
    width_mm: float = 200.0
    height_mm: float = 200.0
    mesh_pitch_mm: float = 5.0
    electrode_rows: int = 5
    electrode_cols: int = 5
    electrode_margin_mm: float = 20.0
    pad_rows: int = 2
    pad_cols: int = 2
    pad_overlap_mm: float = 0.0
    # physics
    sigma0: float = 1.0
    current_a: float = 1e-3
    force_to_sigma: float = 0.025
    force_exponent: float = 1.0
    profile_sigma_mm: float = 10.0
    pad_gains_pa_per_n: tuple[float, ...] = (50.0, 50.0, 50.0, 50.0)
    gain_roughness: float = 0.3
    voltage_noise_rel: float = 1e-5
    pressure_noise_pa: float = 0.5
    # inverse
    lambda_rel: float = 0.05
    prior: str = "noser"
    noser_exponent: float = 0.5
    # indentation protocol
    grid_rows: int = 15
    grid_cols: int = 15
    peak_force_n: float = 20.0
    ramp_s: float = 0.5
    hold_s: float = 2.0
    lead_s: float = 0.2
    tail_s: float = 0.2
    frame_rate_hz: float = 100.0
    cutoff_hz: float = 20.0
    blank_s: float = 1.0
    calibration: str = "exact"
    localization_quantile: float = 0.25
    interior_margin_mm: float = 30.0
    seed: int = 0

    def validate(self) -> "ExperimentConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.width_mm > 0 and self.height_mm > 0, "width_mm and height_mm must be positive")
        need(0 < self.mesh_pitch_mm <= min(self.width_mm, self.height_mm), "mesh_pitch_mm out of range")
        need(self.electrode_rows >= 2 and self.electrode_cols >= 2, "electrode grid needs at least 2x2")
        need(self.electrode_margin_mm >= 0, "electrode_margin_mm must be non-negative")
        need(self.pad_rows >= 1 and self.pad_cols >= 1, "pad_rows and pad_cols must be at least 1")
        need(self.pad_overlap_mm >= 0, "pad_overlap_mm must be non-negative")
        need(self.sigma0 > 0, "sigma0 must be positive")
        need(self.current_a > 0, "current_a must be positive")
        need(self.force_to_sigma > 0, "force_to_sigma must be positive")
        need(self.force_exponent > 0, "force_exponent must be positive")
        need(self.profile_sigma_mm > 0, "profile_sigma_mm must be positive")
        need(len(self.pad_gains_pa_per_n) == self.pad_rows * self.pad_cols,
             "pad_gains_pa_per_n needs one entry per pad")
        need(all(g > 0 for g in self.pad_gains_pa_per_n), "pad gains must be positive")
        need(0 <= self.gain_roughness < 1, "gain_roughness must lie in [0, 1)")
        need(self.voltage_noise_rel >= 0 and self.pressure_noise_pa >= 0, "noise levels must be non-negative")
        need(self.lambda_rel > 0, "lambda_rel must be positive (got %g)" % self.lambda_rel)
        need(self.prior in PRIORS, f"prior must be one of {PRIORS}")
        need(self.noser_exponent > 0, "noser_exponent must be positive")
        need(self.grid_rows >= 1 and self.grid_cols >= 1, "indentation grid must be at least 1x1")
        need(self.peak_force_n > 0, "peak_force_n must be positive")
        need(self.ramp_s >= 0 and self.hold_s > 0, "ramp_s must be >= 0 and hold_s > 0")
        need(self.lead_s >= 0 and self.tail_s >= 0, "lead_s and tail_s must be non-negative")
        need(self.frame_rate_hz > 0, "frame_rate_hz must be positive")
        need(0 < self.cutoff_hz < self.frame_rate_hz / 2, "cutoff_hz must lie below the Nyquist frequency")
        need(self.blank_s > 0, "blank_s must be positive")
        need(self.calibration in ("exact", "fit"), "calibration must be 'exact' or 'fit'")
        need(0 < self.localization_quantile <= 1, "localization_quantile must lie in (0, 1]")
        need(self.interior_margin_mm >= 0, "interior_margin_mm must be non-negative")
        return self

    def sim_config(self) -> SimConfig:
        return SimConfig(frame_rate=self.frame_rate_hz, ramp_s=self.ramp_s, hold_s=self.hold_s,
                         lead_s=self.lead_s, tail_s=self.tail_s, force_to_sigma=self.force_to_sigma,
                         force_exponent=self.force_exponent, pad_gains=tuple(self.pad_gains_pa_per_n),
                         voltage_noise=self.voltage_noise_rel, pressure_noise=self.pressure_noise_pa)

    def exact_calibration(self) -> PadCalibration:
        return PadCalibration.exact(self.pad_gains_pa_per_n)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw).validate()


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _convert(name: str, raw: str):
    default = getattr(ExperimentConfig, name)
    if isinstance(default, tuple):
        return tuple(float(x) for x in raw.split(",") if x.strip())
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false"):
            raise ValueError(raw)
        return raw.lower() == "true"
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _convert(key, val)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value {val!r} for {key}") from None
    cfg = ExperimentConfig(**values)
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
