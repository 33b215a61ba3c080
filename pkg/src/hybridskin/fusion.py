"""
EIT-pneumatic fusion: pad forces from pressures, redistributed over each pad
in proportion to the non-negative part of the reconstructed image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import PadLayout
from .phantom import IndentationRecord, PneumaticFrame

DEFAULT_FORCE_FLOOR = 0.05
DEAD_ZONE_REL = 1e-9
MIN_RECORDS_PER_PAD = 3


class CalibrationError(ValueError):
    """Raised when some pads lack enough records; ``pads`` lists them."""

    def __init__(self, message, pads=()):
        super().__init__(message)
        self.pads = tuple(pads)


@dataclass(frozen=True, eq=False)
class PadCalibration:
    gains: np.ndarray          # N per Pa
    fit_residuals: np.ndarray  # RMS, N

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=float)
        if gains.ndim != 1 or np.any(gains <= 0):
            raise ValueError("calibration gains must be positive, one per pad")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "fit_residuals", np.asarray(self.fit_residuals, dtype=float))

    @classmethod
    def exact(cls, pad_gains_pa_per_n) -> "PadCalibration":
        """Calibration that inverts known pad gains (Pa/N) exactly."""
        g = np.asarray(pad_gains_pa_per_n, dtype=float)
        return cls(1.0 / g, np.zeros(len(g)))

    @property
    def pad_count(self) -> int:
        return len(self.gains)


@dataclass(frozen=True, eq=False)
class ForceMap:
    """Per-element force (N). ``pad_values[i]`` is pad ``i``'s contribution.

    ``pad_forces`` are the pneumatic estimates; ``total_per_pad`` is what was
    actually placed on the map (zero where a sub-floor force met a blank image).
    """

    values: np.ndarray
    pad_values: np.ndarray
    total_per_pad: np.ndarray
    degenerate: np.ndarray
    pad_forces: np.ndarray

    @property
    def total(self) -> float:
        return float(self.total_per_pad.sum())


def fit_pad_calibration(records: list[IndentationRecord], layout: PadLayout,
                        min_records: int = MIN_RECORDS_PER_PAD) -> PadCalibration:
    """Through-origin least-squares force-per-pressure slope for every pad.

    Each record is assigned to the pad containing its contact centre; only its
    hold-phase frames are used.
    """
    n_pad = layout.pad_count
    p_by_pad = [[] for _ in range(n_pad)]
    f_by_pad = [[] for _ in range(n_pad)]
    counts = np.zeros(n_pad, dtype=int)
    for rec in records:
        if rec.contact is None:
            continue
        pad = layout.pad_of_point(rec.contact.center)
        hold = rec.hold_mask()
        if not hold.any():
            continue
        counts[pad] += 1
        p_by_pad[pad].append(rec.pressures[hold, pad])
        f_by_pad[pad].append(rec.force[hold])
    missing = [i for i in range(n_pad) if counts[i] < min_records]
    if missing:
        raise CalibrationError(f"pads {missing} have fewer than {min_records} calibration records", missing)

    gains = np.empty(n_pad)
    resid = np.empty(n_pad)
    for i in range(n_pad):
        p = np.concatenate(p_by_pad[i])
        f = np.concatenate(f_by_pad[i])
        denom = np.dot(p, p)
        if denom <= 0:
            raise CalibrationError(f"pad {i} saw no pressure change", [i])
        gains[i] = np.dot(p, f) / denom
        resid[i] = np.sqrt(np.mean((f - gains[i] * p) ** 2))
    return PadCalibration(gains, resid)


def pad_force(frame: PneumaticFrame, cal: PadCalibration) -> np.ndarray:
    """Per-pad force estimate; suction (negative force) is clamped to zero."""
    p = np.asarray(frame.pressures if isinstance(frame, PneumaticFrame) else frame, dtype=float)
    if p.shape != cal.gains.shape:
        raise ValueError(f"frame has {p.size} pads, calibration has {cal.pad_count}")
    return np.maximum(cal.gains * p, 0.0)


def mask_image(image, layout: PadLayout, pad: int) -> np.ndarray:
    if not 0 <= pad < layout.pad_count:
        raise IndexError(f"pad {pad} out of range")
    return np.maximum(layout.masks[pad] * np.asarray(image, dtype=float), 0.0)


def redistribute(masked, force: float, footprint=None, dead_zone: float = 0.0,
                 force_floor: float = DEFAULT_FORCE_FLOOR):
    """Spread ``force`` over the elements in proportion to ``masked``.

    Returns ``(values, degenerate)``. When the masked image sums to at most
    ``dead_zone`` the force goes out in proportion to ``footprint`` (uniform if
    omitted) and ``degenerate`` is True; forces at or below ``force_floor`` are
    then dropped instead.
    """
    masked = np.asarray(masked, dtype=float)
    if force < 0:
        raise ValueError("pad force must be non-negative")
    if force == 0:
        return np.zeros_like(masked), False
    total = masked.sum()
    if total > dead_zone and total > 0:
        return force * (masked / total), False
    if force <= force_floor:
        return np.zeros_like(masked), False
    w = np.ones_like(masked) if footprint is None else np.asarray(footprint, dtype=float)
    return force * (w / w.sum()), True


def fuse(image, frame: PneumaticFrame, layout: PadLayout, cal: PadCalibration, baseline: float = 1.0,
         force_floor: float = DEFAULT_FORCE_FLOOR) -> ForceMap:
    """Calibrated force map from one image and the matching pneumatic frame."""
    image = np.asarray(image, dtype=float)
    forces = pad_force(frame, cal)
    if len(forces) != layout.pad_count:
        raise ValueError("calibration and pad layout disagree on the pad count")
    pad_values = np.zeros((layout.pad_count, len(image)))
    degenerate = np.zeros(layout.pad_count, dtype=bool)
    placed = forces.copy()
    for i in range(layout.pad_count):
        if forces[i] == 0:
            continue
        footprint = layout.masks[i]
        dead_zone = DEAD_ZONE_REL * baseline * np.count_nonzero(footprint)
        pad_values[i], degenerate[i] = redistribute(mask_image(image, layout, i), forces[i], footprint,
                                                    dead_zone, force_floor)
        if not pad_values[i].any():
            placed[i] = 0.0
    return ForceMap(pad_values.sum(axis=0), pad_values, placed, degenerate, forces)
