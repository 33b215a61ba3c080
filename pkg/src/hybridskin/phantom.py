"""
Synthetic ground truth: Gaussian contacts, sensitivity gain fields, pneumatic
pad pressures and indentation time series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import filtfilt

from .forward import ForwardSolver, MeasurementProtocol, SensorModel
from .mesh import Mesh, PadLayout

DEFAULT_PROFILE_SIGMA = 10.0


@dataclass(frozen=True)
class ContactSpec:
    center: tuple[float, float]
    force: float
    profile_sigma: float = DEFAULT_PROFILE_SIGMA
    onset: float = 0.0
    release: float = math.inf

    def __post_init__(self):
        if self.force < 0:
            raise ValueError("contact force must be non-negative")
        if self.profile_sigma <= 0:
            raise ValueError("profile_sigma must be positive")
        if not self.onset < self.release:
            raise ValueError("contact onset must precede release")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def active(self, t: float) -> bool:
        return self.onset <= t < self.release


@dataclass(frozen=True, eq=False)
class GainField:
    gain: np.ndarray

    @classmethod
    def uniform(cls, n: int) -> "GainField":
        return cls(np.ones(n))


@dataclass(frozen=True)
class PneumaticFrame:
    timestamp: float
    pressures: np.ndarray


@dataclass(frozen=True)
class SimConfig:
    """Time-series settings for one indentation.

    ``voltage_noise`` is a fraction of the largest baseline voltage;
    ``pressure_noise`` is in Pa.
    """

    frame_rate: float = 100.0
    ramp_s: float = 0.5
    hold_s: float = 2.0
    lead_s: float = 0.2
    tail_s: float = 0.2
    force_to_sigma: float = 0.025
    force_exponent: float = 1.0
    pad_gains: tuple[float, ...] = (50.0, 50.0, 50.0, 50.0)
    voltage_noise: float = 1e-5
    pressure_noise: float = 0.0

    def noiseless(self) -> "SimConfig":
        return replace(self, voltage_noise=0.0, pressure_noise=0.0)


@dataclass(eq=False)
class IndentationRecord:
    """Synchronised streams on a shared time base.

    ``voltages`` holds one voltage-difference vector per frame (frames x
    patterns); ``pressures`` holds per-pad pressure deltas (frames x pads).
    """

    times: np.ndarray
    force: np.ndarray
    voltages: np.ndarray
    pressures: np.ndarray
    contact: ContactSpec | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.times)
        if not (len(self.force) == len(self.voltages) == len(self.pressures) == n):
            raise ValueError("record streams do not share a time base")

    def __len__(self):
        return len(self.times)

    def pneumatic_frame(self, n: int) -> PneumaticFrame:
        return PneumaticFrame(float(self.times[n]), self.pressures[n])

    def hold_mask(self, trim_s: float = 0.1) -> np.ndarray:
        """Frames at peak force, excluding ``trim_s`` at either end of the plateau."""
        if len(self) == 0 or self.force.max() <= 0:
            return np.zeros(len(self), dtype=bool)
        at_peak = self.force >= self.force.max() * (1 - 1e-12)
        idx = np.flatnonzero(at_peak)
        t0, t1 = self.times[idx[0]] + trim_s, self.times[idx[-1]] - trim_s
        trimmed = at_peak & (self.times >= t0 - 1e-12) & (self.times <= t1 + 1e-12)
        return trimmed if trimmed.any() else at_peak


def gaussian_profile(mesh: Mesh, center, profile_sigma: float) -> np.ndarray:
    d2 = np.sum((mesh.element_centroids - np.asarray(center, dtype=float)) ** 2, axis=1)
    return np.exp(-d2 / (2.0 * profile_sigma ** 2))


def contact_amplitude(force: float, force_to_sigma: float, baseline: float, exponent: float = 1.0) -> float:
    """Peak conductivity change for ``force``, saturating at ``baseline``."""
    return float(np.clip(force_to_sigma * force ** exponent, 0.0, baseline))


def contact_to_perturbation(mesh: Mesh, contact: ContactSpec, gain: GainField | None, baseline: float,
                            force_to_sigma: float, exponent: float = 1.0) -> np.ndarray:
    """Per-element conductivity increase produced by one contact.

    The result never exceeds ``baseline`` anywhere, whatever the gain.
    """
    if not mesh.contains(contact.center):
        raise ValueError(f"contact center {contact.center} lies outside the domain")
    if force_to_sigma <= 0:
        raise ValueError("force_to_sigma must be positive")
    amp = contact_amplitude(contact.force, force_to_sigma, baseline, exponent)
    ds = amp * gaussian_profile(mesh, contact.center, contact.profile_sigma)
    if gain is not None:
        ds = ds * gain.gain
    return np.minimum(ds, baseline)


def training_centers(width: float, height: float, spacing: float) -> np.ndarray:
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    xs = np.arange(0.0, width + 1e-9 * width, spacing)
    ys = np.arange(0.0, height + 1e-9 * height, spacing)
    return np.array([(x, y) for y in ys for x in xs])


def sample_training_grid(mesh: Mesh, spacing: float, amplitudes, profile_sigma: float = DEFAULT_PROFILE_SIGMA):
    """Gaussian perturbations on a regular grid of centers (row-major, amplitude-minor).

    Returns a list of ``(delta_sigma, {"center": ..., "amplitude": ...})``.
    """
    out = []
    for center in training_centers(mesh.width, mesh.height, spacing):
        prof = gaussian_profile(mesh, center, profile_sigma)
        for amp in amplitudes:
            out.append((amp * prof, {"center": (float(center[0]), float(center[1])), "amplitude": float(amp)}))
    return out


def make_gain_field(mesh: Mesh, roughness: float, seed: int, lattice: float = 25.0) -> GainField:
    """Smooth log-normal gain field with unit mean.

    Value noise on a ``lattice``-mm grid is bilinearly interpolated to the
    element centroids and scaled so the log-gain has standard deviation
    ``roughness``.
    """
    if not 0.0 <= roughness < 1.0:
        raise ValueError("roughness must lie in [0, 1)")
    n = mesh.n_elements
    if roughness == 0:
        return GainField.uniform(n)
    rng = np.random.default_rng(seed)
    nx = int(np.ceil(mesh.width / lattice)) + 1
    ny = int(np.ceil(mesh.height / lattice)) + 1
    values = rng.standard_normal((ny, nx))
    fx = mesh.element_centroids[:, 0] / lattice
    fy = mesh.element_centroids[:, 1] / lattice
    i0 = np.minimum(np.floor(fx).astype(int), nx - 2)
    j0 = np.minimum(np.floor(fy).astype(int), ny - 2)
    tx, ty = fx - i0, fy - j0
    g = ((1 - tx) * (1 - ty) * values[j0, i0] + tx * (1 - ty) * values[j0, i0 + 1]
         + (1 - tx) * ty * values[j0 + 1, i0] + tx * ty * values[j0 + 1, i0 + 1])
    g = g - g.mean()
    g = g * (roughness / g.std())
    gain = np.exp(g)
    return GainField(gain / gain.mean())


def pad_shares(layout: PadLayout, mesh: Mesh, contact: ContactSpec) -> np.ndarray:
    """Fraction of the contact's Gaussian footprint carried by each pad."""
    w = gaussian_profile(mesh, contact.center, contact.profile_sigma) * mesh.element_areas
    total = w.sum()
    if total <= 0:
        return np.zeros(layout.pad_count)
    return (layout.masks @ w) / total


def pneumatic_response(layout: PadLayout, mesh: Mesh, contacts, pad_gains, t: float,
                       noise_std: float = 0.0, rng: np.random.Generator | None = None) -> PneumaticFrame:
    """Pad pressure deltas (Pa) at time ``t`` from all active contacts."""
    gains = np.asarray(pad_gains, dtype=float)
    if gains.shape != (layout.pad_count,) or np.any(gains <= 0):
        raise ValueError("need one positive gain per pad")
    pressures = np.zeros(layout.pad_count)
    for c in contacts:
        if c.active(t):
            # per-contact terms are summed last so superposition is exact
            pressures = pressures + gains * (c.force * pad_shares(layout, mesh, c))
    if noise_std > 0:
        if rng is None:
            raise ValueError("noise requires an explicit random generator")
        pressures = pressures + rng.normal(0.0, noise_std, layout.pad_count)
    return PneumaticFrame(float(t), pressures)


def indentation_contact(center, peak: float, config: SimConfig,
                        profile_sigma: float = DEFAULT_PROFILE_SIGMA) -> ContactSpec:
    """Contact timed by ``config``: ramp from ``lead_s``, hold, ramp down."""
    onset = config.lead_s
    release = onset + 2 * config.ramp_s + config.hold_s
    return ContactSpec(center, peak, profile_sigma, onset, release)


def frame_times(contact: ContactSpec, config: SimConfig) -> np.ndarray:
    n = int(round((contact.release + config.tail_s) * config.frame_rate)) + 1
    return np.arange(n) / config.frame_rate


def force_trace(times, contact: ContactSpec, ramp_s: float) -> np.ndarray:
    """Trapezoidal load: linear rise over ``ramp_s``, plateau, linear fall ending at release."""
    t = np.asarray(times, dtype=float)
    if ramp_s <= 0:
        return np.where((t >= contact.onset) & (t < contact.release), contact.force, 0.0)
    up = (t - contact.onset) / ramp_s
    down = (contact.release - t) / ramp_s
    # rounding keeps frames that land on a ramp end exactly on the plateau
    shape = np.clip(np.round(np.minimum(up, down), 12), 0.0, 1.0)
    return contact.force * shape


def run_indentation(model: SensorModel, protocol: MeasurementProtocol, contact: ContactSpec,
                    gain: GainField | None, config: SimConfig, rng: np.random.Generator | None = None,
                    baseline: ForwardSolver | None = None) -> IndentationRecord:
    """Simulate one indentation at the configured frame rate.

    Voltages are differences against the unloaded baseline; frames sharing a
    force level share one forward solve.
    """
    if len(config.pad_gains) != model.pads.pad_count:
        raise ValueError("pad_gains must have one entry per pad")
    if baseline is None:
        baseline = ForwardSolver(model)
    v0 = baseline.measure(protocol)
    times = frame_times(contact, config)
    force = force_trace(times, contact, config.ramp_s)

    n, m = len(times), len(protocol)
    dv = np.zeros((n, m))
    solved: dict[float, np.ndarray] = {}
    for k, f in enumerate(force):
        if f <= 0:
            continue
        # rising and falling ramps hit the same levels up to rounding
        key = round(float(f), 9)
        if key not in solved:
            ds = contact_to_perturbation(model.mesh, replace(contact, force=key), gain, model.baseline,
                                         config.force_to_sigma, config.force_exponent)
            solved[key] = ForwardSolver(model, model.baseline + ds).measure(protocol) - v0
        dv[k] = solved[key]

    shares = pad_shares(model.pads, model.mesh, contact)
    gains = np.asarray(config.pad_gains, dtype=float)
    pressures = np.array([np.zeros(len(gains)) + gains * (f * shares) for f in force]).reshape(n, -1)

    if config.voltage_noise > 0 or config.pressure_noise > 0:
        if rng is None:
            raise ValueError("noise requires an explicit random generator")
        if config.voltage_noise > 0:
            dv = dv + rng.normal(0.0, config.voltage_noise * np.abs(v0).max(), dv.shape)
        if config.pressure_noise > 0:
            pressures = pressures + rng.normal(0.0, config.pressure_noise, pressures.shape)

    return IndentationRecord(times, force, dv, pressures, contact,
                             {"frame_rate": config.frame_rate})


def blank_record(model: SensorModel, protocol: MeasurementProtocol, config: SimConfig,
                 duration_s: float = 1.0, rng: np.random.Generator | None = None,
                 baseline: ForwardSolver | None = None) -> IndentationRecord:
    """No-contact record carrying only measurement noise."""
    n = int(round(duration_s * config.frame_rate)) + 1
    times = np.arange(n) / config.frame_rate
    dv = np.zeros((n, len(protocol)))
    pressures = np.zeros((n, model.pads.pad_count))
    if config.voltage_noise > 0 or config.pressure_noise > 0:
        if rng is None:
            raise ValueError("noise requires an explicit random generator")
        if baseline is None:
            baseline = ForwardSolver(model)
        full_scale = np.abs(baseline.measure(protocol)).max()
        if config.voltage_noise > 0:
            dv = dv + rng.normal(0.0, config.voltage_noise * full_scale, dv.shape)
        if config.pressure_noise > 0:
            pressures = pressures + rng.normal(0.0, config.pressure_noise, pressures.shape)
    return IndentationRecord(times, np.zeros(n), dv, pressures, None, {"frame_rate": config.frame_rate})


def lowpass_coefficients(cutoff_hz: float, frame_rate: float):
    """Single-pole IIR ``y[n] = (1 - a) x[n] + a y[n-1]`` with ``a = exp(-2 pi fc / fs)``."""
    if cutoff_hz <= 0:
        raise ValueError("cutoff must be positive")
    if cutoff_hz >= frame_rate / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz is not below the Nyquist frequency {frame_rate / 2} Hz")
    a = math.exp(-2.0 * math.pi * cutoff_hz / frame_rate)
    return np.array([1.0 - a]), np.array([1.0, -a])


def zero_phase_lowpass(x, cutoff_hz: float, frame_rate: float) -> np.ndarray:
    """Forward-backward single-pole low-pass along axis 0."""
    b, a = lowpass_coefficients(cutoff_hz, frame_rate)
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return x.copy()
    return filtfilt(b, a, x, axis=0, padlen=min(3 * max(len(a), len(b)), len(x) - 1))


def preprocess(record: IndentationRecord, cutoff_hz: float, blank: IndentationRecord | None = None,
               frame_rate: float | None = None) -> IndentationRecord:
    """Low-pass every voltage and pressure channel, then remove the blank's channel means."""
    fs = frame_rate or record.meta.get("frame_rate")
    if fs is None:
        if len(record) < 2:
            raise ValueError("frame rate unknown")
        fs = 1.0 / float(np.median(np.diff(record.times)))
    lowpass_coefficients(cutoff_hz, fs)
    voltages = zero_phase_lowpass(record.voltages, cutoff_hz, fs)
    pressures = zero_phase_lowpass(record.pressures, cutoff_hz, fs)
    if blank is not None and len(blank) > 0:
        voltages = voltages - blank.voltages.mean(axis=0)
        pressures = pressures - blank.pressures.mean(axis=0)
    return IndentationRecord(record.times.copy(), record.force.copy(), voltages, pressures,
                             record.contact, dict(record.meta, frame_rate=fs))
