"""
Evaluation quantities: contact localisation, per-site force uniformity (CV)
and force RMSE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh

DEFAULT_QUANTILE = 0.25
NO_CONTACT_REL = 1e-6


@dataclass(frozen=True)
class LocalizationResult:
    true_center: tuple[float, float]
    estimated_center: tuple[float, float] | None

    @property
    def error(self) -> float:
        if self.estimated_center is None:
            return float("nan")
        return float(np.hypot(self.estimated_center[0] - self.true_center[0],
                              self.estimated_center[1] - self.true_center[1]))


@dataclass(frozen=True, eq=False)
class SensitivityReport:
    """Force uniformity across sites. ``std`` is the population standard deviation."""

    per_location_estimates: np.ndarray
    true_force: float
    mean: float
    std: float
    cv: float

    @property
    def ratios(self) -> np.ndarray:
        return self.per_location_estimates / self.true_force


def localize(values, mesh: Mesh, quantile: float = DEFAULT_QUANTILE, reference_max: float | None = None):
    """Weighted centroid of the top ``quantile`` of positive values.

    Returns ``None`` when there is no contact: no positive value, or a maximum
    at or below ``NO_CONTACT_REL * reference_max`` when a reference is given.
    """
    if not 0 < quantile <= 1:
        raise ValueError("quantile must lie in (0, 1]")
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_elements,):
        raise ValueError("map does not match the mesh")
    vmax = values.max(initial=0.0)
    if vmax <= 0 or (reference_max is not None and vmax <= NO_CONTACT_REL * reference_max):
        return None
    positive = values[values > 0]
    threshold = np.quantile(positive, 1.0 - quantile)
    sel = values >= threshold
    w = values[sel] * mesh.element_areas[sel]
    c = (mesh.element_centroids[sel] * w[:, None]).sum(axis=0) / w.sum()
    return float(c[0]), float(c[1])


def localization_result(values, mesh: Mesh, true_center, **kwargs) -> LocalizationResult:
    est = localize(values, mesh, **kwargs)
    return LocalizationResult((float(true_center[0]), float(true_center[1])), est)


def sensitivity_cv(estimates, true_force: float) -> SensitivityReport:
    est = np.asarray(estimates, dtype=float)
    if est.size < 2:
        raise ValueError("coefficient of variation needs at least two sites")
    if not true_force > 0:
        raise ValueError("true force must be positive")
    mean = float(est.mean())
    if not mean > 0:
        raise ValueError("mean estimate is not positive; CV is undefined")
    std = float(est.std())
    return SensitivityReport(est, float(true_force), mean, std, std / mean)


def force_rmse(estimates, truths) -> float:
    e = np.asarray(estimates, dtype=float)
    t = np.asarray(truths, dtype=float)
    if e.shape != t.shape or e.size == 0:
        raise ValueError("estimates and truths must have equal, non-zero length")
    return float(np.sqrt(np.mean((e - t) ** 2)))
