"""
One-step Tikhonov reconstruction of conductivity changes from voltage differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .mesh import Mesh

DEFAULT_LAMBDA_REL = 0.05
DEFAULT_NOSER_EXPONENT = 0.5
PRIORS = ("noser", "identity")


class ReconstructionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Reconstructor:
    """Precomputed reconstruction matrix ``Q`` (elements x patterns).

    ``lam`` is the absolute regularisation weight; ``prior_diag`` holds the
    diagonal of ``Gamma^T Gamma``.
    """

    Q: np.ndarray
    lam: float
    lambda_rel: float
    prior: str
    prior_diag: np.ndarray
    noser_exponent: float = DEFAULT_NOSER_EXPONENT
    jacobian: np.ndarray | None = None

    @property
    def n_elements(self) -> int:
        return self.Q.shape[0]

    @property
    def n_patterns(self) -> int:
        return self.Q.shape[1]

    def normal_equation_residual(self) -> float:
        """``||(J^T J + lam^2 G^T G) Q - J^T|| / ||J^T||`` (Frobenius)."""
        if self.jacobian is None:
            raise ReconstructionError("reconstructor was built without keeping its Jacobian")
        J = self.jacobian
        lhs = J.T @ (J @ self.Q) + self.lam ** 2 * self.prior_diag[:, None] * self.Q
        return float(np.linalg.norm(lhs - J.T) / np.linalg.norm(J))


def build_reconstructor(J, lambda_rel: float = DEFAULT_LAMBDA_REL, prior: str = "noser",
                        noser_exponent: float = DEFAULT_NOSER_EXPONENT,
                        keep_jacobian: bool = True) -> Reconstructor:
    """Solve ``(J^T J + lam^2 G^T G) Q = J^T`` by Cholesky factorisation.

    For the NOSER prior ``G^T G = diag(J^T J) ** noser_exponent``. With point
    electrodes an exponent of 1 lets weakly sensed corner elements soak up
    the image, so 0.5 is the default.

    ``lam^2 = lambda_rel^2 * mean(diag(J^T J)) / mean(diag(G^T G))``, which makes
    ``lambda_rel`` independent of the units of ``J``.
    """
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.size == 0:
        raise ReconstructionError("Jacobian must be a non-empty matrix")
    if not lambda_rel > 0:
        raise ReconstructionError("lambda_rel must be positive")
    if prior not in PRIORS:
        raise ReconstructionError(f"unknown prior {prior!r}; expected one of {PRIORS}")

    JtJ = J.T @ J
    jd = np.diag(JtJ).copy()
    if prior == "noser":
        blind = np.flatnonzero(jd <= 0)
        if len(blind):
            raise ReconstructionError(f"element {int(blind[0])} has zero sensitivity; NOSER prior undefined")
        if not noser_exponent > 0:
            raise ReconstructionError("noser_exponent must be positive")
        gd = jd ** noser_exponent
    else:
        gd = np.ones(J.shape[1])
    lam2 = lambda_rel ** 2 * jd.mean() / gd.mean()
    A = JtJ
    A[np.diag_indices_from(A)] += lam2 * gd
    try:
        Q = cho_solve(cho_factor(A, lower=False, check_finite=False), J.T, check_finite=False)
    except LinAlgError as exc:
        raise ReconstructionError(f"regularised normal matrix is not positive definite: {exc}") from exc
    Q = np.ascontiguousarray(Q)
    Q.setflags(write=False)
    return Reconstructor(Q, float(np.sqrt(lam2)), float(lambda_rel), prior, gd,
                         float(noser_exponent), J if keep_jacobian else None)


def reconstruct(rec: Reconstructor, dv) -> np.ndarray:
    """Conductivity-change image ``Q @ dv``; ``dv`` may also be frames x patterns."""
    dv = np.asarray(dv, dtype=float)
    if dv.shape[-1] != rec.n_patterns:
        raise ReconstructionError(f"voltage vector has {dv.shape[-1]} entries, reconstructor expects {rec.n_patterns}")
    if dv.ndim == 1:
        return rec.Q @ dv
    return dv @ rec.Q.T


def eit_force_estimate(image, mesh: Mesh, scale: float) -> float:
    """Force from the area-weighted spatial sum of an image."""
    return float(scale * np.dot(np.asarray(image, dtype=float), mesh.element_areas))


def calibrate_eit_scale(model, protocol, rec: Reconstructor, reference_contact, force_to_sigma: float,
                        exponent: float = 1.0, baseline=None) -> float:
    """Newtons per unit image sum, from one noise-free reference contact (unit gain)."""
    from .forward import ForwardSolver
    from .phantom import contact_to_perturbation

    if reference_contact.force <= 0:
        raise ReconstructionError("reference contact must carry a positive force")
    if baseline is None:
        baseline = ForwardSolver(model)
    ds = contact_to_perturbation(model.mesh, reference_contact, None, model.baseline, force_to_sigma, exponent)
    dv = ForwardSolver(model, model.baseline + ds).measure(protocol) - baseline.measure(protocol)
    total = eit_force_estimate(reconstruct(rec, dv), model.mesh, 1.0)
    if total <= 0:
        raise ReconstructionError("reference reconstruction has a non-positive spatial sum")
    return reference_contact.force / total
