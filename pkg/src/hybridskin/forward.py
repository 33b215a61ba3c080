"""
Linear-triangle FEM forward model for a conductive sheet with point electrodes.

Conductivity is piecewise constant per element (sheet conductance, S/sq).
Current is injected at electrode nodes; the potential gauge is fixed by
pinning the node of electrode 0 to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import ElectrodeSet, Mesh, PadLayout

DEFAULT_CURRENT = 1e-3


class ForwardError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SensorModel:
    mesh: Mesh
    electrodes: ElectrodeSet
    pads: PadLayout
    baseline: float = 1.0

    @property
    def reference_node(self) -> int:
        return int(self.electrodes.node_indices[0])

    def baseline_field(self) -> np.ndarray:
        return np.full(self.mesh.n_elements, float(self.baseline))


@dataclass(frozen=True, eq=False)
class MeasurementProtocol:
    """Rows of ``patterns`` are ``(inject_pos, inject_neg, meas_pos, meas_neg)``."""

    patterns: np.ndarray
    current: float = DEFAULT_CURRENT

    def __post_init__(self):
        pat = np.asarray(self.patterns, dtype=np.int64).reshape(-1, 4)
        if len(pat) == 0:
            raise ValueError("protocol has no patterns")
        if np.any(pat[:, 0] == pat[:, 1]) or np.any(pat[:, 2] == pat[:, 3]):
            raise ValueError("a pattern uses the same electrode for both poles")
        clash = (pat[:, 2:, None] == pat[:, None, :2]).any(axis=(1, 2))
        if np.any(clash):
            raise ValueError(f"pattern {int(np.flatnonzero(clash)[0])} measures on an injection electrode")
        if len(np.unique(pat, axis=0)) != len(pat):
            raise ValueError("protocol contains duplicate patterns")
        pat.setflags(write=False)
        object.__setattr__(self, "patterns", pat)

    def __len__(self):
        return len(self.patterns)

    def injection_pairs(self) -> np.ndarray:
        return np.unique(self.patterns[:, :2], axis=0)

    def max_electrode(self) -> int:
        return int(self.patterns.max())


def element_gradients(mesh: Mesh) -> np.ndarray:
    """Gradients of the three P1 basis functions, shape ``(n_elements, 3, 2)``."""
    p = mesh.nodes[mesh.elements]
    x, y = p[..., 0], p[..., 1]
    # cyclic (i, j, k): grad phi_i = [y_j - y_k, x_k - x_j] / (2A)
    dy = np.roll(y, -1, axis=1) - np.roll(y, -2, axis=1)
    dx = np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)
    two_a = 2.0 * mesh.element_areas[:, None]
    return np.stack([dy / two_a, dx / two_a], axis=-1)


def local_stiffness(mesh: Mesh) -> np.ndarray:
    """Unit-conductivity element matrices ``A_e * G_e G_e^T``, shape ``(ne, 3, 3)``."""
    g = element_gradients(mesh)
    return mesh.element_areas[:, None, None] * np.einsum("eid,ejd->eij", g, g)


def _check_field(mesh: Mesh, sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (mesh.n_elements,):
        raise ValueError(f"conductivity has {sigma.size} values, mesh has {mesh.n_elements} elements")
    if not np.all(sigma > 0):
        raise ValueError("conductivity must be strictly positive")
    return sigma


def assemble_stiffness(mesh: Mesh, sigma) -> sp.csr_matrix:
    """Global Neumann stiffness matrix ``K = sum_e sigma_e * K_e``."""
    sigma = _check_field(mesh, sigma)
    ke = local_stiffness(mesh) * sigma[:, None, None]
    # symmetrise each block so K is bitwise symmetric after summation
    ke = 0.5 * (ke + ke.transpose(0, 2, 1))
    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    n = mesh.n_nodes
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return K


class _PinnedFactor:
    """LU factor of ``K`` with one node removed (Dirichlet gauge)."""

    def __init__(self, K: sp.spmatrix, reference_node: int):
        n = K.shape[0]
        self.n = n
        self.reference_node = reference_node
        self.keep = np.delete(np.arange(n), reference_node)
        Kr = sp.csc_matrix(K)[self.keep][:, self.keep]
        try:
            self.lu = splu(sp.csc_matrix(Kr), permc_spec="MMD_AT_PLUS_A",
                           diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise ForwardError(f"stiffness matrix is singular ({exc}); is the mesh connected?") from exc
        diag = self.lu.U.diagonal()
        if np.any(np.abs(diag) <= 1e-13 * np.abs(diag).max()):
            raise ForwardError("stiffness matrix is singular; is the mesh connected?")

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        out = np.zeros((self.n,) + b.shape[1:])
        out[self.keep] = self.lu.solve(np.ascontiguousarray(b[self.keep]))
        return out


def solve_potentials(K, pos: int, neg: int, current: float, reference_node: int) -> np.ndarray:
    """Node potentials for ``+current`` at ``pos`` and ``-current`` at ``neg``."""
    if pos == neg:
        raise ValueError("injection poles must differ")
    b = np.zeros(K.shape[0])
    b[pos] += current
    b[neg] -= current
    return _PinnedFactor(K, reference_node).solve(b)


class ForwardSolver:
    """Factorised forward operator for one conductivity field.

    Potentials for each electrode pair are computed once at unit current and
    cached; measurements and Jacobians are assembled from the cache.
    """

    def __init__(self, model: SensorModel, sigma=None):
        self.model = model
        self.sigma = _check_field(model.mesh, model.baseline_field() if sigma is None else sigma)
        self.K = assemble_stiffness(model.mesh, self.sigma)
        self._factor = _PinnedFactor(self.K, model.reference_node)
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def pair_potentials(self, pairs) -> np.ndarray:
        """Unit-current potentials for electrode ``pairs``, shape ``(n_nodes, len(pairs))``."""
        pairs = [tuple(int(v) for v in p) for p in np.asarray(pairs).reshape(-1, 2)]
        missing = sorted({p for p in pairs if p not in self._cache})
        if missing:
            nodes = self.model.electrodes.node_indices
            if max(max(p) for p in missing) >= len(nodes):
                raise ValueError("protocol references an electrode that does not exist")
            b = np.zeros((self.K.shape[0], len(missing)))
            for col, (a, c) in enumerate(missing):
                b[nodes[a], col] += 1.0
                b[nodes[c], col] -= 1.0
            u = self._factor.solve(b)
            for col, p in enumerate(missing):
                self._cache[p] = u[:, col]
        return np.column_stack([self._cache[p] for p in pairs])

    def _pair_table(self, protocol: MeasurementProtocol):
        pat = protocol.patterns
        pairs, inv = np.unique(np.concatenate([pat[:, :2], pat[:, 2:]]), axis=0, return_inverse=True)
        inv = inv.ravel()
        return pairs, inv[: len(pat)], inv[len(pat):]

    def measure(self, protocol: MeasurementProtocol) -> np.ndarray:
        pairs, inj, _ = self._pair_table(protocol)
        u = self.pair_potentials(pairs) * protocol.current
        nodes = self.model.electrodes.node_indices
        pat = protocol.patterns
        return u[nodes[pat[:, 2]], inj] - u[nodes[pat[:, 3]], inj]

    def jacobian(self, protocol: MeasurementProtocol) -> np.ndarray:
        """``J[m, k] = -I * int_k grad(u_drive) . grad(w_meas)`` (rows: patterns)."""
        mesh = self.model.mesh
        pairs, inj, meas = self._pair_table(protocol)
        w = self.pair_potentials(pairs)
        g = element_gradients(mesh)
        # gradients of each pair's potential on every element: (ne, npairs, 2)
        grad = np.einsum("eid,eip->epd", g, w[mesh.elements])
        gd = grad[:, inj]
        gm = grad[:, meas]
        J = -(gd[..., 0] * gm[..., 0] + gd[..., 1] * gm[..., 1]) * mesh.element_areas[:, None]
        return np.ascontiguousarray(J.T) * protocol.current


def simulate_measurements(model: SensorModel, sigma, protocol: MeasurementProtocol) -> np.ndarray:
    """Electrode voltages ``u[meas_pos] - u[meas_neg]`` for every pattern."""
    return ForwardSolver(model, sigma).measure(protocol)


def compute_jacobian(model: SensorModel, sigma, protocol: MeasurementProtocol) -> np.ndarray:
    return ForwardSolver(model, sigma).jacobian(protocol)


def adjacent_pairs(rows: int, cols: int) -> list[tuple[int, int]]:
    """Horizontally and vertically adjacent electrode pairs of a row-major grid."""
    pairs = []
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            if c + 1 < cols:
                pairs.append((k, k + 1))
            if r + 1 < rows:
                pairs.append((k, k + cols))
    return pairs


def default_protocol(electrodes: ElectrodeSet, current: float = DEFAULT_CURRENT) -> MeasurementProtocol:
    """Adjacent-drive / adjacent-measure scheme on a grid electrode set.

    Every adjacent pair drives once; for each drive every adjacent pair that
    shares no electrode with it is measured.
    """
    if electrodes.rows is None or electrodes.cols is None:
        raise ValueError("default protocol needs a grid electrode set")
    pairs = adjacent_pairs(electrodes.rows, electrodes.cols)
    patterns = [(a, b, c, d) for a, b in pairs for c, d in pairs if not {a, b} & {c, d}]
    return MeasurementProtocol(np.array(patterns, dtype=np.int64), current)
