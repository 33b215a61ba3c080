"""
Structured triangular meshes, grid electrodes and pneumatic pad footprints.

All coordinates are in millimetres. The mesh is a regular grid of square
cells, each split into two counter-clockwise right triangles along the
lower-left to upper-right diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_ELEMENT_CAP = 200_000


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangular mesh of a rectangular sheet.

    ``nx``/``ny`` are the number of grid cells along x/y; element ``2*c`` and
    ``2*c + 1`` are the two triangles of cell ``c = j*nx + i``.
    """

    nodes: np.ndarray
    elements: np.ndarray
    width: float
    height: float
    nx: int
    ny: int
    element_areas: np.ndarray = field(init=False)
    element_centroids: np.ndarray = field(init=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        if elements.size and (elements.min() < 0 or elements.max() >= len(nodes)):
            raise MeshError("element references a node index that does not exist")
        p = nodes[elements]
        signed = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        if np.any(signed <= 0):
            bad = int(np.flatnonzero(signed <= 0)[0])
            raise MeshError(f"element {bad} has non-positive signed area")
        for name, arr in (("nodes", nodes), ("elements", elements)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        areas = signed
        centroids = p.mean(axis=1)
        areas.setflags(write=False)
        centroids.setflags(write=False)
        object.__setattr__(self, "element_areas", areas)
        object.__setattr__(self, "element_centroids", centroids)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def pitch(self) -> tuple[float, float]:
        return self.width / self.nx, self.height / self.ny

    def element_diameter(self) -> float:
        """Longest element edge (the cell diagonal)."""
        hx, hy = self.pitch
        return float(np.hypot(hx, hy))

    def contains(self, point) -> bool:
        x, y = point
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height

    def nearest_node(self, point) -> int:
        d2 = np.sum((self.nodes - np.asarray(point, dtype=float)) ** 2, axis=1)
        return int(np.argmin(d2))

    def is_connected(self) -> bool:
        """True when all elements form one component under shared edges."""
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        ne = self.n_elements
        if ne == 0:
            return False
        edges = np.sort(self.elements[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        owner = np.repeat(np.arange(ne), 3)
        key = edges[:, 0] * self.n_nodes + edges[:, 1]
        order = np.argsort(key, kind="stable")
        key, owner = key[order], owner[order]
        same = np.flatnonzero(key[1:] == key[:-1])
        a, b = owner[same], owner[same + 1]
        adj = coo_matrix((np.ones(len(a)), (a, b)), shape=(ne, ne))
        n_comp, _ = connected_components(adj, directed=False)
        return n_comp == 1


@dataclass(frozen=True, eq=False)
class ElectrodeSet:
    positions: np.ndarray
    node_indices: np.ndarray
    rows: int | None = None
    cols: int | None = None

    @property
    def count(self) -> int:
        return len(self.node_indices)

    def grid_index(self, r: int, c: int) -> int:
        return r * self.cols + c


@dataclass(frozen=True, eq=False)
class PadLayout:
    """Per-pad element weights ``masks`` (pads x elements) and rectangles.

    ``footprints[i]`` is ``(x0, y0, x1, y1)`` in mm.
    """

    masks: np.ndarray
    footprints: np.ndarray
    rows: int = 1
    cols: int = 1

    @property
    def pad_count(self) -> int:
        return len(self.masks)

    def element_pad(self) -> np.ndarray:
        """Index of the dominant pad of every element (ties go to the lower index)."""
        return np.argmax(self.masks, axis=0)

    def pad_of_point(self, point) -> int:
        x, y = point
        inside = [(x0 <= x <= x1 and y0 <= y <= y1) for x0, y0, x1, y1 in self.footprints]
        hits = np.flatnonzero(inside)
        if len(hits) == 0:
            raise ValueError(f"point {point} lies outside every pad footprint")
        return int(hits[0])


def build_rect_mesh(width, height, target_edge, *, max_elements=DEFAULT_ELEMENT_CAP) -> Mesh:
    """Build a structured right-triangle mesh over ``[0, width] x [0, height]``.

    The number of cells along each axis is the smallest one giving a node
    spacing no larger than ``target_edge``.
    """
    if width <= 0 or height <= 0:
        raise MeshError("mesh dimensions must be positive")
    if target_edge <= 0:
        raise MeshError("target_edge must be positive")
    if target_edge > min(width, height):
        raise MeshError("target_edge exceeds the domain size")
    nx = int(np.ceil(width / target_edge - 1e-9))
    ny = int(np.ceil(height / target_edge - 1e-9))
    n_el = 2 * nx * ny
    if n_el > max_elements:
        raise MeshError(f"mesh would have {n_el} elements, above the cap of {max_elements}")

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    n00 = (j * (nx + 1) + i).ravel()
    n10 = n00 + 1
    n01 = n00 + nx + 1
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    elements = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(nodes, elements, float(width), float(height), nx, ny)


def place_grid_electrodes(mesh: Mesh, rows: int, cols: int, margin: float) -> ElectrodeSet:
    """Place a ``rows x cols`` electrode grid inset by ``margin`` and snap to nodes."""
    if rows < 2 or cols < 2:
        raise MeshError("electrode grid needs at least 2 rows and 2 columns")
    if margin < 0 or 2 * margin >= min(mesh.width, mesh.height):
        raise MeshError("electrode margin does not leave room for the grid")
    xs = np.linspace(margin, mesh.width - margin, cols)
    ys = np.linspace(margin, mesh.height - margin, rows)
    positions = np.array([(x, y) for y in ys for x in xs])
    nodes = np.array([mesh.nearest_node(p) for p in positions], dtype=np.int64)
    if len(np.unique(nodes)) != len(nodes):
        raise MeshError("two electrodes snapped to the same mesh node; refine the mesh")
    dist = np.linalg.norm(mesh.nodes[nodes] - positions, axis=1)
    if np.any(dist > mesh.element_diameter()):
        raise MeshError("electrode snapped further than one element diameter away")
    positions.setflags(write=False)
    nodes.setflags(write=False)
    return ElectrodeSet(positions, nodes, rows, cols)


def _ramp(coord, seam, half_band):
    """Weight of the low side of a seam: 1 below the band, 0 above, linear inside."""
    if half_band == 0:
        return (coord < seam).astype(float)
    return np.clip((seam + half_band - coord) / (2 * half_band), 0.0, 1.0)


def build_pad_layout(mesh: Mesh, rows: int, cols: int, overlap: float = 0.0) -> PadLayout:
    """Tile the domain with ``rows x cols`` pads, numbered row-major from (0, 0).

    With ``overlap > 0`` each seam gets a blending band of that total width in
    which the weights ramp linearly; weights are renormalised per element.
    """
    if rows < 1 or cols < 1:
        raise MeshError("pad layout needs at least one row and column")
    px, py = mesh.width / cols, mesh.height / rows
    if overlap < 0 or overlap >= min(px, py):
        raise MeshError("overlap must be non-negative and smaller than the pad pitch")

    cx, cy = mesh.element_centroids[:, 0], mesh.element_centroids[:, 1]
    half = overlap / 2.0

    wx = _axis_partition(cx, cols, px, half)
    wy = _axis_partition(cy, rows, py, half)
    masks = np.array([wy[r] * wx[c] for r in range(rows) for c in range(cols)])
    total = masks.sum(axis=0)
    if np.any(total <= 0):
        raise MeshError("pad layout leaves elements uncovered")
    masks = masks / total
    if np.any(masks.max(axis=1) <= 0):
        raise MeshError("a pad covers no element")
    footprints = np.array([(c * px, r * py, (c + 1) * px, (r + 1) * py)
                           for r in range(rows) for c in range(cols)])
    masks.setflags(write=False)
    footprints.setflags(write=False)
    return PadLayout(masks, footprints, rows, cols)


def _axis_partition(coord, n, pitch, half):
    """1D partition of unity over ``n`` bands of width ``pitch``."""
    w = np.ones((n, len(coord)))
    for s in range(1, n):
        below = _ramp(coord, s * pitch, half)
        w[:s] *= below
        w[s:] *= 1.0 - below
    return w
