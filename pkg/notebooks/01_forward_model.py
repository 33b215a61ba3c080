"""
Forward model walkthrough
=========================

Mesh a 200 mm sheet, place the 5x5 electrode grid, simulate the baseline
voltages and build the sensitivity matrix.
"""

# %%
import numpy as np

from hybridskin.forward import ForwardSolver, SensorModel, default_protocol
from hybridskin.mesh import build_pad_layout, build_rect_mesh, place_grid_electrodes

mesh = build_rect_mesh(200, 200, 5)
electrodes = place_grid_electrodes(mesh, 5, 5, margin=20)
pads = build_pad_layout(mesh, 2, 2)
model = SensorModel(mesh, electrodes, pads, baseline=1.0)
print(f"{mesh.n_nodes} nodes, {mesh.n_elements} elements, total area {mesh.element_areas.sum():g} mm^2")
print("electrode nodes at", mesh.nodes[electrodes.node_indices][:5].tolist(), "...")

# %%
# adjacent drive, every disjoint adjacent measurement
protocol = default_protocol(electrodes)
print(len(protocol), "patterns, first:", protocol.patterns[0].tolist())

# %%
solver = ForwardSolver(model)
v0 = solver.measure(protocol)
print(f"baseline voltages span {v0.min():.3e} .. {v0.max():.3e} V")

# swapping drive and measurement pairs gives the same voltage
index = {tuple(p): i for i, p in enumerate(protocol.patterns.tolist())}
a, b, c, d = protocol.patterns[10]
print("reciprocity:", v0[10], v0[index[(c, d, a, b)]])

# %%
J = solver.jacobian(protocol)
print("Jacobian", J.shape)

# check one column against a central difference
k = 1640
eps = 1e-6
up, dn = np.ones(mesh.n_elements), np.ones(mesh.n_elements)
up[k] += eps
dn[k] -= eps
fd = (ForwardSolver(model, up).measure(protocol) - ForwardSolver(model, dn).measure(protocol)) / (2 * eps)
print("max relative FD mismatch:", np.abs(fd - J[:, k]).max() / np.abs(J[:, k]).max())

# %%
# summed sensitivity shows where the electrode grid sees best
sens = np.sqrt((J ** 2).sum(axis=0))
print("sensitivity max/min ratio:", sens.max() / sens.min())
