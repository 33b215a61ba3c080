import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridskin.forward import (ForwardError, ForwardSolver, MeasurementProtocol, SensorModel,
                                assemble_stiffness, compute_jacobian, default_protocol, local_stiffness,
                                simulate_measurements, solve_potentials)
from hybridskin.mesh import Mesh, build_pad_layout, build_rect_mesh, place_grid_electrodes


def _p1_block(p):
    """Element matrix from the inverse of the barycentric Vandermonde matrix."""
    V = np.column_stack([np.ones(3), p])
    grads = np.linalg.inv(V)[1:].T
    area = 0.5 * abs(np.linalg.det(V))
    return area * grads @ grads.T


def test_unit_triangle_block():
    mesh = Mesh(np.array([[0, 0], [1, 0], [0, 1]], float), np.array([[0, 1, 2]]), 1.0, 1.0, 1, 1)
    expected = [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]]
    np.testing.assert_allclose(local_stiffness(mesh)[0], expected, atol=1e-15)
    np.testing.assert_allclose(assemble_stiffness(mesh, [1.0]).toarray(), expected, atol=1e-15)


def test_stiffness_matches_vandermonde_oracle(small_model):
    mesh = small_model.mesh
    ke = local_stiffness(mesh)
    for e in (0, 1, 37, 97):
        np.testing.assert_allclose(ke[e], _p1_block(mesh.nodes[mesh.elements[e]]), atol=1e-14)


def test_stiffness_symmetry_and_null(small_model, rng):
    sigma = rng.uniform(0.2, 3.0, small_model.mesh.n_elements)
    K = assemble_stiffness(small_model.mesh, sigma)
    assert abs(K - K.T).max() == 0
    assert np.abs(K @ np.ones(K.shape[0])).max() <= 1e-12 * abs(K).max()


def test_stiffness_linear_in_sigma(small_model):
    n = small_model.mesh.n_elements
    K1 = assemble_stiffness(small_model.mesh, np.ones(n))
    K2 = assemble_stiffness(small_model.mesh, np.full(n, 2.0))
    assert abs(K2 - 2 * K1).max() == 0


def test_stiffness_rejects_bad_field(small_model):
    with pytest.raises(ValueError):
        assemble_stiffness(small_model.mesh, np.zeros(small_model.mesh.n_elements))
    with pytest.raises(ValueError):
        assemble_stiffness(small_model.mesh, np.ones(3))


def test_zero_current(small_model):
    K = assemble_stiffness(small_model.mesh, small_model.baseline_field())
    u = solve_potentials(K, 0, 5, 0.0, small_model.reference_node)
    assert not u.any()


def test_dense_oracle_unit_square():
    mesh = build_rect_mesh(1, 1, 1)
    K = assemble_stiffness(mesh, [1.0, 1.0])
    u = solve_potentials(K, 0, 3, 1.0, reference_node=0)
    # independent dense assembly from the Vandermonde element matrices
    Kd = np.zeros((4, 4))
    for tri in mesh.elements:
        Kd[np.ix_(tri, tri)] += _p1_block(mesh.nodes[tri])
    b = np.array([1.0, 0, 0, -1.0])
    ud = np.zeros(4)
    ud[1:] = np.linalg.solve(Kd[1:, 1:], b[1:])
    np.testing.assert_allclose(u, ud, rtol=1e-12, atol=1e-14)


def test_mirror_antisymmetry(default_mesh):
    # the diagonal y = x maps the triangulation onto itself; electrode 0 (the pin) lies on it
    e = place_grid_electrodes(default_mesh, 5, 5, 20)
    model = SensorModel(default_mesh, e, build_pad_layout(default_mesh, 1, 1))
    K = assemble_stiffness(default_mesh, model.baseline_field())
    u = solve_potentials(K, e.node_indices[1], e.node_indices[5], 1e-3, model.reference_node)
    nx = default_mesh.nx + 1
    mirror = (np.arange(default_mesh.n_nodes) % nx) * nx + np.arange(default_mesh.n_nodes) // nx
    np.testing.assert_allclose(default_mesh.nodes[mirror], default_mesh.nodes[:, ::-1])
    assert np.abs(u + u[mirror]).max() <= 1e-9 * np.abs(u).max()


def test_solve_rejects_same_poles(small_model):
    K = assemble_stiffness(small_model.mesh, small_model.baseline_field())
    with pytest.raises(ValueError):
        solve_potentials(K, 2, 2, 1.0, 0)


def test_disconnected_mesh_is_singular():
    nodes = np.array([[0, 0], [1, 0], [0, 1], [5, 5], [6, 5], [5, 6]], float)
    mesh = Mesh(nodes, np.array([[0, 1, 2], [3, 4, 5]]), 6.0, 6.0, 1, 1)
    assert not mesh.is_connected()
    K = assemble_stiffness(mesh, [1.0, 1.0])
    with pytest.raises(ForwardError):
        solve_potentials(K, 1, 4, 1.0, 0)


def test_zero_perturbation_repeatable(small_model, small_protocol):
    a = simulate_measurements(small_model, small_model.baseline_field(), small_protocol)
    b = simulate_measurements(small_model, small_model.baseline_field(), small_protocol)
    assert a.tobytes() == b.tobytes()
    assert not (b - a).any()


def test_current_linearity(small_model, small_protocol):
    p2 = MeasurementProtocol(small_protocol.patterns, 2 * small_protocol.current)
    s = ForwardSolver(small_model)
    np.testing.assert_allclose(s.measure(p2), 2 * s.measure(small_protocol), rtol=1e-14)


def test_reciprocity_every_pair(small_model, small_protocol):
    v = simulate_measurements(small_model, small_model.baseline_field(), small_protocol)
    index = {tuple(p): i for i, p in enumerate(small_protocol.patterns.tolist())}
    n = 0
    for (a, b, c, d), i in index.items():
        j = index.get((c, d, a, b))
        if j is not None:
            assert abs(v[i] - v[j]) <= 1e-8 * max(abs(v[i]), abs(v[j]))
            n += 1
    assert n == len(index)


def test_local_decrease_sign_pattern(small_model, small_protocol):
    mesh = small_model.mesh
    region = np.hypot(*(mesh.element_centroids - 35).T) < 15
    ds = np.where(region, -1e-4, 0.0)
    s0 = ForwardSolver(small_model)
    dv = ForwardSolver(small_model, 1.0 + ds).measure(small_protocol) - s0.measure(small_protocol)
    pred = s0.jacobian(small_protocol) @ ds
    big = np.abs(pred) > 1e-3 * np.abs(pred).max()
    assert big.sum() > 10
    np.testing.assert_array_equal(np.sign(dv[big]), np.sign(pred[big]))


def test_linearisation_error(small_model, small_protocol, rng):
    s0 = ForwardSolver(small_model)
    J, v0 = s0.jacobian(small_protocol), s0.measure(small_protocol)
    d = rng.standard_normal(small_model.mesh.n_elements)

    def err(norm):
        ds = d * norm / np.linalg.norm(d)
        v1 = ForwardSolver(small_model, 1.0 + ds).measure(small_protocol)
        return np.linalg.norm(v1 - v0 - J @ ds), np.linalg.norm(J @ ds)

    r, jd = err(1e-5)
    assert r <= 1e-6 * jd + 1e-12
    # second-order remainder: shrinking the step 10x shrinks the error ~100x
    big, small = err(1e-3)[0], err(1e-4)[0]
    assert 50 < big / small < 200


def test_jacobian_mirror_symmetry(default_mesh):
    e = place_grid_electrodes(default_mesh, 5, 5, 20)
    model = SensorModel(default_mesh, e, build_pad_layout(default_mesh, 1, 1))
    proto = default_protocol(e)
    J = compute_jacobian(model, model.baseline_field(), proto)
    emap = np.array([(k % 5) * 5 + k // 5 for k in range(25)])
    index = {tuple(p): i for i, p in enumerate(proto.patterns.tolist())}
    pmap = np.array([index[tuple(emap[p])] for p in proto.patterns])
    c = default_mesh.element_centroids
    lookup = {tuple(np.round(xy, 6)): k for k, xy in enumerate(c)}
    kmap = np.array([lookup[tuple(np.round(xy[::-1], 6))] for xy in c])
    np.testing.assert_allclose(J[pmap][:, kmap], J, rtol=0, atol=1e-9 * np.abs(J).max())


def test_no_blind_pattern(default_bundle):
    assert np.all(np.abs(default_bundle.jacobian).max(axis=1) > 0)


def _brute_force_patterns(rows, cols):
    coords = {k: (k // cols, k % cols) for k in range(rows * cols)}
    adj = sorted((a, b) for a, b in itertools.permutations(coords, 2)
                 if a < b and abs(coords[a][0] - coords[b][0]) + abs(coords[a][1] - coords[b][1]) == 1)
    return {(a, b, c, d) for (a, b), (c, d) in itertools.product(adj, adj) if len({a, b, c, d}) == 4}


@pytest.mark.parametrize("rows,cols,expected", [(2, 2, 4), (5, 5, 1372), (3, 4, None)])
def test_protocol_counts(default_mesh, rows, cols, expected):
    e = place_grid_electrodes(default_mesh, rows, cols, 20)
    proto = default_protocol(e)
    brute = _brute_force_patterns(rows, cols)
    assert {tuple(p) for p in proto.patterns.tolist()} == brute
    assert len(proto) == len(brute)
    if expected is not None:
        assert len(proto) == expected


def test_protocol_invariants(default_mesh):
    proto = default_protocol(place_grid_electrodes(default_mesh, 5, 5, 20))
    p = proto.patterns
    assert len(np.unique(p, axis=0)) == len(p)
    for a, b, c, d in p:
        assert len({a, b, c, d}) == 4


@pytest.mark.parametrize("patterns", [[[0, 0, 1, 2]], [[0, 1, 1, 2]], [[0, 1, 2, 3], [0, 1, 2, 3]], []])
def test_protocol_rejects(patterns):
    with pytest.raises(ValueError):
        MeasurementProtocol(np.array(patterns, dtype=int))


def test_protocol_bad_electrode(small_model):
    with pytest.raises(ValueError, match="electrode"):
        ForwardSolver(small_model).measure(MeasurementProtocol(np.array([[0, 1, 2, 30]])))


def test_solver_deterministic(small_model, small_protocol, rng):
    sigma = rng.uniform(0.5, 2, small_model.mesh.n_elements)
    a = compute_jacobian(small_model, sigma, small_protocol)
    b = compute_jacobian(small_model, sigma, small_protocol)
    assert a.tobytes() == b.tobytes()


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_reciprocity_random_field(seed):
    mesh = build_rect_mesh(60, 50, 10)
    e = place_grid_electrodes(mesh, 3, 3, 0)
    model = SensorModel(mesh, e, build_pad_layout(mesh, 1, 1))
    sigma = np.random.default_rng(seed).uniform(0.1, 5.0, mesh.n_elements)
    proto = default_protocol(e)
    v = simulate_measurements(model, sigma, proto)
    index = {tuple(p): i for i, p in enumerate(proto.patterns.tolist())}
    for (a, b, c, d), i in index.items():
        j = index[(c, d, a, b)]
        assert abs(v[i] - v[j]) <= 1e-8 * max(abs(v[i]), abs(v[j]), 1e-300)
