import numpy as np
import pytest

from hybridskin import io as fio
from hybridskin.fusion import PadCalibration
from hybridskin.mesh import build_pad_layout, build_rect_mesh, place_grid_electrodes
from hybridskin.phantom import ContactSpec, IndentationRecord


def test_mesh_round_trip(tmp_path):
    mesh = build_rect_mesh(70, 50, 7)
    e = place_grid_electrodes(mesh, 3, 2, 5)
    pads = build_pad_layout(mesh, 2, 2, overlap=8)
    fio.write_mesh(tmp_path / "m.txt", mesh, e, pads)
    m2, e2, p2 = fio.read_mesh(tmp_path / "m.txt")
    assert m2.nodes.tobytes() == mesh.nodes.tobytes()
    assert m2.elements.tobytes() == mesh.elements.tobytes()
    assert (m2.nx, m2.ny, m2.width, m2.height) == (mesh.nx, mesh.ny, mesh.width, mesh.height)
    np.testing.assert_array_equal(e2.node_indices, e.node_indices)
    assert (e2.rows, e2.cols) == (3, 2)
    np.testing.assert_array_equal(p2.masks, pads.masks)


def test_mesh_format_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("EITMESH v1\nnodes 2\n0 0\n1 x\n")
    with pytest.raises(fio.FormatError, match=":4:"):
        fio.read_mesh(p)
    p.write_text("NOTAMESH\n")
    with pytest.raises(fio.FormatError):
        fio.read_mesh(p)


def test_matrix_round_trip(tmp_path, rng):
    J = rng.standard_normal((7, 5)) * 1e-7
    fio.write_jacobian_csv(tmp_path / "j.csv", J)
    assert fio.read_matrix_csv(tmp_path / "j.csv").tobytes() == J.tobytes()


def test_matrix_bad_row(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("row,c0,c1\n0,1,2\n1,3\n")
    with pytest.raises(fio.FormatError, match=":3:"):
        fio.read_matrix_csv(p)
    p.write_text("row,c0\n0,abc\n")
    with pytest.raises(fio.FormatError, match=":2:"):
        fio.read_matrix_csv(p)


def test_reconstructor_binary_matches_csv(tmp_path, desk_bundle):
    from hybridskin.pipeline import write_bundle

    out = write_bundle(desk_bundle, tmp_path / "b")
    Q = np.load(out / "reconstructor.npy")
    fio.write_matrix_csv(tmp_path / "q.csv", Q, "pattern_", "element")
    assert fio.read_matrix_csv(tmp_path / "q.csv").tobytes() == Q.tobytes()
    assert Q.tobytes() == np.asarray(desk_bundle.reconstructor.Q).tobytes()


def test_protocol_round_trip(tmp_path, desk_bundle):
    fio.write_protocol_csv(tmp_path / "p.csv", desk_bundle.protocol)
    p = fio.read_protocol_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(p.patterns, desk_bundle.protocol.patterns)
    assert p.current == desk_bundle.protocol.current


def test_image_and_pgm(tmp_path, default_mesh, rng):
    v = rng.uniform(-1, 2, default_mesh.n_elements)
    fio.write_image_csv(tmp_path / "i.csv", v, default_mesh)
    assert fio.read_image_csv(tmp_path / "i.csv").tobytes() == v.tobytes()
    fio.write_pgm(tmp_path / "i.pgm", v, default_mesh, vmin=0.0)
    img = fio.read_pgm(tmp_path / "i.pgm")
    assert img.shape == (40, 40)
    assert img.min() >= 0 and img.max() == 255
    flat = fio.rasterize(np.arange(3200.0), default_mesh)
    assert flat[-1, 0] == 0.5 and flat[0, -1] == 3198.5


def test_record_round_trip(tmp_path, rng):
    n = 12
    rec = IndentationRecord(np.arange(n) / 100, rng.uniform(0, 20, n), rng.standard_normal((n, 6)) * 1e-6,
                            rng.standard_normal((n, 4)), ContactSpec((12.5, 70), 20.0, 8.0, 0.2, 3.2),
                            {"frame_rate": 100.0})
    fio.write_record(tmp_path / "r", rec)
    back = fio.read_record(tmp_path / "r")
    for name in ("times", "force", "voltages", "pressures"):
        assert getattr(back, name).tobytes() == getattr(rec, name).tobytes()
    assert back.contact == rec.contact
    assert back.meta == {"frame_rate": 100.0}


def test_empty_record_round_trip(tmp_path):
    rec = IndentationRecord(np.zeros(0), np.zeros(0), np.zeros((0, 6)), np.zeros((0, 4)))
    fio.write_record(tmp_path / "e", rec)
    back = fio.read_record(tmp_path / "e")
    assert len(back) == 0 and back.voltages.shape == (0, 6)


def test_series_errors(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("t,a\n0,1\n0.01,2,3\n")
    with pytest.raises(fio.FormatError, match=":3:"):
        fio.read_series(p)
    p.write_text("x,a\n")
    with pytest.raises(fio.FormatError):
        fio.read_series(p)


def test_kv_and_calibration(tmp_path):
    fio.write_kv(tmp_path / "k.txt", {"a": 1, "b": 0.1, "c": [1.5, 2], "d": True, "e": "noser"})
    kv = fio.read_kv(tmp_path / "k.txt")
    assert kv == {"a": "1", "b": "0.10000000000000001", "c": "1.5, 2", "d": "true", "e": "noser"}
    (tmp_path / "dup.txt").write_text("a = 1\na = 2\n")
    with pytest.raises(fio.FormatError, match=":2:"):
        fio.read_kv(tmp_path / "dup.txt")
    cal = PadCalibration(np.array([0.02, 1 / 3]), np.array([0.0, 1e-3]))
    fio.write_calibration(tmp_path / "c.txt", cal)
    back = fio.read_calibration(tmp_path / "c.txt")
    assert back.gains.tobytes() == cal.gains.tobytes()
