import dataclasses

import numpy as np
import pytest

from hybridskin import io as fio
from hybridskin import pipeline
from hybridskin.cli import main
from hybridskin.config import ConfigError, ExperimentConfig, load_config, parse_config
from hybridskin.phantom import IndentationRecord

DESK = """\
# 100 mm desk-scale sensor
width_mm = 100
height_mm = 100
electrode_rows = 3
electrode_cols = 3
electrode_margin_mm = 10
profile_sigma_mm = 8
"""


def test_defaults_valid():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()
    assert cfg.pad_gains_pa_per_n == (50.0,) * 4


def test_text_round_trip():
    cfg = ExperimentConfig(lambda_rel=0.123, pad_gains_pa_per_n=(1.5, 2.0, 3.0, 4.0), seed=9)
    back = parse_config(cfg.to_text())
    assert back == cfg and back.digest() == cfg.digest()


@pytest.mark.parametrize("text,match", [
    ("seed = 1\nbogus = 2\n", r":2: unknown key 'bogus'"),
    ("seed = 1\nseed = 2\n", r":2: duplicate key"),
    ("\n\nseed = x\n", r":3: bad value"),
    ("seed\n", r":1: expected"),
    ("lambda_rel = 0\n", "lambda_rel must be positive"),
    ("cutoff_hz = 50\n", "Nyquist"),
    ("pad_rows = 1\n", "one entry per pad"),
    ("prior = tv\n", "prior"),
])
def test_parse_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text, "cfg.txt")


def test_load_missing(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.txt")


def test_with_overrides():
    assert ExperimentConfig().with_overrides(seed=4).seed == 4
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides(lambda_rel=-1.0)


def test_default_bundle_shapes(default_bundle):
    b = default_bundle
    assert b.mesh.n_nodes == 1681
    assert b.model.electrodes.count == 25
    assert b.reconstructor.Q.shape == (3200, 1372)
    assert b.jacobian.shape == (1372, 3200)


@pytest.fixture
def desk_cfg_file(tmp_path):
    p = tmp_path / "desk.txt"
    p.write_text(DESK)
    return p


@pytest.fixture
def built(tmp_path, desk_cfg_file):
    out = tmp_path / "bundle"
    assert main(["build", "--config", str(desk_cfg_file), "--out", str(out)]) == 0
    return out


def _tree(d):
    return {f: (d / f).read_bytes() for f in fio.list_files(d)}


def test_build_outputs_and_rerun(built, desk_cfg_file):
    files = set(fio.list_files(built))
    assert {"config.txt", "mesh.txt", "protocol.csv", "jacobian.npy", "reconstructor.npy",
            "reconstructor.txt", "pad_calibration.txt", "manifest.txt"} <= files
    before = _tree(built)
    assert main(["build", "--config", str(desk_cfg_file), "--out", str(built)]) == 0
    assert _tree(built) == before
    manifest = fio.read_kv(built / "manifest.txt")
    assert manifest["config_sha256"] == parse_config(DESK).digest()
    assert manifest["seed"] == "0"
    assert "numpy_version" in manifest and "hybridskin_version" in manifest
    assert manifest["file mesh.txt"]


def test_bundle_load_round_trip(built, desk_bundle):
    b = pipeline.load_bundle(built)
    assert np.asarray(b.reconstructor.Q).tobytes() == np.asarray(desk_bundle.reconstructor.Q).tobytes()
    assert b.eit_scale == desk_bundle.eit_scale
    np.testing.assert_array_equal(b.protocol.patterns, desk_bundle.protocol.patterns)


def test_build_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("lambda_rel = 0\n")
    assert main(["build", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "lambda_rel must be positive" in capsys.readouterr().err
    bad.write_text("width_mm = 100\nfoo = 1\n")
    assert main(["build", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert ":2:" in capsys.readouterr().err
    bad.write_text("mesh_pitch_mm = 5\nelectrode_rows = 50\nelectrode_cols = 50\n")
    assert main(["build", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["build", "--config", str(bad)]) == 1
    assert main(["frobnicate"]) == 1


def test_indent_grid_3x3(built, capsys):
    out = built / "g3"
    rc = main(["indent-grid", "--bundle", str(built), "--rows", "3", "--cols", "3", "--peak", "20",
               "--noise-off", "--out", str(out), "--save-records"])
    assert rc == 0
    text = (out / "summary.txt").read_text()
    assert "sites evaluated 9, failed 0" in text
    sites = fio.read_matrix_csv(out / "sites.csv")
    assert sites.shape[0] == 9
    cv = {}
    for which in ("eit", "hybrid"):
        tail = [l for l in (out / f"report_{which}.csv").read_text().splitlines() if l.startswith("# cv,")]
        cv[which] = float(tail[0].split(",")[1])
    assert cv["hybrid"] <= cv["eit"]
    assert len(list((out / "sites").glob("site_*.csv"))) == 9
    assert (out / "records" / "site_004" / "voltages.csv").exists()
    assert "file sites.csv" in (out / "manifest.txt").read_text()
    assert main(["report", "--bundle", str(built)]) == 0
    assert "[g3]" in capsys.readouterr().out


def test_indent_grid_single_site(built):
    out = built / "g1"
    assert main(["indent-grid", "--bundle", str(built), "--rows", "1", "--cols", "1", "--out", str(out)]) == 0
    text = (out / "summary.txt").read_text()
    assert "EIT-only: cv undefined" in text and "hybrid: cv undefined" in text
    assert "# cv,undefined" in (out / "report_hybrid.csv").read_text()


def test_indent_grid_errors(built, tmp_path):
    assert main(["indent-grid", "--bundle", str(tmp_path / "none"), "--rows", "2", "--cols", "2"]) == 1
    assert main(["indent-grid", "--bundle", str(built), "--rows", "0", "--cols", "2"]) == 1
    assert main(["indent-grid", "--bundle", str(built), "--rows", "2", "--cols", "2", "--peak", "-1"]) == 1


def test_full_grid_site_count(desk_config):
    fast = dataclasses.replace(desk_config, ramp_s=0.05, hold_s=0.3, lead_s=0.05, tail_s=0.05)
    res = pipeline.run_grid(pipeline.build_bundle(fast), 15, 15, noise=False, seed_gain=False)
    assert len(res.sites) == 225 and not res.failed


def test_grid_failures_collected(desk_bundle, monkeypatch):
    real = pipeline.simulate_site

    def flaky(bundle, center, index, *a, **k):
        if index == 1:
            raise RuntimeError("boom")
        return real(bundle, center, index, *a, **k)

    monkeypatch.setattr(pipeline, "simulate_site", flaky)
    res = pipeline.run_grid(desk_bundle, 1, 3, noise=False)
    assert [i for i, _ in res.failed] == [1]
    assert len(res.sites) == 2 and "boom" in res.failed[0][1]


def test_grid_workers_deterministic(desk_bundle):
    a = pipeline.run_grid(desk_bundle, 2, 2, workers=1)
    b = pipeline.run_grid(desk_bundle, 2, 2, workers=3)
    for x, y in zip(a.sites, b.sites):
        assert x.hybrid_trace.tobytes() == y.hybrid_trace.tobytes()
        assert x.eit_image.tobytes() == y.eit_image.tobytes()


def test_fit_calibration_mode(desk_config):
    cfg = dataclasses.replace(desk_config, calibration="fit", pressure_noise_pa=2.0)
    b = pipeline.build_bundle(cfg)
    cal = pipeline.grid_calibration(b, 20.0)
    np.testing.assert_allclose(cal.gains, 1 / 50, rtol=0.01)


@pytest.fixture
def record_dirs(built, desk_bundle, tmp_path):
    b = desk_bundle
    rec = pipeline.simulate_site(b, (30, 65), 0, b.gain_field(), 15.0, noise=False)
    fio.write_record(tmp_path / "rec", rec)
    fio.write_record(tmp_path / "blank", pipeline.simulate_blank(b, noise=False))
    return rec, tmp_path / "rec", tmp_path / "blank"


def test_replay_totals_match_pneumatic(desk_bundle, record_dirs):
    rec, _, _ = record_dirs
    cal = desk_bundle.config.exact_calibration()
    res = pipeline.replay(desk_bundle, rec, cal, filtered=False)
    expected = (rec.pressures * cal.gains).sum(axis=1)
    np.testing.assert_allclose(res.totals, expected, rtol=1e-9, atol=1e-12)
    # filtering smears the onset into sub-floor forces over a near-blank image, which are dropped
    filt = pipeline.replay(desk_bundle, rec, cal)
    placed = np.array([m.total_per_pad.sum() for m in filt.maps])
    np.testing.assert_allclose(filt.totals, placed, rtol=1e-9, atol=1e-12)
    dropped = filt.pad_forces.sum(axis=1) - placed
    assert np.all(dropped <= 0.05 * 4)
    live = filt.pad_forces.sum(axis=1) > 0.05 * 4
    np.testing.assert_allclose(filt.totals[live], filt.pad_forces.sum(axis=1)[live], rtol=1e-9)


def test_replay_cli(built, record_dirs, capsys):
    _, rec_dir, blank_dir = record_dirs
    out = built / "rp"
    assert main(["replay", "--bundle", str(built), "--record", str(rec_dir), "--blank", str(blank_dir),
                 "--calibration", str(built / "pad_calibration.txt"), "--out", str(out)]) == 0
    assert "frames/s" in capsys.readouterr().out
    n = len(fio.read_record(rec_dir))
    assert len(list(out.glob("frame_*.pgm"))) == n
    t, totals = fio.read_series(out / "totals.csv")
    assert totals.shape == (n, 5)
    assert (out / "manifest.txt").exists()


def test_replay_empty_record(built, tmp_path, capsys):
    empty = IndentationRecord(np.zeros(0), np.zeros(0), np.zeros((0, 88)), np.zeros((0, 4)))
    fio.write_record(tmp_path / "empty", empty)
    assert main(["replay", "--bundle", str(built), "--record", str(tmp_path / "empty")]) == 0
    assert "replayed 0 frames" in capsys.readouterr().out


def test_replay_errors(built, tmp_path, desk_bundle):
    assert main(["replay", "--bundle", str(built), "--record", str(tmp_path / "missing")]) == 2
    wrong = IndentationRecord(np.arange(3) / 100, np.zeros(3), np.zeros((3, 5)), np.zeros((3, 4)))
    fio.write_record(tmp_path / "wrong", wrong)
    assert main(["replay", "--bundle", str(built), "--record", str(tmp_path / "wrong")]) == 2
    (tmp_path / "wrong" / "pneumatic.csv").write_text("t,p_0,p_1,p_2,p_3\n0,1,2,3,4\n0.01,1,2\n")
    assert main(["replay", "--bundle", str(built), "--record", str(tmp_path / "wrong")]) == 2
