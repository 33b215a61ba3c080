"""
Experiment pipeline shared by the command line and the acceptance tests:
model bundles, indentation sweeps and record replay.
"""

from __future__ import annotations

import hashlib
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fio
from .config import ExperimentConfig, load_config
from .forward import ForwardSolver, MeasurementProtocol, SensorModel, default_protocol
from .fusion import ForceMap, PadCalibration, fit_pad_calibration, fuse
from .inverse import Reconstructor, build_reconstructor, calibrate_eit_scale, reconstruct
from .mesh import build_pad_layout, build_rect_mesh, place_grid_electrodes
from .metrics import SensitivityReport, localize, sensitivity_cv
from .phantom import (ContactSpec, GainField, IndentationRecord, blank_record, indentation_contact,
                      make_gain_field, preprocess, run_indentation)

THREADS_ENV = "HYBRIDSKIN_THREADS"


@dataclass(eq=False)
class Bundle:
    config: ExperimentConfig
    model: SensorModel
    protocol: MeasurementProtocol
    jacobian: np.ndarray
    reconstructor: Reconstructor
    eit_scale: float
    _baseline: ForwardSolver | None = field(default=None, repr=False)

    @property
    def mesh(self):
        return self.model.mesh

    @property
    def baseline(self) -> ForwardSolver:
        if self._baseline is None:
            self._baseline = ForwardSolver(self.model)
        return self._baseline

    def reference_contact(self) -> ContactSpec:
        cfg = self.config
        return ContactSpec((cfg.width_mm / 2, cfg.height_mm / 2), cfg.peak_force_n, cfg.profile_sigma_mm)

    def gain_field(self, seed: int | None = None) -> GainField:
        cfg = self.config
        return make_gain_field(self.mesh, cfg.gain_roughness, cfg.seed if seed is None else seed)


def build_model(cfg: ExperimentConfig) -> SensorModel:
    mesh = build_rect_mesh(cfg.width_mm, cfg.height_mm, cfg.mesh_pitch_mm)
    electrodes = place_grid_electrodes(mesh, cfg.electrode_rows, cfg.electrode_cols, cfg.electrode_margin_mm)
    pads = build_pad_layout(mesh, cfg.pad_rows, cfg.pad_cols, cfg.pad_overlap_mm)
    return SensorModel(mesh, electrodes, pads, cfg.sigma0)


def build_bundle(cfg: ExperimentConfig) -> Bundle:
    cfg.validate()
    model = build_model(cfg)
    protocol = default_protocol(model.electrodes, cfg.current_a)
    baseline = ForwardSolver(model)
    J = baseline.jacobian(protocol)
    rec = build_reconstructor(J, cfg.lambda_rel, cfg.prior, cfg.noser_exponent, keep_jacobian=False)
    bundle = Bundle(cfg, model, protocol, J, rec, 1.0, baseline)
    bundle.eit_scale = calibrate_eit_scale(model, protocol, rec, bundle.reference_contact(),
                                           cfg.force_to_sigma, cfg.force_exponent, baseline)
    return bundle


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(directory, cfg: ExperimentConfig, extra: dict | None = None):
    """Record config hash, seed, versions and a checksum of every file in ``directory``."""
    import scipy

    d = Path(directory)
    entries = {"config_sha256": cfg.digest(), "seed": cfg.seed, "hybridskin_version": __version__,
               "numpy_version": np.__version__, "scipy_version": scipy.__version__}
    entries.update(extra or {})
    # subdirectories with a manifest of their own are separate outputs
    owned = {Path(f).parent for f in fio.list_files(d) if Path(f).name == "manifest.txt" and "/" in f}
    files = [f for f in fio.list_files(d)
             if f != "manifest.txt" and not owned.intersection(Path(f).parents)]
    with open(d / "manifest.txt", "w", newline="\n", encoding="ascii") as f:
        for k, v in entries.items():
            f.write(f"{k} = {v}\n")
        for name in files:
            f.write(f"file {name} = {_sha256(d / name)}\n")


def write_bundle(bundle: Bundle, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rec = bundle.reconstructor
    (out / "config.txt").write_text(bundle.config.to_text(), encoding="ascii")
    fio.write_mesh(out / "mesh.txt", bundle.mesh, bundle.model.electrodes, bundle.model.pads)
    fio.write_protocol_csv(out / "protocol.csv", bundle.protocol)
    np.save(out / "jacobian.npy", bundle.jacobian)
    np.save(out / "reconstructor.npy", np.asarray(rec.Q))
    np.save(out / "prior_diag.npy", rec.prior_diag)
    fio.write_kv(out / "reconstructor.txt", {
        "lambda_rel": rec.lambda_rel, "lambda_abs": rec.lam, "prior": rec.prior,
        "noser_exponent": rec.noser_exponent, "eit_scale_n_per_unit": bundle.eit_scale,
        "elements": rec.n_elements, "patterns": rec.n_patterns})
    fio.write_calibration(out / "pad_calibration.txt", bundle.config.exact_calibration())
    write_manifest(out, bundle.config)
    return out


def load_bundle(directory) -> Bundle:
    d = Path(directory)
    if not (d / "config.txt").exists():
        raise FileNotFoundError(f"{d} is not a model bundle (config.txt missing)")
    cfg = load_config(d / "config.txt")
    mesh, electrodes, pads = fio.read_mesh(d / "mesh.txt")
    model = SensorModel(mesh, electrodes, pads, cfg.sigma0)
    protocol = fio.read_protocol_csv(d / "protocol.csv")
    J = np.load(d / "jacobian.npy")
    Q = np.load(d / "reconstructor.npy")
    Q.setflags(write=False)
    params = fio.read_kv(d / "reconstructor.txt")
    rec = Reconstructor(Q, float(params["lambda_abs"]), float(params["lambda_rel"]), params["prior"],
                        np.load(d / "prior_diag.npy"), float(params["noser_exponent"]), None)
    if Q.shape != (mesh.n_elements, len(protocol)):
        raise ValueError(f"{d}: reconstructor shape {Q.shape} does not match mesh/protocol")
    return Bundle(cfg, model, protocol, J, rec, float(params["eit_scale_n_per_unit"]))


# -- per-site simulation -----------------------------------------------------

def grid_sites(width: float, height: float, rows: int, cols: int) -> np.ndarray:
    """Cell-centred indentation sites, row-major from the lower-left corner."""
    xs = width * (np.arange(cols) + 0.5) / cols
    ys = height * (np.arange(rows) + 0.5) / rows
    return np.array([(x, y) for y in ys for x in xs])


def site_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, index])


def simulate_site(bundle: Bundle, center, index: int, gain: GainField | None, peak: float | None = None,
                  noise: bool = True) -> IndentationRecord:
    cfg = bundle.config
    sim = cfg.sim_config() if noise else cfg.sim_config().noiseless()
    contact = indentation_contact(center, cfg.peak_force_n if peak is None else peak, sim, cfg.profile_sigma_mm)
    return run_indentation(bundle.model, bundle.protocol, contact, gain, sim, site_rng(cfg.seed, 1, index),
                           bundle.baseline)


def simulate_blank(bundle: Bundle, noise: bool = True) -> IndentationRecord:
    cfg = bundle.config
    sim = cfg.sim_config() if noise else cfg.sim_config().noiseless()
    return blank_record(bundle.model, bundle.protocol, sim, cfg.blank_s, site_rng(cfg.seed, 0, 0), bundle.baseline)


@dataclass(eq=False)
class SiteResult:
    index: int
    center: tuple[float, float]
    interior: bool
    true_force: float
    times: np.ndarray
    force_trace: np.ndarray
    eit_trace: np.ndarray
    hybrid_trace: np.ndarray
    eit_force: float
    hybrid_force: float
    eit_center: tuple[float, float] | None
    hybrid_center: tuple[float, float] | None
    degenerate_frames: int
    eit_image: np.ndarray
    hybrid_map: np.ndarray

    @staticmethod
    def _err(est, true):
        return float("nan") if est is None else float(np.hypot(est[0] - true[0], est[1] - true[1]))

    @property
    def eit_error(self) -> float:
        return self._err(self.eit_center, self.center)

    @property
    def hybrid_error(self) -> float:
        return self._err(self.hybrid_center, self.center)


def process_record(bundle: Bundle, record: IndentationRecord, calibration: PadCalibration,
                   blank: IndentationRecord | None = None, filtered: bool = True):
    """Preprocess, reconstruct and fuse every frame of ``record``.

    Returns ``(images, maps, preprocessed_record)``.
    """
    cfg = bundle.config
    pre = preprocess(record, cfg.cutoff_hz, blank, cfg.frame_rate_hz) if filtered else record
    images = reconstruct(bundle.reconstructor, pre.voltages) if len(pre) else np.zeros((0, bundle.mesh.n_elements))
    maps = [fuse(images[n], pre.pneumatic_frame(n), bundle.model.pads, calibration, cfg.sigma0)
            for n in range(len(pre))]
    return images, maps, pre


def evaluate_site(bundle: Bundle, record: IndentationRecord, index: int, calibration: PadCalibration,
                  blank: IndentationRecord | None = None) -> SiteResult:
    cfg = bundle.config
    mesh = bundle.mesh
    images, maps, _ = process_record(bundle, record, calibration, blank)
    eit_trace = bundle.eit_scale * (images @ mesh.element_areas)
    hybrid_trace = np.array([m.values.sum() for m in maps])
    hold = record.hold_mask()
    eit_img = images[hold].mean(axis=0)
    hyb_map = np.mean([maps[n].values for n in np.flatnonzero(hold)], axis=0)
    q = cfg.localization_quantile
    cx, cy = record.contact.center
    m = cfg.interior_margin_mm
    interior = m <= cx <= cfg.width_mm - m and m <= cy <= cfg.height_mm - m
    return SiteResult(index, (cx, cy), bool(interior), record.contact.force, record.times, record.force,
                      eit_trace, hybrid_trace, float(eit_trace[hold].mean()), float(hybrid_trace[hold].mean()),
                      localize(eit_img, mesh, q), localize(hyb_map, mesh, q),
                      int(sum(m.degenerate.any() for m in maps)), eit_img, hyb_map)


@dataclass(eq=False)
class GridResult:
    rows: int
    cols: int
    peak: float
    sites: list[SiteResult]
    failed: list[tuple[int, str]]
    eit_report: SensitivityReport | None
    hybrid_report: SensitivityReport | None
    calibration: PadCalibration

    def mean_error(self, which: str = "eit", interior_only: bool = True) -> float:
        errs = [getattr(s, f"{which}_error") for s in self.sites if s.interior or not interior_only]
        errs = [e for e in errs if np.isfinite(e)]
        return float(np.mean(errs)) if errs else float("nan")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


CALIBRATION_REPEATS = 5


def grid_calibration(bundle: Bundle, peak: float, repeats: int = CALIBRATION_REPEATS) -> PadCalibration:
    """Pad calibration per the config: exact inverse of the pad gains, or a fit.

    The fit presses the centre of every pad ``repeats`` times, so little of
    the load leaks onto neighbouring pads.
    """
    cfg = bundle.config
    if cfg.calibration == "exact":
        return cfg.exact_calibration()
    from .phantom import frame_times, force_trace, pad_shares

    # pressures only: voltages do not enter the pad fit
    sim = cfg.sim_config()
    pads = bundle.model.pads
    records = []
    for pad, (x0, y0, x1, y1) in enumerate(pads.footprints):
        for r in range(repeats):
            contact = indentation_contact(((x0 + x1) / 2, (y0 + y1) / 2), peak, sim, cfg.profile_sigma_mm)
            t = frame_times(contact, sim)
            f = force_trace(t, contact, sim.ramp_s)
            p = np.outer(f, pad_shares(pads, bundle.mesh, contact)) * np.asarray(sim.pad_gains)
            if sim.pressure_noise > 0:
                p = p + site_rng(cfg.seed, 2, pad * repeats + r).normal(0.0, sim.pressure_noise, p.shape)
            records.append(IndentationRecord(t, f, np.zeros((len(t), 0)), p, contact))
    return fit_pad_calibration(records, pads)


def run_grid(bundle: Bundle, rows: int, cols: int, peak: float | None = None, noise: bool = True,
             gain: GainField | None = None, seed_gain: bool = True, sites=None,
             workers: int | None = None) -> GridResult:
    """Indent every grid site, then run the EIT-only and hybrid pipelines.

    Site failures are collected rather than raised.
    """
    cfg = bundle.config
    peak = cfg.peak_force_n if peak is None else peak
    if sites is None:
        sites = grid_sites(cfg.width_mm, cfg.height_mm, rows, cols)
    if gain is None and seed_gain:
        gain = bundle.gain_field()
    calibration = grid_calibration(bundle, peak)
    blank = simulate_blank(bundle, noise)
    bundle.baseline  # factorise once before any worker threads start

    def one(i):
        try:
            rec = simulate_site(bundle, sites[i], i, gain, peak, noise)
            return evaluate_site(bundle, rec, i, calibration, blank), None
        except Exception as exc:  # a failed site must not abort the sweep
            return None, (i, f"{type(exc).__name__}: {exc}")

    n = len(sites)
    nw = workers or _workers()
    if nw > 1:
        with ThreadPoolExecutor(nw) as pool:
            outcomes = list(pool.map(one, range(n)))
    else:
        outcomes = [one(i) for i in range(n)]
    results = [r for r, _ in outcomes if r is not None]
    failed = [f for _, f in outcomes if f is not None]

    def report(attr):
        vals = [getattr(r, attr) for r in results]
        try:
            return sensitivity_cv(vals, peak)
        except ValueError:
            return None

    return GridResult(rows, cols, peak, results, failed, report("eit_force"), report("hybrid_force"), calibration)


# -- outputs -----------------------------------------------------------------

def _report_lines(name: str, rep: SensitivityReport | None) -> list[str]:
    if rep is None:
        return [f"{name}: cv undefined (fewer than two valid sites or non-positive mean)"]
    return [f"{name}: mean {rep.mean:.6g} N, std {rep.std:.6g} N (population), cv {rep.cv:.6g}"]


def write_report_csv(path, rep: SensitivityReport | None, sites: list[SiteResult], attr: str):
    with open(path, "w", newline="\n", encoding="ascii") as f:
        f.write("site,x_mm,y_mm,estimate_n,ratio\n")
        for s in sites:
            est = getattr(s, attr)
            ratio = est / rep.true_force if rep is not None else float("nan")
            f.write(f"{s.index},{s.center[0]:.17g},{s.center[1]:.17g},{est:.17g},{ratio:.17g}\n")
        if rep is None:
            f.write("# cv,undefined\n")
        else:
            f.write(f"# mean,{rep.mean:.17g}\n# std_population,{rep.std:.17g}\n# cv,{rep.cv:.17g}\n")


def summary_text(result: GridResult, cfg: ExperimentConfig) -> str:
    lines = [f"indentation grid {result.rows}x{result.cols}, peak {result.peak:g} N, seed {cfg.seed}",
             f"sites evaluated {len(result.sites)}, failed {len(result.failed)}",
             f"lambda_rel {cfg.lambda_rel:g}, prior {cfg.prior} (exponent {cfg.noser_exponent:g}), "
             f"calibration {cfg.calibration}"]
    lines += _report_lines("EIT-only", result.eit_report)
    lines += _report_lines("hybrid", result.hybrid_report)
    for which in ("eit", "hybrid"):
        lines.append(f"{which} localization error: interior {result.mean_error(which, True):.4g} mm, "
                     f"all sites {result.mean_error(which, False):.4g} mm")
    return "\n".join(lines) + "\n"


def write_grid_outputs(result: GridResult, bundle: Bundle, out):
    out = Path(out)
    (out / "sites").mkdir(parents=True, exist_ok=True)
    mesh = bundle.mesh
    with open(out / "sites.csv", "w", newline="\n", encoding="ascii") as f:
        f.write("site,x_mm,y_mm,interior,eit_force_n,hybrid_force_n,eit_x_mm,eit_y_mm,eit_error_mm,"
                "hybrid_x_mm,hybrid_y_mm,hybrid_error_mm,degenerate_frames\n")
        for s in result.sites:
            ex, ey = s.eit_center or (float("nan"),) * 2
            hx, hy = s.hybrid_center or (float("nan"),) * 2
            f.write(",".join([str(s.index)] + ["%.17g" % v for v in (s.center[0], s.center[1])]
                             + [str(int(s.interior))]
                             + ["%.17g" % v for v in (s.eit_force, s.hybrid_force, ex, ey, s.eit_error,
                                                       hx, hy, s.hybrid_error)]
                             + [str(s.degenerate_frames)]) + "\n")
    for s in result.sites:
        stem = out / "sites" / f"site_{s.index:03d}"
        fio.write_series(f"{stem}.csv", s.times, np.column_stack([s.force_trace, s.eit_trace, s.hybrid_trace]),
                          ["true_force_n", "eit_force_n", "hybrid_force_n"])
        fio.write_pgm(f"{stem}_eit.pgm", s.eit_image, mesh, vmin=0.0)
        fio.write_pgm(f"{stem}_hybrid.pgm", s.hybrid_map, mesh, vmin=0.0)
    write_report_csv(out / "report_eit.csv", result.eit_report, result.sites, "eit_force")
    write_report_csv(out / "report_hybrid.csv", result.hybrid_report, result.sites, "hybrid_force")
    fio.write_calibration(out / "pad_calibration.txt", result.calibration)
    with open(out / "failed_sites.txt", "w", newline="\n", encoding="ascii") as f:
        for i, msg in result.failed:
            f.write(f"{i}: {msg}\n")
    (out / "summary.txt").write_text(summary_text(result, bundle.config), encoding="ascii")
    write_manifest(out, bundle.config, {"grid": f"{result.rows}x{result.cols}", "peak_n": repr(float(result.peak))})


# -- replay ------------------------------------------------------------------

@dataclass(eq=False)
class ReplayResult:
    maps: list[ForceMap]
    pad_forces: np.ndarray
    totals: np.ndarray
    frames_per_second: float
    seconds: float


def replay(bundle: Bundle, record: IndentationRecord, calibration: PadCalibration | None = None,
           blank: IndentationRecord | None = None, filtered: bool = True) -> ReplayResult:
    """Stream a record frame by frame through reconstruct and fuse.

    The zero-phase filter needs the whole record, so preprocessing runs first
    and is excluded from the frame rate.
    """
    cfg = bundle.config
    if record.voltages.shape[1] != bundle.reconstructor.n_patterns and len(record):
        raise ValueError(f"record has {record.voltages.shape[1]} voltage channels, "
                         f"bundle expects {bundle.reconstructor.n_patterns}")
    if record.pressures.shape[1] != bundle.model.pads.pad_count and len(record):
        raise ValueError(f"record has {record.pressures.shape[1]} pneumatic channels, "
                         f"bundle has {bundle.model.pads.pad_count} pads")
    cal = calibration or cfg.exact_calibration()
    pre = preprocess(record, cfg.cutoff_hz, blank, cfg.frame_rate_hz) if (filtered and len(record)) else record
    maps = []
    t0 = time.perf_counter()
    for n in range(len(pre)):
        image = reconstruct(bundle.reconstructor, pre.voltages[n])
        maps.append(fuse(image, pre.pneumatic_frame(n), bundle.model.pads, cal, cfg.sigma0))
    dt = time.perf_counter() - t0
    fps = len(maps) / dt if maps and dt > 0 else float("nan")
    pad_forces = np.array([m.pad_forces for m in maps]).reshape(len(maps), bundle.model.pads.pad_count)
    totals = np.array([m.values.sum() for m in maps])
    return ReplayResult(maps, pad_forces, totals, fps, dt)


def write_replay_outputs(result: ReplayResult, bundle: Bundle, times, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    fio.write_series(out / "totals.csv", times,
                      np.column_stack([result.pad_forces, result.totals]) if len(result.maps)
                      else np.zeros((0, bundle.model.pads.pad_count + 1)),
                      [f"pad_force_{i}_n" for i in range(bundle.model.pads.pad_count)] + ["map_total_n"])
    for n, m in enumerate(result.maps):
        fio.write_image_csv(out / f"frame_{n:05d}.csv", m.values, bundle.mesh)
        fio.write_pgm(out / f"frame_{n:05d}.pgm", m.values, bundle.mesh, vmin=0.0)
    write_manifest(out, bundle.config, {"frames": len(result.maps)})
