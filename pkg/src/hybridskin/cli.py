"""
Command line experiment runner.

    hybridskin build --config FILE --out DIR
    hybridskin indent-grid --bundle DIR --rows N --cols N --peak F
    hybridskin replay --bundle DIR --record DIR
    hybridskin report --bundle DIR

Exit status: 0 success, 1 configuration error, 2 runtime failure.
The worker count for indentation sweeps comes from ``HYBRIDSKIN_THREADS``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import io as fio
from .config import ConfigError, load_config
from .mesh import MeshError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _bundle(path):
    from .pipeline import load_bundle

    if not (Path(path) / "config.txt").exists():
        raise ConfigError(f"{path} is not a model bundle (config.txt missing)")
    return load_bundle(path)


def cmd_build(args) -> int:
    from .pipeline import build_bundle, write_bundle

    cfg = load_config(args.config)
    try:
        bundle = build_bundle(cfg)
    except MeshError as exc:
        raise ConfigError(f"{args.config}: {exc}") from None
    out = write_bundle(bundle, args.out)
    m = bundle.mesh
    print(f"bundle written to {out}: {m.n_nodes} nodes, {m.n_elements} elements, "
          f"{bundle.model.electrodes.count} electrodes, {len(bundle.protocol)} patterns, "
          f"Q {bundle.reconstructor.Q.shape[0]}x{bundle.reconstructor.Q.shape[1]}")
    return 0


def cmd_indent_grid(args) -> int:
    from .pipeline import run_grid, simulate_blank, simulate_site, write_grid_outputs

    bundle = _bundle(args.bundle)
    if args.rows < 1 or args.cols < 1:
        raise ConfigError("--rows and --cols must be at least 1")
    if args.peak is not None and args.peak <= 0:
        raise ConfigError("--peak must be positive")
    peak = bundle.config.peak_force_n if args.peak is None else args.peak
    out = Path(args.out) if args.out else Path(args.bundle) / f"indent_grid_{args.rows}x{args.cols}_{peak:g}N"
    noise = not args.noise_off
    result = run_grid(bundle, args.rows, args.cols, peak, noise=noise)
    if args.save_records:
        from .pipeline import grid_sites

        sites = grid_sites(bundle.config.width_mm, bundle.config.height_mm, args.rows, args.cols)
        gain = bundle.gain_field()
        for i, c in enumerate(sites):
            fio.write_record(out / "records" / f"site_{i:03d}", simulate_site(bundle, c, i, gain, peak, noise))
        fio.write_record(out / "records" / "blank", simulate_blank(bundle, noise))
    write_grid_outputs(result, bundle, out)
    print((out / "summary.txt").read_text(), end="")
    if result.failed:
        print(f"failed sites: {[i for i, _ in result.failed]}", file=sys.stderr)
    return 0


def cmd_replay(args) -> int:
    from .pipeline import replay, write_replay_outputs

    bundle = _bundle(args.bundle)
    record = fio.read_record(args.record)
    blank = fio.read_record(args.blank) if args.blank else None
    cal = fio.read_calibration(args.calibration) if args.calibration else None
    result = replay(bundle, record, cal, blank, filtered=not args.no_filter)
    if not args.no_write:
        out = Path(args.out) if args.out else Path(args.bundle) / f"replay_{Path(args.record).name}"
        write_replay_outputs(result, bundle, record.times, out)
    fps = result.frames_per_second
    print(f"replayed {len(result.maps)} frames; reconstruct+fuse at "
          f"{fps:.1f} frames/s" if result.maps else "replayed 0 frames")
    return 0


def cmd_report(args) -> int:
    bundle = _bundle(args.bundle)
    cfg, m, rec = bundle.config, bundle.mesh, bundle.reconstructor
    print(f"bundle {args.bundle}")
    print(f"  mesh {m.n_nodes} nodes / {m.n_elements} elements, {cfg.width_mm:g}x{cfg.height_mm:g} mm "
          f"at {cfg.mesh_pitch_mm:g} mm")
    print(f"  electrodes {bundle.model.electrodes.count}, patterns {len(bundle.protocol)}, "
          f"pads {bundle.model.pads.pad_count}")
    print(f"  lambda_rel {rec.lambda_rel:g}, prior {rec.prior} (exponent {rec.noser_exponent:g}), "
          f"eit scale {bundle.eit_scale:.6g} N/unit, seed {cfg.seed}")
    for summary in sorted(Path(args.bundle).glob("*/summary.txt")):
        print(f"\n[{summary.parent.name}]")
        print(summary.read_text(), end="")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hybridskin", description="EIT-pneumatic hybrid skin simulation runner")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build", help="build a model bundle from a config file")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    g = sub.add_parser("indent-grid", help="simulate an indentation grid and score both pipelines")
    g.add_argument("--bundle", required=True)
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--cols", type=int, required=True)
    g.add_argument("--peak", type=float, default=None, help="peak force in N (default from config)")
    g.add_argument("--out", default=None)
    g.add_argument("--noise-off", action="store_true", help="disable voltage and pressure noise")
    g.add_argument("--save-records", action="store_true", help="also write every site's raw record")
    g.set_defaults(func=cmd_indent_grid)

    r = sub.add_parser("replay", help="stream a recorded indentation through the fusion pipeline")
    r.add_argument("--bundle", required=True)
    r.add_argument("--record", required=True, help="record directory (force.csv, voltages.csv, pneumatic.csv)")
    r.add_argument("--blank", default=None, help="blank record directory for baseline removal")
    r.add_argument("--calibration", default=None, help="pad calibration file (default: exact)")
    r.add_argument("--out", default=None)
    r.add_argument("--no-filter", action="store_true", help="skip low-pass filtering")
    r.add_argument("--no-write", action="store_true", help="do not write per-frame maps")
    r.set_defaults(func=cmd_replay)

    s = sub.add_parser("report", help="summarise a bundle and its runs")
    s.add_argument("--bundle", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
