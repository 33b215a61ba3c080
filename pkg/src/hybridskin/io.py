"""
Plain-text formats: EITMESH meshes, CSV matrices/images/records, PGM rasters
and ``key = value`` files.

Floats are written with ``%.17g`` so every value round-trips exactly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .forward import MeasurementProtocol
from .mesh import ElectrodeSet, Mesh, PadLayout
from .phantom import ContactSpec, IndentationRecord

FLOAT_FMT = "%.17g"


class FormatError(ValueError):
    """Malformed input file; the message names the file and line."""


def _fmt(x) -> str:
    return FLOAT_FMT % float(x)


def _open_w(path):
    return open(path, "w", newline="\n", encoding="ascii")


# -- mesh bundle -------------------------------------------------------------

def write_mesh(path, mesh: Mesh, electrodes: ElectrodeSet | None = None, pads: PadLayout | None = None):
    """Write the ``EITMESH v1`` text format.

    Sections are introduced by a keyword and a count: ``nodes N`` (``x y``
    lines), ``elements E`` (``i j k``), ``electrodes K rows cols``
    (``node_index``) and ``pads P rows cols`` (``pad_id element_index weight``,
    non-zero weights only).
    """
    with _open_w(path) as f:
        f.write("EITMESH v1\n")
        f.write(f"nodes {mesh.n_nodes}\n")
        for x, y in mesh.nodes:
            f.write(f"{_fmt(x)} {_fmt(y)}\n")
        f.write(f"elements {mesh.n_elements}\n")
        for i, j, k in mesh.elements:
            f.write(f"{i} {j} {k}\n")
        if electrodes is not None:
            f.write(f"electrodes {electrodes.count} {electrodes.rows or 0} {electrodes.cols or 0}\n")
            for n in electrodes.node_indices:
                f.write(f"{n}\n")
        if pads is not None:
            nz = np.argwhere(pads.masks > 0)
            f.write(f"pads {pads.pad_count} {pads.rows} {pads.cols} {len(nz)}\n")
            for p, e in nz:
                f.write(f"{p} {e} {_fmt(pads.masks[p, e])}\n")


def read_mesh(path):
    """Inverse of :func:`write_mesh`; returns ``(mesh, electrodes, pads)``."""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    pos = 0

    def take(expect=None):
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            if expect is None:
                return None, None
            raise FormatError(f"{path}: unexpected end of file, expected {expect}")
        pos += 1
        return pos, lines[pos - 1].split()

    def bad(lineno, msg):
        return FormatError(f"{path}:{lineno}: {msg}")

    lineno, tok = take("header")
    if tok != ["EITMESH", "v1"]:
        raise bad(lineno, "missing 'EITMESH v1' header")

    def section(name, width, conv):
        ln, head = take(f"'{name}' section")
        if not head or head[0] != name:
            raise bad(ln, f"expected '{name}' section")
        try:
            count = int(head[1])
            extra = [int(v) for v in head[2:]]
        except (IndexError, ValueError):
            raise bad(ln, f"bad '{name}' section header") from None
        rows = []
        for _ in range(count):
            ln, t = take(f"{name} row")
            if len(t) != width:
                raise bad(ln, f"expected {width} fields")
            try:
                rows.append([c(v) for c, v in zip(conv, t)])
            except ValueError:
                raise bad(ln, "unparseable number") from None
        return rows, extra

    nodes, _ = section("nodes", 2, (float, float))
    elements, _ = section("elements", 3, (int, int, int))
    nodes = np.array(nodes, dtype=float)
    xs, ys = np.unique(nodes[:, 0]), np.unique(nodes[:, 1])
    mesh = Mesh(nodes, np.array(elements, dtype=np.int64), float(xs.max()), float(ys.max()),
                len(xs) - 1, len(ys) - 1)

    electrodes = pads = None
    save = pos
    ln, head = take()
    if head and head[0] == "electrodes":
        pos = save
        rows, extra = section("electrodes", 1, (int,))
        idx = np.array([r[0] for r in rows], dtype=np.int64)
        r, c = (extra + [0, 0])[:2]
        electrodes = ElectrodeSet(mesh.nodes[idx].copy(), idx, r or None, c or None)
        save = pos
        ln, head = take()
    if head and head[0] == "pads":
        try:
            n_pad, prow, pcol, n_w = (int(v) for v in head[1:5])
        except ValueError:
            raise bad(ln, "bad 'pads' section header") from None
        masks = np.zeros((n_pad, mesh.n_elements))
        for _ in range(n_w):
            ln, t = take("pad row")
            try:
                masks[int(t[0]), int(t[1])] = float(t[2])
            except (ValueError, IndexError):
                raise bad(ln, "bad pad weight row") from None
        px, py = mesh.width / pcol, mesh.height / prow
        fp = np.array([(c * px, r * py, (c + 1) * px, (r + 1) * py) for r in range(prow) for c in range(pcol)])
        pads = PadLayout(masks, fp, prow, pcol)
    elif head is not None:
        raise bad(ln, f"unexpected section {head[0]!r}")
    return mesh, electrodes, pads


# -- CSV matrices ------------------------------------------------------------

def write_matrix_csv(path, matrix, column_prefix: str, index_name: str = "row"):
    """Row-major CSV with a header naming every column ``{column_prefix}{j}``."""
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    with _open_w(path) as f:
        f.write(",".join([index_name] + [f"{column_prefix}{j}" for j in range(m.shape[1])]) + "\n")
        for i, row in enumerate(m):
            f.write(f"{i}," + ",".join(FLOAT_FMT % v for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="", encoding="ascii") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise FormatError(f"{path}: empty file")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: unparseable number") from None
    return np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)


def write_voltages_csv(path, values):
    """One row per vector, columns ``pattern_0..``."""
    write_matrix_csv(path, np.atleast_2d(values), "pattern_", "vector")


def write_jacobian_csv(path, J):
    write_matrix_csv(path, J, "element_", "pattern")


def write_protocol_csv(path, protocol: MeasurementProtocol):
    with _open_w(path) as f:
        f.write(f"# current_a {_fmt(protocol.current)}\n")
        f.write("inject_pos,inject_neg,meas_pos,meas_neg\n")
        for row in protocol.patterns:
            f.write(",".join(str(int(v)) for v in row) + "\n")


def read_protocol_csv(path) -> MeasurementProtocol:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    current = None
    patterns = []
    for lineno, line in enumerate(lines, start=1):
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "current_a":
                current = float(parts[1])
            continue
        if line.startswith("inject_pos") or not line.strip():
            continue
        try:
            row = [int(v) for v in line.split(",")]
        except ValueError:
            raise FormatError(f"{path}:{lineno}: unparseable electrode index") from None
        if len(row) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 fields")
        patterns.append(row)
    if current is None:
        raise FormatError(f"{path}: missing '# current_a' line")
    return MeasurementProtocol(np.array(patterns, dtype=np.int64), current)


# -- images ------------------------------------------------------------------

def write_image_csv(path, values, mesh: Mesh):
    """``element_index,x,y,value`` per element."""
    values = np.asarray(values, dtype=float)
    with _open_w(path) as f:
        f.write("element_index,x,y,value\n")
        for k, ((x, y), v) in enumerate(zip(mesh.element_centroids, values)):
            f.write(f"{k},{_fmt(x)},{_fmt(y)},{_fmt(v)}\n")


def read_image_csv(path) -> np.ndarray:
    m = read_matrix_csv(path)
    return m[:, 2].copy() if m.size else np.zeros(0)


def rasterize(values, mesh: Mesh) -> np.ndarray:
    """Cell grid (``ny x nx``, row 0 at the top) averaging each cell's two triangles."""
    v = np.asarray(values, dtype=float).reshape(mesh.ny, mesh.nx, 2).mean(axis=2)
    return v[::-1]


def write_pgm(path, values, mesh: Mesh, vmin: float | None = None, vmax: float | None = None,
              maxval: int = 255):
    """ASCII portable graymap (P2) of an element map, linearly scaled to ``[vmin, vmax]``."""
    img = rasterize(values, mesh)
    lo = float(img.min()) if vmin is None else vmin
    hi = float(img.max()) if vmax is None else vmax
    if hi > lo:
        q = np.rint((np.clip(img, lo, hi) - lo) / (hi - lo) * maxval).astype(int)
    else:
        q = np.zeros(img.shape, dtype=int)
    with _open_w(path) as f:
        f.write(f"P2\n{mesh.nx} {mesh.ny}\n{maxval}\n")
        for row in q:
            f.write(" ".join(str(v) for v in row) + "\n")


def read_pgm(path) -> np.ndarray:
    tok = [t for line in Path(path).read_text(encoding="ascii").splitlines()
           if not line.startswith("#") for t in line.split()]
    if not tok or tok[0] != "P2":
        raise FormatError(f"{path}: not an ASCII PGM")
    w, h = int(tok[1]), int(tok[2])
    data = np.array([int(t) for t in tok[4:]])
    if data.size != w * h:
        raise FormatError(f"{path}: expected {w * h} pixels, found {data.size}")
    return data.reshape(h, w)


# -- records -----------------------------------------------------------------

def write_series(path, times, data, columns):
    """Time-stamped CSV; ``columns`` is a name prefix or a list of column names."""
    data = np.asarray(data, dtype=float)
    data = data.reshape(len(times), 1 if data.ndim == 1 else data.shape[-1])
    names = ([f"{columns}{j}" for j in range(data.shape[1])] if isinstance(columns, str) else list(columns))
    if len(names) != data.shape[1]:
        raise ValueError("column names do not match the data width")
    with _open_w(path) as f:
        f.write(",".join(["t"] + names) + "\n")
        for t, row in zip(times, data):
            f.write(",".join([_fmt(t)] + [FLOAT_FMT % v for v in row]) + "\n")


def read_series(path):
    times, rows = [], []
    with open(path, newline="", encoding="ascii") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or header[0] != "t":
            raise FormatError(f"{path}:1: missing header starting with 't'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: unparseable number") from None
            times.append(vals[0])
            rows.append(vals[1:])
    return np.array(times), np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)


def write_record(directory, record: IndentationRecord):
    """Write ``force.csv``, ``voltages.csv``, ``pneumatic.csv`` (and ``contact.txt``)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_series(d / "force.csv", record.times, record.force, "force_n")
    write_series(d / "voltages.csv", record.times, record.voltages, "v_")
    write_series(d / "pneumatic.csv", record.times, record.pressures, "p_")
    if record.contact is not None:
        c = record.contact
        write_kv(d / "contact.txt", {"center_x_mm": c.center[0], "center_y_mm": c.center[1],
                                     "force_n": c.force, "profile_sigma_mm": c.profile_sigma,
                                     "onset_s": c.onset, "release_s": c.release})
    fr = record.meta.get("frame_rate")
    if fr is not None:
        write_kv(d / "meta.txt", {"frame_rate_hz": fr})


def read_record(directory) -> IndentationRecord:
    d = Path(directory)
    t_f, force = read_series(d / "force.csv")
    t_v, volts = read_series(d / "voltages.csv")
    t_p, press = read_series(d / "pneumatic.csv")
    if not (np.array_equal(t_f, t_v) and np.array_equal(t_f, t_p)):
        raise FormatError(f"{d}: force, voltage and pneumatic streams have different time stamps")
    contact = None
    if (d / "contact.txt").exists():
        kv = read_kv(d / "contact.txt")
        contact = ContactSpec((float(kv["center_x_mm"]), float(kv["center_y_mm"])), float(kv["force_n"]),
                              float(kv["profile_sigma_mm"]), float(kv["onset_s"]), float(kv["release_s"]))
    meta = {}
    if (d / "meta.txt").exists():
        meta["frame_rate"] = float(read_kv(d / "meta.txt")["frame_rate_hz"])
    return IndentationRecord(t_f, force.reshape(-1), volts, press, contact, meta)


# -- key/value ---------------------------------------------------------------

def _kv_value(v) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return ", ".join(_kv_value(x) for x in v)
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt(v)
    return str(v)


def write_kv(path, values: dict):
    with _open_w(path) as f:
        for k, v in values.items():
            f.write(f"{k} = {_kv_value(v)}\n")


def read_kv(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise FormatError(f"{path}:{lineno}: empty key")
        if k in out:
            raise FormatError(f"{path}:{lineno}: duplicate key {k!r}")
        out[k] = v
    return out


def write_calibration(path, cal):
    write_kv(path, {"pad_count": cal.pad_count, "gains_n_per_pa": list(cal.gains),
                    "fit_residuals_n": list(cal.fit_residuals)})


def read_calibration(path):
    from .fusion import PadCalibration

    kv = read_kv(path)
    try:
        gains = [float(v) for v in kv["gains_n_per_pa"].split(",")]
        resid = [float(v) for v in kv["fit_residuals_n"].split(",")]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad calibration file ({exc})") from None
    return PadCalibration(np.array(gains), np.array(resid))


def list_files(directory):
    """List files under ``directory`` in a stable order (relative POSIX paths)."""
    root = Path(directory)
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file())

