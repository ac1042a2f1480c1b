"""CSV and SVG outputs.  Numbers are written with 17 significant digits so
files round-trip bit-exactly."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

RESPONSE_HEADER = "f_hz,k,re_pout,im_pout,abs_pout,abs_ideal"
LUMPED_HEADER = "f_hz,abs_p_pa"
HISTORY_HEADER = "iter,J,grad_inf_norm,step"
GRADCHECK_HEADER = "component,adjoint,fd,rel_err"
GRADIENT_HEADER = "vertex_id,grad_value"
DESIGN_HEADER = "vertex_id,phi_hat"


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_csv(path, header: str, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def write_response(path, response) -> Path:
    rows = zip(response.f, response.k, response.p_out.real, response.p_out.imag,
               np.abs(response.p_out), np.abs(response.p_ideal))
    return write_csv(path, RESPONSE_HEADER, rows)


def write_lumped(path, table) -> Path:
    return write_csv(path, LUMPED_HEADER, table)


def write_history(path, history) -> Path:
    rows = ((r.iteration, r.J, r.grad_inf_norm, r.step) for r in history)
    return write_csv(path, HISTORY_HEADER, rows)


def write_gradient(path, vertex_ids, values) -> Path:
    return write_csv(path, GRADIENT_HEADER, zip(vertex_ids, values))


def write_design(path, vertex_ids, design) -> Path:
    return write_csv(path, DESIGN_HEADER, zip(vertex_ids, design))


def read_design(path, vertex_ids) -> np.ndarray:
    """Read a design CSV and order it like ``vertex_ids``."""
    header, data = read_csv(path)
    if header != DESIGN_HEADER.split(","):
        raise ValueError(f"{path}: expected header {DESIGN_HEADER!r}")
    ids = data[:, 0].astype(int)
    lookup = dict(zip(ids, data[:, 1]))
    missing = [int(v) for v in vertex_ids if int(v) not in lookup]
    if missing or len(ids) != len(vertex_ids):
        raise ValueError(f"{path}: design does not match the mesh "
                         f"({len(ids)} entries, {len(missing)} missing)")
    return np.array([lookup[int(v)] for v in vertex_ids])


def response_svg(path, response, title: str = "") -> Path:
    """Line plot of |p_out| (and |p_ideal|) in dB re 1 Pa against log frequency."""
    f = np.asarray(response.f)
    curves = [("#1f77b4", np.abs(response.p_out))]
    if np.all(np.isfinite(response.p_ideal)):
        curves.append(("#888888", np.abs(response.p_ideal)))
    W, H, m = 640, 400, 50
    lf = np.log10(f)
    db = [20 * np.log10(np.maximum(c, 1e-300)) for _, c in curves]
    lo = min(float(np.min(d)) for d in db)
    hi = max(float(np.max(d)) for d in db)
    lo, hi = np.floor(lo / 10) * 10, np.ceil(hi / 10) * 10
    if hi == lo:
        hi = lo + 10
    span = lf.max() - lf.min() or 1.0

    def xy(x, y):
        return (m + (x - lf.min()) / span * (W - 2 * m),
                H - m - (y - lo) / (hi - lo) * (H - 2 * m))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
             f'<rect x="{m}" y="{m}" width="{W - 2 * m}" height="{H - 2 * m}" '
             'fill="none" stroke="black"/>']
    for level in np.arange(lo, hi + 1e-9, 10):
        _, y = xy(lf.min(), level)
        parts.append(f'<text x="{m - 5}" y="{y:.1f}" text-anchor="end" font-size="10">{level:.0f}</text>')
    for (color, _), d in zip(curves, db):
        pts = " ".join("%.2f,%.2f" % xy(a, b) for a, b in zip(lf, d))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
    parts.append(f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="11">'
                 f'frequency {f.min():.0f}-{f.max():.0f} Hz (log)</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
    return Path(path)
