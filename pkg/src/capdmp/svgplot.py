"""Self-contained SVG plot emission (no plotting dependencies).

Two plot families: the velocity-space picture (target density contours with
metric ellipses, i.e. level curves of Normal(0, G(x)^{-1}) at grid points)
and the benchmark curves (efficiency ratio against per-event cost, and
against the spectral gap for the Gaussian sweep).  Contours come from a
small marching-squares tracer.  Every plot also gets a gnuplot-compatible
.dat file next to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .softabs import build_metric

SVG_W, SVG_H = 720, 540
MARGIN = 56


# ---------------------------------------------------------------------------
# Marching squares


def contour_segments(xs, ys, Z, level):
    """Line segments of the iso-contour Z = level on a rectilinear grid."""
    segs = []
    nx, ny = len(xs), len(ys)
    for i in range(nx - 1):
        for j in range(ny - 1):
            corners = [
                (xs[i], ys[j], Z[j, i]),
                (xs[i + 1], ys[j], Z[j, i + 1]),
                (xs[i + 1], ys[j + 1], Z[j + 1, i + 1]),
                (xs[i], ys[j + 1], Z[j + 1, i]),
            ]
            inside = [c[2] > level for c in corners]
            if all(inside) or not any(inside):
                continue
            pts = []
            for k in range(4):
                x0, y0, z0 = corners[k]
                x1, y1, z1 = corners[(k + 1) % 4]
                if (z0 > level) != (z1 > level):
                    t = (level - z0) / (z1 - z0)
                    pts.append((x0 + t * (x1 - x0), y0 + t * (y1 - y0)))
            for k in range(0, len(pts) - 1, 2):
                segs.append((pts[k], pts[k + 1]))
    return segs


# ---------------------------------------------------------------------------
# Metric ellipse geometry (kept as plain data so tests can inspect it)


@dataclass
class EllipseSpec:
    cx: float
    cy: float
    rx: float          # semi-axis (data units) along `angle`
    ry: float
    angle_deg: float


def metric_ellipses(target, region, grid_points: int, hardness: float,
                    fill_fraction: float = 0.42):
    """One-sigma ellipses of Normal(0, G(x)^{-1}) on a grid over `region`.

    The raw semi-axes 1/sqrt(f(lambda_i)) are rescaled jointly so the
    largest ellipse spans `fill_fraction` of a grid cell.
    """
    if target.d != 2:
        raise ContractViolation("metric plot requires a 2-d target")
    x_min, x_max, y_min, y_max = region
    gx = np.linspace(x_min, x_max, grid_points)
    gy = np.linspace(y_min, y_max, grid_points)
    raw = []
    for cy in gy:
        for cx in gx:
            metric = build_metric(target.hessian(np.array([cx, cy])), hardness)
            axes = 1.0 / np.sqrt(metric.soft_eigs)
            order = np.argsort(axes)[::-1]
            major, minor = axes[order[0]], axes[order[1]]
            vec = metric.eigvecs[:, order[0]]
            angle = math.degrees(math.atan2(vec[1], vec[0]))
            raw.append((cx, cy, major, minor, angle))
    biggest = max(r[2] for r in raw)
    cell = min((x_max - x_min) / max(grid_points - 1, 1),
               (y_max - y_min) / max(grid_points - 1, 1))
    scale = fill_fraction * cell / biggest if biggest > 0 else 1.0
    return [EllipseSpec(cx, cy, major * scale, minor * scale, angle)
            for cx, cy, major, minor, angle in raw]


# ---------------------------------------------------------------------------
# Minimal SVG scene


class SvgCanvas:
    def __init__(self, x_range, y_range, log_x=False, title=""):
        self.x_range = x_range
        self.y_range = y_range
        self.log_x = log_x
        self.parts = []
        self.title = title

    def _tx(self, x):
        lo, hi = self.x_range
        if self.log_x:
            x, lo, hi = math.log10(x), math.log10(lo), math.log10(hi)
        frac = (x - lo) / (hi - lo) if hi > lo else 0.5
        return MARGIN + frac * (SVG_W - 2 * MARGIN)

    def _ty(self, y):
        lo, hi = self.y_range
        frac = (y - lo) / (hi - lo) if hi > lo else 0.5
        return SVG_H - MARGIN - frac * (SVG_H - 2 * MARGIN)

    def line(self, p0, p1, color="#333", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{self._tx(p0[0]):.2f}" y1="{self._ty(p0[1]):.2f}" '
            f'x2="{self._tx(p1[0]):.2f}" y2="{self._ty(p1[1]):.2f}" '
            f'stroke="{color}" stroke-width="{width}"{d}/>'
        )

    def polyline(self, pts, color="#09c", width=1.6):
        coords = " ".join(f"{self._tx(x):.2f},{self._ty(y):.2f}" for x, y in pts)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{width}"/>'
        )

    def ellipse(self, spec: EllipseSpec, color="#c33"):
        cx, cy = self._tx(spec.cx), self._ty(spec.cy)
        sx = (SVG_W - 2 * MARGIN) / (self.x_range[1] - self.x_range[0])
        sy = (SVG_H - 2 * MARGIN) / (self.y_range[1] - self.y_range[0])
        # average the two pixel scales; close enough for display purposes
        s = 0.5 * (sx + sy)
        self.parts.append(
            f'<ellipse cx="0" cy="0" rx="{spec.rx * s:.2f}" ry="{spec.ry * s:.2f}" '
            f'transform="translate({cx:.2f},{cy:.2f}) rotate({-spec.angle_deg:.2f})" '
            f'fill="none" stroke="{color}" stroke-width="1.1" '
            f'data-rx="{spec.rx:.6g}" data-ry="{spec.ry:.6g}" '
            f'data-angle="{spec.angle_deg:.4f}"/>'
        )

    def text(self, x_px, y_px, s, size=12, anchor="middle", color="#222"):
        self.parts.append(
            f'<text x="{x_px:.1f}" y="{y_px:.1f}" font-size="{size}" '
            f'font-family="sans-serif" text-anchor="{anchor}" fill="{color}">{s}</text>'
        )

    def axes(self, x_label="", y_label=""):
        self.parts.append(
            f'<rect x="{MARGIN}" y="{MARGIN}" width="{SVG_W - 2 * MARGIN}" '
            f'height="{SVG_H - 2 * MARGIN}" fill="none" stroke="#222"/>'
        )
        if self.log_x:
            lo = math.ceil(math.log10(self.x_range[0]) - 1e-9)
            hi = math.floor(math.log10(self.x_range[1]) + 1e-9)
            ticks = [10.0 ** k for k in range(lo, hi + 1)]
        else:
            ticks = np.linspace(self.x_range[0], self.x_range[1], 6)
        for t in ticks:
            px = self._tx(t)
            self.parts.append(
                f'<line x1="{px:.1f}" y1="{SVG_H - MARGIN}" x2="{px:.1f}" '
                f'y2="{SVG_H - MARGIN + 5}" stroke="#222"/>'
            )
            label = f"1e{int(round(math.log10(t)))}" if self.log_x else f"{t:.3g}"
            self.text(px, SVG_H - MARGIN + 18, label, size=11)
        for t in np.linspace(self.y_range[0], self.y_range[1], 6):
            py = self._ty(t)
            self.parts.append(
                f'<line x1="{MARGIN - 5}" y1="{py:.1f}" x2="{MARGIN}" '
                f'y2="{py:.1f}" stroke="#222"/>'
            )
            self.text(MARGIN - 8, py + 4, f"{t:.3g}", size=11, anchor="end")
        if x_label:
            self.text(SVG_W / 2, SVG_H - 12, x_label)
        if y_label:
            self.parts.append(
                f'<text x="14" y="{SVG_H / 2}" font-size="12" font-family="sans-serif" '
                f'text-anchor="middle" fill="#222" '
                f'transform="rotate(-90 14 {SVG_H / 2})">{y_label}</text>'
            )
        if self.title:
            self.text(SVG_W / 2, MARGIN - 14, self.title, size=14)

    def to_svg(self) -> str:
        body = "\n".join(self.parts)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" '
            f'height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">\n'
            f'<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>\n'
            f"{body}\n</svg>\n"
        )


PALETTE = ["#0b62a4", "#c23b22", "#2e8b57", "#8b5cf6", "#b8860b", "#d946ef"]


def write_metric_plot(target, region, grid_points, hardness, path,
                      contour_grid: int = 140):
    """Density contours plus metric ellipses; returns the ellipse specs."""
    x_min, x_max, y_min, y_max = region
    xs = np.linspace(x_min, x_max, contour_grid)
    ys = np.linspace(y_min, y_max, contour_grid)
    Z = np.array([[target.log_density(np.array([x, y])) for x in xs] for y in ys])
    top = Z.max()
    canvas = SvgCanvas((x_min, x_max), (y_min, y_max),
                       title=f"velocity space: {target.name}")
    canvas.axes("x1", "x2")
    for offset in (0.5, 2.0, 4.5, 8.0, 12.5):
        for p0, p1 in contour_segments(xs, ys, Z, top - offset):
            canvas.line(p0, p1, color="#9bb7d4", width=0.9)
    specs = metric_ellipses(target, region, grid_points, hardness)
    for spec in specs:
        canvas.ellipse(spec)
    with open(path, "w") as fh:
        fh.write(canvas.to_svg())
    dat = str(path).rsplit(".", 1)[0] + ".dat"
    with open(dat, "w") as fh:
        fh.write("# cx cy rx ry angle_deg\n")
        for s in specs:
            fh.write(f"{s.cx:.10g} {s.cy:.10g} {s.rx:.10g} {s.ry:.10g} {s.angle_deg:.10g}\n")
    return specs


def write_ratio_plot(ratio_rows, path, title="efficiency ratio",
                     ratio_kind="matched"):
    """r(epsilon) curves, one per beta, with the neutral line at ratio 1.

    `ratio_rows` holds dicts with beta/epsilon/ratio/ratio_kind fields (the
    summary rows of one target).  Returns the number of curves drawn.
    """
    rows = [r for r in ratio_rows
            if r.get("ratio") is not None and r.get("ratio_kind") == ratio_kind]
    if not rows:
        return 0
    betas = sorted({r["beta"] for r in rows})
    eps = sorted({r["epsilon"] for r in rows})
    eps_lo = max(min(eps), 1e-300)
    values = [r["ratio"] for r in rows]
    y_lo = min(min(values), 0.8)
    y_hi = max(max(values), 1.2)
    canvas = SvgCanvas((eps_lo, max(eps)), (y_lo, y_hi), log_x=True, title=title)
    canvas.axes("per-event extra cost epsilon (s)", "ratio (above 1 favors CA-BPS)")
    canvas.line((eps_lo, 1.0), (max(eps), 1.0), color="#c00", width=1.2, dash="6,4")
    for idx, beta in enumerate(betas):
        pts = sorted(
            ((r["epsilon"], r["ratio"]) for r in rows if r["beta"] == beta))
        color = PALETTE[idx % len(PALETTE)]
        canvas.polyline(pts, color=color)
        canvas.text(SVG_W - MARGIN - 6, MARGIN + 16 + 16 * idx,
                    f"beta={beta:g}", anchor="end", color=color)
    with open(path, "w") as fh:
        fh.write(canvas.to_svg())
    dat = str(path).rsplit(".", 1)[0] + ".dat"
    with open(dat, "w") as fh:
        fh.write("# beta epsilon ratio\n")
        for r in sorted(rows, key=lambda r: (r["beta"], r["epsilon"])):
            fh.write(f"{r['beta']:.10g} {r['epsilon']:.10g} {r['ratio']:.10g}\n")
    return len(betas)


def write_delta_sweep_plot(points_by_beta, path, title="efficiency vs spectral gap"):
    """r(0) against the Gaussian spectral gap, log-delta axis, line at 1."""
    if not points_by_beta:
        return 0
    all_pts = [p for pts in points_by_beta.values() for p in pts]
    deltas = [p[0] for p in all_pts]
    values = [p[1] for p in all_pts]
    canvas = SvgCanvas((min(deltas), max(deltas)),
                       (min(min(values), 0.8), max(max(values), 1.2)),
                       log_x=True, title=title)
    canvas.axes("spectral gap delta", "ratio (above 1 favors CA-BPS)")
    canvas.line((min(deltas), 1.0), (max(deltas), 1.0), color="#c00",
                width=1.2, dash="6,4")
    for idx, (beta, pts) in enumerate(sorted(points_by_beta.items())):
        color = PALETTE[idx % len(PALETTE)]
        canvas.polyline(sorted(pts), color=color)
        canvas.text(SVG_W - MARGIN - 6, MARGIN + 16 + 16 * idx,
                    f"beta={beta:g}", anchor="end", color=color)
    with open(path, "w") as fh:
        fh.write(canvas.to_svg())
    dat = str(path).rsplit(".", 1)[0] + ".dat"
    with open(dat, "w") as fh:
        fh.write("# beta delta ratio0\n")
        for beta, pts in sorted(points_by_beta.items()):
            for delta, val in sorted(pts):
                fh.write(f"{beta:.10g} {delta:.10g} {val:.10g}\n")
    return len(points_by_beta)
