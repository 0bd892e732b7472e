"""Static SVG figures: skeleton poses with motion overlays, confusion heatmaps."""

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class RenderStyle:
    width: float = 360.0
    height: float = 420.0
    margin: float = 30.0
    joint_radius: float = 3.0
    bone_width: float = 2.0
    bone_color: str = "#404040"
    joint_color: str = "#1f3b73"
    motion_color: str = "#2ca02c"
    motion_opacity: float = 0.45
    motion_base: float = 2.0
    motion_scale: float = 400.0
    cell_size: float = 12.0
    ramp_low: str = "#f7fbff"
    ramp_high: str = "#08306b"

    def __post_init__(self):
        for name in ("width", "height", "joint_radius", "bone_width", "motion_base", "motion_scale", "cell_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")

    def motion_radius(self, magnitude):
        return self.motion_base + self.motion_scale * magnitude


def _num(v):
    s = f"{v:.4f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _svg(width, height, body):
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_num(width)}" height="{_num(height)}" '
        f'viewBox="0 0 {_num(width)} {_num(height)}">\n' + "".join(body) + "</svg>\n"
    )


def project(frame, style):
    """Orthographic view: drop depth, flip y, fit into the canvas keeping aspect."""
    xy = np.asarray(frame, dtype=np.float64)[:, :2] * np.array([1.0, -1.0])
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    box = np.array([style.width, style.height]) - 2 * style.margin
    s = float(np.min(box / span))
    offset = style.margin + (box - span * s) / 2
    return (xy - lo) * s + offset


def render_skeleton_svg(frame, graph, motion=None, style=RenderStyle()):
    """One pose as bones, joint markers and (optionally) motion circles.

    ``motion`` holds one magnitude per joint; joints with magnitude > 0 get a
    circle of radius ``motion_base + motion_scale * magnitude``.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.shape[0] != graph.joint_count or frame.shape[1] < 2:
        raise RenderError(f"pose of shape {frame.shape} does not match {graph.joint_count} joints")
    bad = np.flatnonzero(~np.all(np.isfinite(frame), axis=1))
    if bad.size:
        raise RenderError(f"non-finite coordinate at joint {int(bad[0])}")
    pts = project(frame, style)
    body = []
    if motion is not None:
        motion = np.asarray(motion, dtype=np.float64)
        if motion.shape != (graph.joint_count,):
            raise RenderError(f"motion has shape {motion.shape}, expected ({graph.joint_count},)")
        for j in np.flatnonzero(motion > 0):
            x, y = pts[j]
            body.append(
                f'<circle class="motion" data-joint="{j}" cx="{_num(x)}" cy="{_num(y)}" '
                f'r="{_num(style.motion_radius(motion[j]))}" fill="{style.motion_color}" '
                f'fill-opacity="{_num(style.motion_opacity)}"/>\n'
            )
    for i, j in graph.edges:
        (x1, y1), (x2, y2) = pts[i], pts[j]
        body.append(
            f'<line class="bone" x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" '
            f'stroke="{style.bone_color}" stroke-width="{_num(style.bone_width)}"/>\n'
        )
    for j, (x, y) in enumerate(pts):
        body.append(
            f'<circle class="joint" data-joint="{j}" cx="{_num(x)}" cy="{_num(y)}" '
            f'r="{_num(style.joint_radius)}" fill="{style.joint_color}"/>\n'
        )
    return _svg(style.width, style.height, body)


def _hex(color):
    color = color.lstrip("#")
    return np.array([int(color[i:i + 2], 16) for i in (0, 2, 4)], dtype=np.float64)


def ramp_color(value, style=RenderStyle()):
    """Linear ramp from ``ramp_low`` (0%) to ``ramp_high`` (100%)."""
    t = min(max(value / 100.0, 0.0), 1.0)
    rgb = (1 - t) * _hex(style.ramp_low) + t * _hex(style.ramp_high)
    return "#" + "".join(f"{int(round(c)):02x}" for c in rgb)


def render_confusion_svg(matrix, labels=None, style=RenderStyle()):
    """Heatmap of a row-percent matrix; zero cells are left blank."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.size == 0:
        m = m.reshape(0, 0)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise RenderError(f"confusion matrix must be square, got {m.shape}")
    n = m.shape[0]
    cs = style.cell_size
    pad = style.margin + (8 * max((len(str(l)) for l in labels), default=0) * cs / 12 if labels else 0)
    size = pad + n * cs + style.margin
    body = [f'<rect class="frame" x="{_num(pad)}" y="{_num(pad)}" width="{_num(n * cs)}" '
            f'height="{_num(n * cs)}" fill="none" stroke="#cccccc"/>\n']
    for i in range(n):
        for j in range(n):
            if m[i, j] <= 0:
                continue
            body.append(
                f'<rect class="cell" data-row="{i}" data-col="{j}" data-value="{_num(m[i, j])}" '
                f'x="{_num(pad + j * cs)}" y="{_num(pad + i * cs)}" width="{_num(cs)}" '
                f'height="{_num(cs)}" fill="{ramp_color(m[i, j], style)}"/>\n'
            )
    if labels:
        fs = _num(cs * 0.8)
        for i, name in enumerate(labels):
            text = escape(str(name))
            body.append(f'<text class="row-label" x="{_num(pad - 4)}" y="{_num(pad + (i + 0.75) * cs)}" '
                        f'font-size="{fs}" text-anchor="end">{text}</text>\n')
            x = pad + (i + 0.75) * cs
            body.append(f'<text class="col-label" x="{_num(x)}" y="{_num(pad - 4)}" font-size="{fs}" '
                        f'transform="rotate(-90 {_num(x)} {_num(pad - 4)})">{text}</text>\n')
    return _svg(size, size, body)
