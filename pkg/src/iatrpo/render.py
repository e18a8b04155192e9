"""SVG rendering of episode trajectories: course outline, lane markings,
goals, and per-agent polylines. Multi-agent paths are drawn solid; matched
single-agent replays, when given, are dashed in the same color.
"""

from __future__ import annotations

from .envs import EnvGeometry

PALETTE = ("#ff7f0e", "#1f77b4", "#7f7f7f", "#2ca02c", "#d62728")
SCALE = 60.0
MARGIN = 24.0


def _fmt(x: float) -> str:
    return f"{x:.2f}"


class _Canvas:
    def __init__(self, geom: EnvGeometry):
        x0, y0, x1, y1 = geom.bounds
        self.x0, self.y1 = x0, y1
        self.width = (x1 - x0) * SCALE + 2 * MARGIN
        self.height = (y1 - y0) * SCALE + 2 * MARGIN

    def pt(self, x: float, y: float) -> tuple[float, float]:
        return (MARGIN + (x - self.x0) * SCALE, MARGIN + (self.y1 - y) * SCALE)


def _polyline(canvas, points, color, dashed=False, width=2.0) -> str:
    coords = " ".join("{},{}".format(_fmt(px), _fmt(py))
                      for px, py in (canvas.pt(x, y) for x, y in points))
    dash = ' stroke-dasharray="6,5"' if dashed else ""
    return (f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{_fmt(width)}"{dash}/>')


def render_trajectories(traces, geom: EnvGeometry, path=None, single_traces=None,
                        config_hash: str = "", seed=None) -> str:
    """Render episode traces to an SVG document (optionally written to path).

    ``traces``: list of EpisodeTrace; ``single_traces``: optional matching
    list whose entries are per-agent position arrays from the lone
    single-agent replays of the same episodes.
    """
    if not traces:
        raise ValueError("nothing to render")
    canvas = _Canvas(geom)
    parts = []
    parts.append(f'<svg xmlns="http://www.w3.org/2000/svg" '
                 f'width="{_fmt(canvas.width)}" height="{_fmt(canvas.height)}" '
                 f'viewBox="0 0 {_fmt(canvas.width)} {_fmt(canvas.height)}">')
    parts.append(f'<!-- format_version=1 config_hash={config_hash} seed={seed} -->')
    x0, y0, x1, y1 = geom.bounds
    ox, oy = canvas.pt(x0, y1)
    parts.append(f'<rect x="{_fmt(ox)}" y="{_fmt(oy)}" '
                 f'width="{_fmt((x1 - x0) * SCALE)}" height="{_fmt((y1 - y0) * SCALE)}" '
                 f'fill="#fcfcfc" stroke="#333333" stroke-width="2"/>')
    for lane_y in geom.lane_centers:
        parts.append(_polyline(canvas, [(x0, lane_y), (x1, lane_y)],
                               "#cccccc", dashed=True, width=1.0))
    for bx0, by0, bx1, by1 in geom.barriers:
        px, py = canvas.pt(bx0, by1)
        parts.append(f'<rect x="{_fmt(px)}" y="{_fmt(py)}" '
                     f'width="{_fmt((bx1 - bx0) * SCALE)}" height="{_fmt((by1 - by0) * SCALE)}" '
                     f'fill="#999999"/>')
    for ti, trace in enumerate(traces):
        for a, g in enumerate(trace.goals):
            gx, gy = canvas.pt(float(g[0]), float(g[1]))
            color = PALETTE[a % len(PALETTE)]
            parts.append(f'<circle cx="{_fmt(gx)}" cy="{_fmt(gy)}" '
                         f'r="{_fmt(geom.goal_radius * SCALE)}" fill="none" '
                         f'stroke="{color}" stroke-width="1.5" stroke-dasharray="3,3"/>')
        if single_traces is not None and ti < len(single_traces) and single_traces[ti] is not None:
            for a, pos in enumerate(single_traces[ti]):
                parts.append(_polyline(canvas, [(p[0], p[1]) for p in pos],
                                       PALETTE[a % len(PALETTE)], dashed=True))
        for a, pos in enumerate(trace.positions):
            color = PALETTE[a % len(PALETTE)]
            parts.append(_polyline(canvas, [(p[0], p[1]) for p in pos], color))
            sx, sy = canvas.pt(float(pos[0][0]), float(pos[0][1]))
            parts.append(f'<circle cx="{_fmt(sx)}" cy="{_fmt(sy)}" r="4" fill="{color}"/>')
    parts.append("</svg>")
    doc = "\n".join(parts) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(doc)
    return doc
