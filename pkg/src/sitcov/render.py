"""Scene export as SVG: map geometry plus an optional ego trajectory.

The emitted geometry mirrors the map exactly (road rectangles carry their
world coordinates in the y-flipped SVG frame), so a plot can be
cross-checked against the map file.
"""

from __future__ import annotations

from .sim import RunResult
from .world import WorldMap, core_rect, road_endpoints, surface_rect


def _rect_svg(r, fill: str, opacity: float = 1.0, extra: str = "") -> str:
    return (
        f'<rect x="{r.xmin!r}" y="{r.ymin!r}" width="{r.width!r}" '
        f'height="{r.height!r}" fill="{fill}" fill-opacity="{opacity}"{extra} />'
    )


def scene_svg(m: WorldMap, result: RunResult | None = None) -> str:
    b = m.bounds
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{b.xmin!r} {b.ymin!r} '
        f'{b.width!r} {b.height!r}" width="800" height="800">',
        # y grows north; flip so north is up in the image
        f'<g transform="translate(0,{(b.ymin + b.ymax)!r}) scale(1,-1)">',
        _rect_svg(b, "#f4f2ec"),
    ]
    out.append('<g class="roads">')
    for r in m.roads:
        out.append(_rect_svg(surface_rect(m, r), "#b8b8b8"))
    out.append("</g>")
    out.append('<g class="centrelines" stroke="#e8c84a" stroke-width="0.4" stroke-dasharray="3,2.4">')
    for r in m.roads:
        ja, jb = road_endpoints(m, r)
        out.append(f'<line x1="{ja.x!r}" y1="{ja.y!r}" x2="{jb.x!r}" y2="{jb.y!r}" />')
    out.append("</g>")
    out.append('<g class="parked">')
    for p in m.parked:
        out.append(_rect_svg(p.box().aabb(), "#b03030"))
    out.append("</g>")
    if result is not None and result.trajectory:
        pts = " ".join(f"{rec.x!r},{rec.y!r}" for rec in result.trajectory)
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="#2060c0" stroke-width="0.8" />'
        )
        for e in result.events:
            colour = {"LEAVEROAD": "#f07000", "CROSSCENTRELINE": "#909000"}.get(e.kind, "#d00000")
            out.append(
                f'<circle cx="{e.x!r}" cy="{e.y!r}" r="2.2" fill="none" '
                f'stroke="{colour}" stroke-width="0.8" />'
            )
    out.append(
        f'<circle class="target" cx="{m.target.x!r}" cy="{m.target.y!r}" r="2.5" '
        'fill="#209020" />'
    )
    e = m.ego_start
    out.append(
        f'<circle class="ego-start" cx="{e.x!r}" cy="{e.y!r}" r="2" fill="#2040c0" />'
    )
    out.append("</g></svg>")
    return "\n".join(out) + "\n"
