"""Plain SVG renderings of lattice sets and projection plans."""

from __future__ import annotations

import numpy as np

from . import __version__
from .lattice_geometry import LatticeSet

_PX = 400.0


def _frame(points_lo, points_hi):
    span = float(np.max(points_hi - points_lo))
    return points_lo, _PX / span if span > 0 else 1.0


def _rects(cells, lat, lo, k, style):
    h = lat.h
    out = []
    corners = np.asarray(lat.origin) + h * np.asarray(cells, float)
    for x, y in corners:
        # rows of the mask run along the first axis; draw it left to right
        out.append(f'<rect x="{(x - lo[0]) * k:.3f}" y="{(y - lo[1]) * k:.3f}" '
                   f'width="{h * k:.3f}" height="{h * k:.3f}" {style}/>')
    return out


def _document(body, size):
    w, hgt = size
    head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{hgt:.0f}" '
            f'viewBox="0 0 {w:.3f} {hgt:.3f}">',
            f"<!-- wproj {__version__} -->",
            '<defs><pattern id="hatch" width="4" height="4" patternUnits="userSpaceOnUse" '
            'patternTransform="rotate(45)"><line x1="0" y1="0" x2="0" y2="4" stroke="#c0392b" '
            'stroke-width="1.5"/></pattern></defs>',
            f'<rect width="{w:.3f}" height="{hgt:.3f}" fill="white"/>']
    return "\n".join(head + body + ["</svg>"]) + "\n"


def set_svg(E: LatticeSet) -> str:
    lat = E.lattice
    cells = E.cells
    if cells.size == 0:
        return _document([], (_PX, _PX))
    lo = np.asarray(lat.origin) + lat.h * cells.min(axis=0) - lat.h
    hi = np.asarray(lat.origin) + lat.h * (cells.max(axis=0) + 1) + lat.h
    lo, k = _frame(lo, hi)
    body = _rects(cells, lat, lo, k, 'fill="#2c3e50"')
    return _document(body, (hi - lo) * k)


def projection_svg(E: LatticeSet, result, max_segments: int = 400) -> str:
    """E filled, the optimal exterior set hatched, a subsample of the plan as segments."""
    lat = E.lattice
    src = E.cells
    tgt = result.target_cells
    allc = np.vstack([src, tgt])
    lo = np.asarray(lat.origin) + lat.h * allc.min(axis=0) - lat.h
    hi = np.asarray(lat.origin) + lat.h * (allc.max(axis=0) + 1) + lat.h
    lo, k = _frame(lo, hi)
    body = _rects(src, lat, lo, k, 'fill="#2c3e50"')
    body += _rects(tgt, lat, lo, k, 'fill="url(#hatch)" stroke="none"')
    pl = result.plan
    n = pl.src_index.size
    step = max(1, -(-n // max_segments))
    a = lat.centers(result.source_cells[pl.src_index[::step]])
    b = lat.centers(result.sink_cells[pl.dst_index[::step]])
    for (x0, y0), (x1, y1) in zip(a, b):
        body.append(f'<line x1="{(x0 - lo[0]) * k:.3f}" y1="{(y0 - lo[1]) * k:.3f}" '
                    f'x2="{(x1 - lo[0]) * k:.3f}" y2="{(y1 - lo[1]) * k:.3f}" '
                    'stroke="#f39c12" stroke-width="0.6"/>')
    return _document(body, (hi - lo) * k)
