"""SVG and DOT output for co-registered group and subtracted networks.

Nodes: the outer ring grows with how often a code responds to other codes;
the inner disc (size and opacity) with its self-transition weight.  Each
drawn direction of an edge is a triangle with its base on the source node
and its tip at the edge midpoint; a dark chevron marks the dominant direction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .errors import DataError
from .ona import GroupNetwork, NodeLayout, SubtractedNetwork


@dataclass(frozen=True)
class RenderStyle:
    width: int = 800
    height: int = 800
    edge_scale: float = 24.0
    node_scale: float = 40.0
    min_edge_fraction: float = 0.05
    color_a: str = "#d7301f"
    color_b: str = "#2b8cbe"
    node_color: str = "#555555"
    font_size: int = 12

    def __post_init__(self):
        if self.edge_scale <= 0 or self.node_scale <= 0:
            raise ValueError("render scales must be positive")
        if not 0 <= self.min_edge_fraction <= 1:
            raise ValueError("min_edge_fraction must lie in [0, 1]")


def _f(v):
    s = f"{v:.3f}"
    return "0.000" if s == "-0.000" else s


class _Canvas:
    """Maps layout coordinates onto the SVG viewport (y grows upwards in layout space)."""

    def __init__(self, layout: NodeLayout, codes, style: RenderStyle):
        idx = [layout.codes.index(c) for c in codes]
        pts = layout.points[idx] if idx else np.zeros((0, 2))
        extent = float(np.max(np.abs(pts))) if pts.size else 0.0
        self.scale = 0.38 * min(style.width, style.height) / (extent if extent > 0 else 1.0)
        self.cx, self.cy = style.width / 2.0, style.height / 2.0
        self.pos = {c: self.map(p) for c, p in zip(codes, pts)}

    def map(self, p):
        return (self.cx + self.scale * float(p[0]), self.cy - self.scale * float(p[1]))


def _check_layout(layout: NodeLayout, codes, weights):
    W = np.asarray(weights)
    for i, c in enumerate(codes):
        used = np.any(W[i, :] != 0) or np.any(W[:, i] != 0)
        if used and c not in layout.codes:
            raise DataError(f"code {c} has nonzero weight but no position in the node layout")
    return [c for c in codes if c in layout.codes]


def _triangle(src, dst, width):
    (x0, y0), (x1, y1) = src, dst
    mx, my = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    length = math.hypot(x1 - x0, y1 - y0)
    if length == 0:
        nx, ny = 0.0, 0.0
    else:
        nx, ny = -(y1 - y0) / length, (x1 - x0) / length
    h = width / 2.0
    return [(x0 + nx * h, y0 + ny * h), (x0 - nx * h, y0 - ny * h), (mx, my)]


def _chevron(src, dst, size):
    (x0, y0), (x1, y1) = src, dst
    mx, my = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    length = math.hypot(x1 - x0, y1 - y0)
    if length == 0:
        return []
    ux, uy = (x1 - x0) / length, (y1 - y0) / length
    nx, ny = -uy, ux
    tip = (mx + ux * size, my + uy * size)
    return [tip, (mx - ux * size + nx * size, my - uy * size + ny * size),
            (mx - ux * size * 0.3, my - uy * size * 0.3),
            (mx - ux * size + -nx * size, my - uy * size + -ny * size)]


def _points(pts):
    return " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)


def _header(style, title):
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{style.width}" '
           f'height="{style.height}" viewBox="0 0 {style.width} {style.height}">',
           f'<rect x="0" y="0" width="{style.width}" height="{style.height}" fill="#ffffff"/>']
    if title:
        out.append(f'<text x="{_f(style.width / 2)}" y="{_f(style.font_size * 1.5)}" '
                   f'font-size="{style.font_size + 2}" text-anchor="middle" '
                   f'font-family="sans-serif">{escape(title)}</text>')
    return out


def _edge_group(a, b, canvas, weights_ab, colors, opacities, style):
    """One <g> for the pair; weights_ab = (w(a->b), w(b->a)) magnitudes, 0 = not drawn."""
    pa, pb = canvas.pos[a], canvas.pos[b]
    parts = [f'<g class="edge" data-pair="{escape(a)}|{escape(b)}">']
    for (src, dst, w, color, op, s, d) in (
            (pa, pb, weights_ab[0], colors[0], opacities[0], a, b),
            (pb, pa, weights_ab[1], colors[1], opacities[1], b, a)):
        if w > 0:
            tri = _triangle(src, dst, w * style.edge_scale)
            parts.append(f'<polygon class="direction" data-from="{escape(s)}" data-to="{escape(d)}" '
                         f'data-width="{_f(w * style.edge_scale)}" points="{_points(tri)}" '
                         f'fill="{color}" fill-opacity="{_f(op)}"/>')
    if weights_ab[0] != weights_ab[1]:
        src, dst = (pa, pb) if weights_ab[0] > weights_ab[1] else (pb, pa)
        chev = _chevron(src, dst, 5.0)
        if chev:
            parts.append(f'<polygon class="arrow" points="{_points(chev)}" fill="#222222"/>')
    parts.append("</g>")
    return parts


def _node_group(code, canvas, ring, disc, disc_color, disc_opacity, style):
    x, y = canvas.pos[code]
    ring_r = max(ring * style.node_scale, 0.0)
    disc_r = max(disc * style.node_scale, 0.0)
    return [
        f'<g class="node" data-code="{escape(code)}">',
        f'<circle class="response" cx="{_f(x)}" cy="{_f(y)}" r="{_f(ring_r + 3.0)}" '
        f'fill="none" stroke="{style.node_color}" stroke-width="1.5"/>',
        f'<circle class="self" cx="{_f(x)}" cy="{_f(y)}" r="{_f(disc_r)}" fill="{disc_color}" '
        f'fill-opacity="{_f(disc_opacity)}"/>',
        f'<text x="{_f(x)}" y="{_f(y - ring_r - 6.0)}" font-size="{style.font_size}" '
        f'text-anchor="middle" font-family="sans-serif">{escape(code)}</text>',
        "</g>",
    ]


def edge_threshold(weights, style: RenderStyle):
    W = np.abs(np.asarray(weights, dtype=float)).copy()
    np.fill_diagonal(W, 0.0)
    top = float(W.max()) if W.size else 0.0
    return style.min_edge_fraction * top, top


def render_network(layout: NodeLayout, network: GroupNetwork, style: RenderStyle = RenderStyle(),
                   color: str | None = None, title: str | None = None) -> str:
    codes = _check_layout(layout, network.codes, network.weights)
    color = color or style.color_a
    canvas = _Canvas(layout, codes, style)
    W = network.weights
    idx = {c: network.codes.index(c) for c in codes}
    thr, top = edge_threshold(W, style)
    out = _header(style, title)
    for i, a in enumerate(codes):
        for b in codes[i + 1:]:
            wab, wba = float(W[idx[a], idx[b]]), float(W[idx[b], idx[a]])
            drawn = tuple(w if (w > 0 and w >= thr) else 0.0 for w in (wab, wba))
            if any(drawn):
                out += _edge_group(a, b, canvas, drawn, (color, color), (0.85, 0.85), style)
    response = network.response_strength
    self_w = network.self_strength
    self_top = float(self_w.max()) if self_w.size and self_w.max() > 0 else 1.0
    for c in codes:
        k = idx[c]
        out += _node_group(c, canvas, float(response[k]), float(self_w[k]), color,
                           min(1.0, float(self_w[k]) / self_top), style)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_subtracted(layout: NodeLayout, subtracted: SubtractedNetwork,
                      style: RenderStyle = RenderStyle(), title: str | None = None) -> str:
    codes = _check_layout(layout, subtracted.codes, subtracted.weights)
    canvas = _Canvas(layout, codes, style)
    D = subtracted.weights
    idx = {c: subtracted.codes.index(c) for c in codes}
    thr, top = edge_threshold(D, style)

    def paint(v):
        if v == 0:
            return style.node_color
        return style.color_a if v > 0 else style.color_b

    out = _header(style, title)
    for i, a in enumerate(codes):
        for b in codes[i + 1:]:
            dab, dba = float(D[idx[a], idx[b]]), float(D[idx[b], idx[a]])
            mags = tuple(abs(v) if (v != 0 and abs(v) >= thr) else 0.0 for v in (dab, dba))
            if any(mags):
                out += _edge_group(a, b, canvas, mags, (paint(dab), paint(dba)),
                                   tuple(min(1.0, m / top) if top > 0 else 0.0 for m in mags), style)
    diag = np.diag(D)
    response = D.sum(axis=0) - diag
    self_top = float(np.max(np.abs(diag))) if diag.size and np.max(np.abs(diag)) > 0 else 1.0
    for c in codes:
        k = idx[c]
        out += _node_group(c, canvas, abs(float(response[k])), abs(float(diag[k])), paint(diag[k]),
                           min(1.0, abs(float(diag[k])) / self_top), style)
    y0 = style.height - 2.5 * style.font_size
    out += [
        '<g class="legend">',
        f'<rect x="10" y="{_f(y0)}" width="12" height="12" fill="{style.color_a}"/>',
        f'<text x="28" y="{_f(y0 + 10)}" font-size="{style.font_size}" font-family="sans-serif">'
        f'{escape(subtracted.label_a)} stronger</text>',
        f'<rect x="10" y="{_f(y0 + style.font_size + 4)}" width="12" height="12" fill="{style.color_b}"/>',
        f'<text x="28" y="{_f(y0 + style.font_size + 14)}" font-size="{style.font_size}" '
        f'font-family="sans-serif">{escape(subtracted.label_b)} stronger</text>',
        "</g>",
    ]
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_dot(layout: NodeLayout, network: GroupNetwork, style: RenderStyle | None = None) -> str:
    """Directed DOT graph; edge ``weight`` attributes carry mean weights to 6 decimals.

    Codes with no weight at all are left out, so an empty network is header-only.
    """
    lines = ["digraph ona {"]
    W = network.weights
    for i, c in enumerate(network.codes):
        if not (np.any(W[i, :] != 0) or np.any(W[:, i] != 0)):
            continue
        attrs = [f'self_weight="{W[i, i]:.6f}"']
        if c in layout.codes:
            x, y = layout.point(c)
            attrs.insert(0, f'pos="{x:.6f},{y:.6f}!"')
        lines.append(f'  "{c}" [{", ".join(attrs)}];')
    for i, a in enumerate(network.codes):
        for j, b in enumerate(network.codes):
            if i != j and W[i, j] != 0:
                lines.append(f'  "{a}" -> "{b}" [weight="{W[i, j]:.6f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
