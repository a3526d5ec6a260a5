"""Top-down SVG maps of a house, a trajectory and the agent's tree."""

from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np

from .house import HouseSpec

SCALE = 40.0  # pixels per meter
MARGIN = 1.0  # meters

ROOM_FILL = "#f4f1ea"
KIND_COLOR = {"vertex": "#8e44ad", "clique": "#16a085", "ghost-frontier": "#222222", "ghost-link": "#bbbbbb",
              "object": "#f1c40f"}


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    def __init__(self, bounds):
        x0, y0, x1, y1 = bounds
        self.x0, self.y1 = x0 - MARGIN, y1 + MARGIN
        w = (x1 - x0 + 2 * MARGIN) * SCALE
        h = (y1 - y0 + 2 * MARGIN) * SCALE
        self.root = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", version="1.1",
                               width=_fmt(w), height=_fmt(h), viewBox=f"0 0 {_fmt(w)} {_fmt(h)}")
        self.defs = ET.SubElement(self.root, "defs")

    def xy(self, p):
        # y grows downward in SVG
        return (float(p[0]) - self.x0) * SCALE, (self.y1 - float(p[1])) * SCALE

    def group(self, name):
        return ET.SubElement(self.root, "g", id=name)


def _gradient(t: float) -> str:
    """Dark blue at the start of the trajectory, light at the end."""
    a = np.array([12, 44, 132])
    b = np.array([160, 210, 255])
    c = (a + (b - a) * t).round().astype(int)
    return "#{:02x}{:02x}{:02x}".format(*c)


def render_topdown(house: HouseSpec, trace=None, tree=None, target: int | None = None, graph=None,
                   success_radius: float = 1.0, walls=None) -> str:
    """SVG document of ``house`` with an optional trace, tree snapshot and Voronoi overlay.

    ``trace`` is a (T, >=2) array of birth-frame positions; ``tree`` a
    TopoTree; ``graph`` a VoronoiLocalGraph; ``walls`` wall segments
    (x0, y0, x1, y1) to draw instead of plain room outlines.
    """
    cv = _Canvas(house.bounds)
    g = cv.group("rooms")
    for r in house.rooms:
        x0, y0, x1, y1 = r.bounds
        px, py = cv.xy((x0, y1))
        ET.SubElement(g, "rect", x=_fmt(px), y=_fmt(py), width=_fmt((x1 - x0) * SCALE),
                      height=_fmt((y1 - y0) * SCALE), fill=ROOM_FILL, stroke="#999999")
        cx, cy = cv.xy(r.center)
        t = ET.SubElement(g, "text", x=_fmt(cx), y=_fmt(cy), fill="#888888", **{"font-size": "10",
                                                                           "text-anchor": "middle"})
        t.text = house.labels[r.label]
    if walls is not None:
        g = cv.group("walls")
        for x0, y0, x1, y1 in np.asarray(walls, dtype=float):
            a, b = cv.xy((x0, y0)), cv.xy((x1, y1))
            ET.SubElement(g, "line", x1=_fmt(a[0]), y1=_fmt(a[1]), x2=_fmt(b[0]), y2=_fmt(b[1]),
                          stroke="#333333", **{"stroke-width": "3"})
    g = cv.group("objects")
    for o in house.objects:
        cx, cy = cv.xy(o.pos)
        is_target = target is not None and o.category == target
        ET.SubElement(g, "circle", cx=_fmt(cx), cy=_fmt(cy), r=_fmt(o.radius * SCALE),
                      fill="#e74c3c" if is_target else "#7f8c8d", opacity="0.7")
        if is_target:
            half = (o.radius + 0.1) * SCALE
            ET.SubElement(g, "rect", x=_fmt(cx - half), y=_fmt(cy - half), width=_fmt(2 * half),
                          height=_fmt(2 * half), fill="none", stroke="#e74c3c", **{"stroke-width": "2"})
            ET.SubElement(g, "circle", cx=_fmt(cx), cy=_fmt(cy), r=_fmt((o.radius + success_radius) * SCALE),
                          fill="#e74c3c", opacity="0.12", stroke="#e74c3c", **{"stroke-dasharray": "4 3"})
    if graph is not None and len(graph.vertices):
        g = cv.group("voronoi")
        for a, b in graph.edges:
            pa, pb = cv.xy(graph.vertices[a]), cv.xy(graph.vertices[b])
            ET.SubElement(g, "line", x1=_fmt(pa[0]), y1=_fmt(pa[1]), x2=_fmt(pb[0]), y2=_fmt(pb[1]),
                          stroke="#27ae60", **{"stroke-width": "1"})
    if tree is not None:
        g = cv.group("tree")
        for node in tree.nodes.values():
            if node.parent is not None:
                pa, pb = cv.xy(tree.nodes[node.parent].pos), cv.xy(node.pos)
                ET.SubElement(g, "line", x1=_fmt(pa[0]), y1=_fmt(pa[1]), x2=_fmt(pb[0]), y2=_fmt(pb[1]),
                              stroke="#c39bd3", **{"stroke-width": "0.8"})
        for node in tree.nodes.values():
            cx, cy = cv.xy(node.pos)
            ET.SubElement(g, "circle", cx=_fmt(cx), cy=_fmt(cy), r="3", fill=KIND_COLOR.get(node.kind, "#000000"),
                          opacity="1" if node.active else "0.35")
    if trace is not None and len(trace):
        pts = np.asarray(trace, dtype=float)[:, :2]
        g = cv.group("trajectory")
        n = len(pts)
        if n >= 2:
            grad = ET.SubElement(cv.defs, "linearGradient", id="trail", gradientUnits="userSpaceOnUse")
            a, b = cv.xy(pts[0]), cv.xy(pts[-1])
            grad.set("x1", _fmt(a[0]))
            grad.set("y1", _fmt(a[1]))
            grad.set("x2", _fmt(b[0] if abs(b[0] - a[0]) + abs(b[1] - a[1]) > 0 else a[0] + 1))
            grad.set("y2", _fmt(b[1]))
            ET.SubElement(grad, "stop", offset="0", **{"stop-color": _gradient(0.0)})
            ET.SubElement(grad, "stop", offset="1", **{"stop-color": _gradient(1.0)})
            coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in (cv.xy(p) for p in pts))
            ET.SubElement(g, "polyline", points=coords, fill="none", stroke="url(#trail)",
                          **{"stroke-width": "2", "stroke-linejoin": "round"})
        sx, sy = cv.xy(pts[0])
        ET.SubElement(g, "rect", x=_fmt(sx - 5), y=_fmt(sy - 5), width="10", height="10", fill="#2e86de")
    return ET.tostring(cv.root, encoding="unicode", xml_declaration=False)
