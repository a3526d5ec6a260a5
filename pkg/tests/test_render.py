import xml.etree.ElementTree as ET

import numpy as np
import pytest

from revolt.house import generate_house
from revolt.render import render_topdown
from revolt.sim import build_world, sample_start
from revolt.topo import TopoTree

NS = "{http://www.w3.org/2000/svg}"


def _find(root, tag):
    return root.findall(f".//{NS}{tag}") + root.findall(f".//{tag}")


@pytest.mark.parametrize("seed", range(20))
def test_svg_parses_with_trace_and_tree(seed):
    h = generate_house(seed)
    w = build_world(h)
    rng = np.random.default_rng(seed)
    start = np.array(sample_start(w, rng, int(w.categories[0])))
    trace = start[:2] + np.cumsum(rng.normal(0, 0.2, (30, 2)), axis=0)
    tree = TopoTree(root_pos=start[:2])
    tree.add_clique(trace[-1], tree.root)
    root = ET.fromstring(render_topdown(h, trace, tree, int(w.categories[0]), walls=w.walls))
    assert root.tag.endswith("svg")
    assert len(_find(root, "polyline")) == 1
    assert len(_find(root, "rect")) >= len(h.rooms)


def test_empty_trace_has_no_polyline():
    h = generate_house(1)
    root = ET.fromstring(render_topdown(h, np.zeros((0, 2))))
    assert _find(root, "polyline") == []


def test_two_point_trace_is_one_polyline():
    h = generate_house(2)
    x0, y0, _, _ = h.rooms[0].bounds
    trace = np.array([[x0 + 0.5, y0 + 0.5], [x0 + 1.5, y0 + 0.5]])
    root = ET.fromstring(render_topdown(h, trace))
    lines = _find(root, "polyline")
    assert len(lines) == 1
    assert len(lines[0].get("points").split()) == 2
