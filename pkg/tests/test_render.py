import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from taylorskel.render import RenderError, RenderStyle, ramp_color, render_confusion_svg, render_skeleton_svg
from taylorskel.topology import build_ntu_graph

NS = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def graph():
    return build_ntu_graph()


def pose(seed=0):
    return np.random.default_rng(seed).normal(size=(25, 3))


def parse(svg):
    return ET.fromstring(svg.encode())


def by_class(root, tag, cls):
    return [e for e in root.iter(NS + tag) if e.get("class") == cls]


def test_skeleton_counts(graph):
    root = parse(render_skeleton_svg(pose(), graph))
    assert len(by_class(root, "line", "bone")) == 24
    assert len(by_class(root, "circle", "joint")) == 25
    assert by_class(root, "circle", "motion") == []


def test_motion_radius_example(graph):
    motion = np.zeros(25)
    motion[11] = 2.0
    svg = render_skeleton_svg(pose(), graph, motion, RenderStyle(motion_base=1, motion_scale=3))
    (circle,) = by_class(parse(svg), "circle", "motion")
    assert circle.get("data-joint") == "11" and float(circle.get("r")) == 7.0


@given(st.lists(st.floats(0.001, 1.0), min_size=2, max_size=2))
@settings(max_examples=50, deadline=None)
def test_motion_radius_monotone(mags):
    style = RenderStyle()
    lo, hi = sorted(mags)
    assert style.motion_radius(lo) <= style.motion_radius(hi)
    if lo < hi:
        assert style.motion_radius(lo) < style.motion_radius(hi)


def test_rendered_radii_follow_magnitudes(graph):
    motion = np.linspace(0.0, 0.05, 25)
    circles = by_class(parse(render_skeleton_svg(pose(), graph, motion)), "circle", "motion")
    radii = [float(c.get("r")) for c in sorted(circles, key=lambda c: int(c.get("data-joint")))]
    assert len(radii) == 24 and np.all(np.diff(radii) > 0)


def test_coordinates_inside_canvas(graph):
    style = RenderStyle()
    root = parse(render_skeleton_svg(pose(3) * 100, graph, style=style))
    for c in by_class(root, "circle", "joint"):
        assert 0 <= float(c.get("cx")) <= style.width and 0 <= float(c.get("cy")) <= style.height


def test_skeleton_errors(graph):
    with pytest.raises(RenderError):
        render_skeleton_svg(np.zeros((24, 3)), graph)
    bad = pose()
    bad[7, 1] = np.nan
    with pytest.raises(RenderError, match="joint 7"):
        render_skeleton_svg(bad, graph)
    with pytest.raises(RenderError):
        render_skeleton_svg(pose(), graph, np.zeros(3))


def test_skeleton_byte_identical(graph):
    assert render_skeleton_svg(pose(), graph, np.ones(25)) == render_skeleton_svg(pose(), graph, np.ones(25))


def test_identity_confusion_paints_diagonal():
    cells = by_class(parse(render_confusion_svg(np.eye(4) * 100)), "rect", "cell")
    assert sorted((c.get("data-row"), c.get("data-col")) for c in cells) == [(str(i), str(i)) for i in range(4)]


def test_ramp_darkens():
    def luminance(hex_color):
        return sum(int(hex_color[i:i + 2], 16) for i in (1, 3, 5))

    assert luminance(ramp_color(100)) < luminance(ramp_color(50)) < luminance(ramp_color(0))
    assert ramp_color(150) == ramp_color(100)


def test_empty_confusion_is_valid_svg():
    root = parse(render_confusion_svg(np.zeros((0, 0))))
    assert root.tag == NS + "svg" and by_class(root, "rect", "cell") == []


def test_confusion_labels_escaped():
    svg = render_confusion_svg(np.eye(2) * 100, labels=["a<b", "c&d"])
    texts = [t.text for t in by_class(parse(svg), "text", "row-label")]
    assert texts == ["a<b", "c&d"]


def test_confusion_must_be_square():
    with pytest.raises(RenderError):
        render_confusion_svg(np.ones((2, 3)))


def test_confusion_byte_identical():
    m = np.random.default_rng(0).uniform(0, 100, size=(5, 5))
    assert render_confusion_svg(m) == render_confusion_svg(m.copy())


def test_style_validation():
    with pytest.raises(ValueError):
        RenderStyle(motion_scale=0)
