import io

import numpy as np
import pytest

from cornerfem import mesh as M
from cornerfem.geometry import build_domain


def test_uniform_square_quality(square):
    m = M.generate_graded_mesh(square, 0.25, {k: 1.0 for k in range(4)})
    d = m.diameters()
    assert d.max() / d.min() <= 4
    assert m.areas().sum() == pytest.approx(1.0, rel=1e-10)
    assert m.min_angle() >= M.QUALITY_FLOOR


def test_graded_innermost_layer(lshape):
    h = 1 / 8
    m = M.generate_graded_mesh(lshape, h, {0: 2 / 3})
    at_vertex = np.any(np.linalg.norm(m.nodes[m.triangles], axis=2) < 1e-14, axis=1)
    inner = m.diameters()[at_vertex].max()
    assert inner <= 2 * h ** 1.5
    assert m.areas().sum() == pytest.approx(3.0, rel=1e-10)


def test_grading_ratio_grows(lshape):
    ratios = []
    for h in (1 / 4, 1 / 8, 1 / 16):
        d = M.generate_graded_mesh(lshape, h, {0: 0.5}).diameters()
        ratios.append(d.max() / d.min())
    assert ratios[2] >= 2 * ratios[0]


def test_refine_two_triangles():
    d = build_domain({"vertices": [[0, 0], [1, 0], [1, 1], [0, 1]]})
    m = M.Mesh(d.vertices.copy(), np.array([[0, 1, 2], [0, 2, 3]]), np.array([[0, 1], [1, 2], [2, 3], [3, 0]]),
               ("D",) * 4, np.arange(4), {}, d)
    f = M.refine_uniform(m)
    assert (f.n_triangles, f.n_nodes) == (8, 9)
    assert np.array_equal(f.nodes[:4], m.nodes)
    assert f.min_angle() >= m.min_angle() - 1e-12
    assert np.array_equal(f.coarse_parent, np.repeat([0, 1], 4))


def test_round_trip(lshape):
    m = M.uniform_mesh(lshape, 0.25)
    text = M.canonical_text(m)
    again = M.read_mesh(io.StringIO(text))
    assert M.canonical_text(again) == text


def test_bad_index():
    text = "polymesh 1\n3 1 0\n0 0\n1 0\n0 1\n0 1 -1\n"
    with pytest.raises(M.MeshError, match="index out of range"):
        M.read_mesh(io.StringIO(text))


def test_duplicate_node_tolerated():
    text = "polymesh 1\n4 1 0\n0 0\n1 0\n0 1\n0 1\n0 1 3\n"
    m = M.read_mesh(io.StringIO(text))
    assert m.n_triangles == 1


@pytest.mark.parametrize("text, msg", [
    ("mesh 2\n", "header"),
    ("polymesh 1\n3 1 0\n0 0\n1 0\n0 1\n0 2 1\n", "negatively oriented"),
    ("polymesh 1\n3 1 0\n0 0\n1 1\n2 2\n0 1 2\n", "zero-area"),
])
def test_malformed(text, msg):
    with pytest.raises(M.MeshError, match=msg):
        M.read_mesh(io.StringIO(text))


def test_quality_floor_enforced(lshape):
    with pytest.raises(M.MeshError, match="quality floor"):
        M.generate_graded_mesh(lshape, 0.25, {0: 0.2}, quality_floor=25.0)


def test_vertex_nodes(lshape):
    m = M.uniform_mesh(lshape, 0.5)
    idx = m.vertex_nodes(lshape)
    assert np.allclose(m.nodes[idx], lshape.vertices)
