"""Quadrature on triangles and boundary segments.

Triangle rules are collapsed Gauss-Jacobi products.  All nodes are strictly
interior, so singular coefficients are never evaluated at a vertex.  The
collapsed corner of the rule is the third local vertex, which is where a
corner singularity is placed.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def triangle_rule(order):
    """Barycentric nodes ``(n, 3)`` and weights summing to 1/2.

    Exact for polynomials of total degree ``order``.
    """
    n = max(1, (order + 2) // 2)
    s, ws = roots_legendre(n)
    t, wt = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (s + 1.0)
    t = 0.5 * (t + 1.0)
    ws = 0.5 * ws
    wt = 0.25 * wt
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    # reference point (x, y) = (S (1 - T), T); collapse at (0, 1)
    x = (S * (1.0 - T)).ravel()
    y = T.ravel()
    bary = np.column_stack([1.0 - x - y, x, y])
    return bary, W.ravel()


@lru_cache(maxsize=None)
def line_rule(order):
    """Gauss-Legendre nodes on (0, 1) and weights summing to 1."""
    n = max(1, (order + 2) // 2)
    s, w = roots_legendre(n)
    return 0.5 * (s + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _subdivided_rule(order, depth):
    """Rule on the reference triangle refined ``depth`` times toward local vertex 2.

    Returns barycentric nodes with respect to the unrefined triangle.
    """
    bary0, w0 = triangle_rule(order)
    corners = np.eye(3)
    pts, wts = [], []
    scale = 1.0
    for _ in range(depth):
        a, b, c = corners
        mab, mbc, mca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        for child in ((a, mab, mca), (mab, b, mbc), (mab, mbc, mca)):
            pts.append(bary0 @ np.array(child))
            wts.append(w0 * scale / 4)
        corners = np.array([mca, mbc, c])
        scale /= 4
    pts.append(bary0 @ corners)
    wts.append(w0 * scale)
    return np.vstack(pts), np.concatenate(wts)


@dataclass(frozen=True)
class Cloud:
    """Quadrature points over a mesh.

    ``elem`` is the owning triangle of each point and ``bary`` its
    barycentric coordinates there, so finite-element functions can be
    evaluated at the same points as closed-form ones.
    """
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    elem: np.ndarray
    bary: np.ndarray

    @property
    def points(self):
        return np.column_stack([self.x, self.y])

    def restrict(self, mask):
        return Cloud(self.x[mask], self.y[mask], self.w[mask], self.elem[mask], self.bary[mask])


def mesh_cloud(mesh, order, singular_nodes=(), depth=4):
    """Quadrature cloud on ``mesh``.

    Triangles touching a node in ``singular_nodes`` are refined ``depth``
    times in dyadic rings toward that node before the rule is applied.
    """
    tri = mesh.triangles
    nodes = mesh.nodes
    singular = np.zeros(len(nodes), bool)
    singular[list(singular_nodes)] = True
    hit = singular[tri]
    bary0, w0 = triangle_rule(order)
    baryd, wd = _subdivided_rule(order, depth)

    xs, ws, es, bs = [], [], [], []
    area2 = _double_areas(nodes, tri)

    plain = np.flatnonzero(~hit.any(axis=1))
    if len(plain):
        # collapse the regular rule at local vertex 2 for every triangle
        p = np.einsum("qk,tkd->tqd", bary0, nodes[tri[plain]])
        xs.append(p.reshape(-1, 2))
        ws.append((area2[plain, None] * w0[None, :]).ravel())
        es.append(np.repeat(plain, len(w0)))
        bs.append(np.tile(bary0, (len(plain), 1)))

    for t in np.flatnonzero(hit.any(axis=1)):
        local = tri[t]
        for corner in np.flatnonzero(hit[t]):
            # rotate so the singular node is local vertex 2
            perm = [(corner + 1) % 3, (corner + 2) % 3, corner]
            b = np.zeros_like(baryd)
            b[:, perm] = baryd
            # several singular corners share the triangle through a partition of unity
            lam = b[:, hit[t]] ** 4
            part = b[:, corner] ** 4 / lam.sum(axis=1)
            xs.append(b @ nodes[local])
            ws.append(area2[t] * wd * part)
            es.append(np.full(len(wd), t))
            bs.append(b)
    pts = np.vstack(xs)
    return Cloud(pts[:, 0].copy(), pts[:, 1].copy(), np.concatenate(ws), np.concatenate(es), np.vstack(bs))


def _double_areas(nodes, tri):
    p0, p1, p2 = nodes[tri[:, 0]], nodes[tri[:, 1]], nodes[tri[:, 2]]
    return (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
