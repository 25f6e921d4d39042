"""Curvilinear polygonal domains, the vertex weight r_Omega and polar charts.

A domain is a set of boundary loops.  Every loop is a cyclic sequence of
edges joining vertices; each edge is a straight segment, a polyline or a
circular arc and carries a boundary label ``"D"`` (Dirichlet) or ``"N"``
(Neumann).  Outer loops run counterclockwise and holes clockwise, so the
domain always lies to the left of the traversal direction.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from shapely.geometry import LinearRing, Polygon

GEOMETRIC = "geometric"
ARTIFICIAL = "artificial"
DIRICHLET = "D"
NEUMANN = "N"

_LABELS = {"D": DIRICHLET, "N": NEUMANN, "dirichlet": DIRICHLET, "neumann": NEUMANN}
_FLAT_TOL = 1e-9


class DomainError(ValueError):
    """Raised for an invalid domain description."""


@dataclass(frozen=True)
class Edge:
    start: int
    end: int
    label: str
    curve: str = "line"
    # polyline: interior points; arc: the circle center
    points: tuple = ()
    center: tuple | None = None
    ccw: bool = True

    def sample(self, p0, p1, n):
        """Return ``n + 1`` points from ``p0`` to ``p1`` along the curve."""
        p0 = np.asarray(p0, float)
        p1 = np.asarray(p1, float)
        if self.curve == "arc":
            c = np.asarray(self.center, float)
            t0, t1 = self._arc_angles(p0, p1)
            t = np.linspace(t0, t1, n + 1)
            rad = np.linalg.norm(p0 - c)
            pts = c + rad * np.column_stack([np.cos(t), np.sin(t)])
            pts[0], pts[-1] = p0, p1
            return pts
        knots = np.vstack([p0, *[np.asarray(q, float) for q in self.points], p1])
        seg = np.linalg.norm(np.diff(knots, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        target = np.linspace(0.0, s[-1], n + 1)
        if self.curve == "polyline" and n == len(knots) - 1:
            return knots.copy()
        out = np.column_stack([np.interp(target, s, knots[:, 0]), np.interp(target, s, knots[:, 1])])
        out[0], out[-1] = p0, p1
        return out

    def _arc_angles(self, p0, p1):
        c = np.asarray(self.center, float)
        t0 = math.atan2(p0[1] - c[1], p0[0] - c[0])
        t1 = math.atan2(p1[1] - c[1], p1[0] - c[0])
        if self.ccw:
            while t1 <= t0:
                t1 += 2 * math.pi
        else:
            while t1 >= t0:
                t1 -= 2 * math.pi
        return t0, t1

    def length(self, p0, p1):
        if self.curve == "arc":
            t0, t1 = self._arc_angles(np.asarray(p0, float), np.asarray(p1, float))
            return abs(t1 - t0) * float(np.linalg.norm(np.asarray(p0) - np.asarray(self.center)))
        pts = self.sample(p0, p1, max(1, len(self.points) + 1))
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())

    def tangent(self, p0, p1, at_start=True):
        """Unit tangent in the traversal direction at one endpoint."""
        p0 = np.asarray(p0, float)
        p1 = np.asarray(p1, float)
        if self.curve == "arc":
            c = np.asarray(self.center, float)
            q = p0 if at_start else p1
            radial = q - c
            t = np.array([-radial[1], radial[0]]) if self.ccw else np.array([radial[1], -radial[0]])
            return t / np.linalg.norm(t)
        knots = np.vstack([p0, *[np.asarray(q, float) for q in self.points], p1])
        d = knots[1] - knots[0] if at_start else knots[-1] - knots[-2]
        return d / np.linalg.norm(d)

    def project(self, pts, p0, p1):
        """Closest points on the curve (used when refining curved edges)."""
        pts = np.atleast_2d(np.asarray(pts, float))
        if self.curve == "arc":
            c = np.asarray(self.center, float)
            rad = np.linalg.norm(np.asarray(p0, float) - c)
            d = pts - c
            return c + rad * d / np.linalg.norm(d, axis=1, keepdims=True)
        return pts


@dataclass(frozen=True)
class PolarChart:
    vertex: int
    origin: tuple
    reference: tuple
    theta_min: float
    theta_max: float
    radius: float

    @property
    def normal(self):
        d = self.reference
        return (-d[1], d[0])

    def to_polar(self, pts):
        """Map planar points to (r, theta) with theta in [theta_min, theta_max]."""
        pts = np.atleast_2d(np.asarray(pts, float))
        d = pts - np.asarray(self.origin)
        u = d @ np.asarray(self.reference)
        v = d @ np.asarray(self.normal)
        r = np.hypot(u, v)
        theta = np.mod(np.arctan2(v, u), 2 * math.pi)
        # points just below the reference ray come back with theta close to 2 pi
        wrap = theta > 0.5 * (self.theta_max + 2 * math.pi)
        theta = np.where(wrap, theta - 2 * math.pi, theta)
        return r, theta

    def from_polar(self, r, theta):
        r = np.asarray(r, float)
        theta = np.asarray(theta, float)
        d = np.asarray(self.reference)
        n = np.asarray(self.normal)
        c, s = np.cos(theta), np.sin(theta)
        return np.asarray(self.origin) + (r * c)[..., None] * d + (r * s)[..., None] * n


@dataclass(frozen=True)
class Domain:
    vertices: np.ndarray
    kinds: tuple
    edges: tuple
    delta0: float
    allow_adjacent_neumann: bool = False
    loops: tuple = field(default=())

    @property
    def n_vertices(self):
        return len(self.vertices)

    def edges_at(self, k):
        """Indices (incoming, outgoing) of the two edges meeting at vertex ``k``."""
        inc = [i for i, e in enumerate(self.edges) if e.end == k]
        out = [i for i, e in enumerate(self.edges) if e.start == k]
        return inc[0], out[0]

    def edge_points(self, i, n=None):
        e = self.edges[i]
        if n is None:
            n = len(e.points) + 1 if e.curve != "arc" else 16
        return e.sample(self.vertices[e.start], self.vertices[e.end], n)

    def boundary_polygon(self, arc_segments=16):
        """Shapely polygon of the sampled boundary (outer loop plus holes)."""
        rings = []
        for loop in self.loops:
            pts = []
            for i in loop:
                e = self.edges[i]
                n = arc_segments if e.curve == "arc" else len(e.points) + 1
                pts.extend(self.edge_points(i, n)[:-1].tolist())
            rings.append(pts)
        areas = [Polygon(r).area for r in rings]
        outer = int(np.argmax(areas))
        holes = [r for j, r in enumerate(rings) if j != outer]
        return Polygon(rings[outer], holes)

    def area(self):
        return self.boundary_polygon(arc_segments=2048).area


def _signed_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def build_domain(spec):
    """Build and validate a :class:`Domain` from a dict (the JSON schema).

    ``spec["vertices"]`` is a list of ``[x, y]`` or ``[x, y, kind]``;
    ``spec["edges"]`` a list of ``{"from", "to", "label", "curve"}`` where
    ``curve`` is omitted or ``"line"`` (straight), ``{"type": "polyline", "points": [...]}``
    or ``{"type": "arc", "center": [cx, cy], "ccw": true}``.
    """
    raw = spec["vertices"]
    if len(raw) < 3:
        raise DomainError("need at least 3 boundary points")
    verts = np.array([[float(v[0]), float(v[1])] for v in raw])
    given_kinds = [v[2] if len(v) > 2 else None for v in raw]
    if "edges" in spec:
        edges = []
        for e in spec["edges"]:
            label = _LABELS.get(str(e.get("label", "D")))
            if label is None:
                raise DomainError(f"unknown boundary label {e.get('label')!r}")
            curve = e.get("curve") or {"type": "line"}
            if isinstance(curve, str):
                curve = {"type": curve}
            ctype = curve.get("type", "line")
            if ctype not in ("line", "polyline", "arc"):
                raise DomainError(f"unknown curve type {ctype!r}")
            edges.append(Edge(
                start=int(e["from"]), end=int(e["to"]), label=label, curve=ctype,
                points=tuple(tuple(map(float, p)) for p in curve.get("points", ())),
                center=tuple(map(float, curve["center"])) if ctype == "arc" else None,
                ccw=bool(curve.get("ccw", True)),
            ))
    else:
        labels = spec.get("labels", ["D"] * len(verts))
        edges = [Edge(i, (i + 1) % len(verts), _LABELS[labels[i]]) for i in range(len(verts))]

    n = len(verts)
    for e in edges:
        if not (0 <= e.start < n and 0 <= e.end < n) or e.start == e.end:
            raise DomainError("edge endpoint index out of range")
        if e.curve == "arc":
            c = np.asarray(e.center)
            r0, r1 = np.linalg.norm(verts[e.start] - c), np.linalg.norm(verts[e.end] - c)
            if abs(r0 - r1) > 1e-9 * max(r0, r1):
                raise DomainError("arc endpoints are not equidistant from the center")

    loops = _trace_loops(edges, n)

    rings = []
    for loop in loops:
        pts = []
        for i in loop:
            e = edges[i]
            m = 16 if e.curve == "arc" else len(e.points) + 1
            pts.extend(e.sample(verts[e.start], verts[e.end], m)[:-1].tolist())
        ring = LinearRing(pts)
        if not ring.is_simple:
            raise DomainError("self-intersecting boundary loop")
        rings.append(np.array(pts))
    areas = [_signed_area(r) for r in rings]
    outer = int(np.argmax(np.abs(areas)))
    for j, a in enumerate(areas):
        if (j == outer) != (a > 0):
            raise DomainError("outer loop must be counterclockwise and holes clockwise")
    polys = [Polygon(r) for r in rings]
    for j in range(len(polys)):
        for k in range(j + 1, len(polys)):
            if LinearRing(rings[j]).intersects(LinearRing(rings[k])):
                raise DomainError("boundary loops intersect")

    dmin = min(np.linalg.norm(verts[i] - verts[j]) for i in range(n) for j in range(i + 1, n))
    delta0 = spec.get("delta0")
    delta0 = 0.5 * dmin if delta0 is None else float(delta0)
    if not 0 < delta0 <= 0.5 * dmin * (1 + 1e-12):
        raise DomainError("delta0 must lie in (0, half the minimum vertex distance]")

    allow = bool(spec.get("allow_adjacent_neumann", False))
    partial = Domain(verts, tuple(given_kinds), tuple(edges), delta0, allow, tuple(loops))
    kinds = []
    for k in range(n):
        alpha = interior_angle(partial, k)
        inc, out = partial.edges_at(k)
        flat = abs(alpha - math.pi) < _FLAT_TOL and edges[inc].curve == "line" and edges[out].curve == "line"
        kind = given_kinds[k] or (ARTIFICIAL if flat else GEOMETRIC)
        if kind not in (GEOMETRIC, ARTIFICIAL):
            raise DomainError(f"unknown vertex kind {kind!r}")
        kinds.append(kind)
        if not allow and edges[inc].label == NEUMANN and edges[out].label == NEUMANN:
            raise DomainError("adjacent Neumann edges")
    return Domain(verts, tuple(kinds), tuple(edges), delta0, allow, tuple(loops))


def _trace_loops(edges, n):
    outgoing = {}
    incoming = {}
    for i, e in enumerate(edges):
        if e.start in outgoing or e.end in incoming:
            raise DomainError("vertex with more than two incident edges")
        outgoing[e.start] = i
        incoming[e.end] = i
    used = set(outgoing) | set(incoming)
    if set(outgoing) != set(incoming) or used != set(range(n)):
        raise DomainError("open boundary loop")
    loops, seen = [], set()
    for i in range(len(edges)):
        if i in seen:
            continue
        loop, j = [], i
        while j not in seen:
            seen.add(j)
            loop.append(j)
            j = outgoing[edges[j].end]
        if j != i:
            raise DomainError("open boundary loop")
        loops.append(tuple(loop))
    return loops


def load_domain(path):
    return build_domain(json.loads(Path(path).read_text()))


def weight(domain, x):
    """r_Omega: distance to the nearest vertex, clipped at delta0.

    Accepts a single point or an ``(n, 2)`` array.
    """
    pts = np.asarray(x, float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    d = np.linalg.norm(pts[:, None, :] - domain.vertices[None, :, :], axis=2)
    r = np.minimum(d.min(axis=1), domain.delta0)
    return float(r[0]) if single else r


def nearest_vertex(domain, pts):
    """Index of the nearest vertex and the offset ``x - v`` for each point."""
    pts = np.atleast_2d(np.asarray(pts, float))
    d = np.linalg.norm(pts[:, None, :] - domain.vertices[None, :, :], axis=2)
    k = d.argmin(axis=1)
    return k, pts - domain.vertices[k], d[np.arange(len(pts)), k]


def chart(domain, k):
    """The polar chart at vertex ``k``.

    The reference direction is the tangent of the edge leaving the vertex
    in the boundary traversal; theta grows counterclockwise into the domain.
    """
    inc, out = domain.edges_at(k)
    v = domain.vertices
    e_out = domain.edges[out]
    d = e_out.tangent(v[e_out.start], v[e_out.end], at_start=True)
    return PolarChart(k, tuple(v[k]), tuple(d), 0.0, interior_angle(domain, k), domain.delta0)


def polar_chart(domain, vertex, x):
    """(r, theta) of ``x`` in the chart of ``vertex``."""
    ch = chart(domain, vertex)
    r, theta = ch.to_polar(x)
    if np.any(r >= domain.delta0):
        raise DomainError("point outside chart radius")
    if np.ndim(x) == 1:
        return float(r[0]), float(theta[0])
    return r, theta


def interior_angle(domain, k):
    """Opening angle of the domain at vertex ``k``, in (0, 2 pi]."""
    inc, out = domain.edges_at(k)
    v = domain.vertices
    e_out, e_in = domain.edges[out], domain.edges[inc]
    d_out = e_out.tangent(v[e_out.start], v[e_out.end], at_start=True)
    d_back = -e_in.tangent(v[e_in.start], v[e_in.end], at_start=False)
    ang = math.atan2(d_back[1], d_back[0]) - math.atan2(d_out[1], d_out[0])
    ang = ang % (2 * math.pi)
    return ang if ang > 1e-14 else 2 * math.pi


def max_angle(domain):
    return max(interior_angle(domain, k) for k in range(domain.n_vertices))
