"""Conforming triangulations: graded generation, midpoint refinement, text I/O."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import shapely

from .geometry import DIRICHLET, NEUMANN

QUALITY_FLOOR = 15.0


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    labels: tuple
    parents: np.ndarray
    grading: dict = field(default_factory=dict)
    domain: object = None
    # triangle of the coarser mesh each triangle came from (after refinement)
    coarse_parent: np.ndarray | None = None

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def areas(self):
        p = self.nodes[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def diameters(self):
        p = self.nodes[self.triangles]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    def h(self):
        return float(self.diameters().max())

    def angles(self):
        p = self.nodes[self.triangles]
        out = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            out.append(np.degrees(np.arccos(np.clip(cos, -1, 1))))
        return np.column_stack(out)

    def min_angle(self):
        return float(self.angles().min())

    def barycenters(self):
        return self.nodes[self.triangles].mean(axis=1)

    def edges(self):
        """Unique undirected edges ``(E, 2)`` and the triangle-to-edge map ``(T, 3)``.

        Local edge ``k`` of a triangle joins local vertices ``k`` and ``k+1``.
        """
        t = self.triangles
        all_e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        srt = np.sort(all_e, axis=1)
        uniq, inv = np.unique(srt, axis=0, return_inverse=True)
        return uniq, inv.reshape(3, -1).T

    def dirichlet_nodes(self):
        mask = np.array([lab == DIRICHLET for lab in self.labels], bool)
        if not mask.any():
            return np.zeros(0, int)
        return np.unique(self.boundary_edges[mask].ravel())

    def vertex_nodes(self, domain=None):
        """Node index of every domain vertex (matched by coordinates)."""
        domain = domain if domain is not None else self.domain
        d = np.linalg.norm(self.nodes[None, :, :] - domain.vertices[:, None, :], axis=2)
        idx = d.argmin(axis=1)
        if np.any(d[np.arange(len(idx)), idx] > 1e-10 * (1 + np.abs(domain.vertices).max())):
            raise MeshError("domain vertex missing from mesh")
        return idx


def _orient(nodes, tri):
    p = nodes[tri]
    a2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    tri = tri.copy()
    neg = a2 < 0
    tri[neg] = tri[neg][:, [0, 2, 1]]
    return tri


def coarse_mesh(domain, arc_segments=8):
    """Constrained Delaunay triangulation of the (sampled) domain boundary."""
    pts, loops_pts = [], []
    vertex_node = {}
    for loop in domain.loops:
        ring = []
        for i in loop:
            e = domain.edges[i]
            n = arc_segments if e.curve == "arc" else len(e.points) + 1
            sample = domain.edge_points(i, n)
            if e.start not in vertex_node:
                vertex_node[e.start] = len(pts)
                pts.append(sample[0])
            for q in sample[1:-1]:
                pts.append(q)
            ring.append((i, sample))
        loops_pts.append(ring)
    nodes = np.array(pts)

    def index_of(p):
        d = np.linalg.norm(nodes - p, axis=1)
        k = int(d.argmin())
        if d[k] > 1e-12 * (1 + np.abs(p).max()):
            raise MeshError("triangulation produced an unknown point")
        return k

    bedges, blabels, bparents = [], [], []
    for ring in loops_pts:
        for i, sample in ring:
            e = domain.edges[i]
            for a, b in zip(sample[:-1], sample[1:]):
                bedges.append((index_of(a), index_of(b)))
                blabels.append(e.label)
                bparents.append(i)

    poly = domain.boundary_polygon(arc_segments=arc_segments)
    coll = shapely.constrained_delaunay_triangles(poly)
    tris = []
    for g in coll.geoms:
        c = np.asarray(g.exterior.coords)[:3]
        tris.append([index_of(p) for p in c])
    tri = _orient(nodes, np.array(tris, int))
    return Mesh(nodes, tri, np.array(bedges, int), tuple(blabels), np.array(bparents, int), {}, domain)


def refine_uniform(mesh):
    """Split every triangle into four through its edge midpoints.

    The input nodes keep their indices, so the refined node set contains the
    coarse one.  Children are listed in parent order.
    """
    nodes, tri = mesh.nodes, mesh.triangles
    edges, t2e = mesh.edges()
    n0 = len(nodes)
    mid = 0.5 * (nodes[edges[:, 0]] + nodes[edges[:, 1]])

    # boundary edges: map to the unique edge list, project curved midpoints
    bsrt = np.sort(mesh.boundary_edges, axis=1)
    lookup = {tuple(e): k for k, e in enumerate(edges)}
    bidx = np.array([lookup[tuple(e)] for e in bsrt], int) if len(bsrt) else np.zeros(0, int)
    dom = mesh.domain
    if dom is not None:
        for j, k in enumerate(bidx):
            e = dom.edges[mesh.parents[j]]
            if e.curve == "arc":
                mid[k] = e.project(mid[k], dom.vertices[e.start], dom.vertices[e.end])[0]
    new_nodes = np.vstack([nodes, mid])
    m = n0 + t2e  # midpoint of local edge k sits between local vertices k, k+1
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
    children = np.stack([
        np.column_stack([v0, m01, m20]),
        np.column_stack([m01, v1, m12]),
        np.column_stack([m20, m12, v2]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)

    be = mesh.boundary_edges
    bm = n0 + bidx
    new_b = np.stack([np.column_stack([be[:, 0], bm]), np.column_stack([bm, be[:, 1]])], axis=1).reshape(-1, 2)
    labels = tuple(lab for lab in mesh.labels for _ in range(2))
    parents = np.repeat(mesh.parents, 2)
    return Mesh(new_nodes, children, new_b, labels, parents, dict(mesh.grading), dom,
                coarse_parent=np.repeat(np.arange(len(tri)), 4))


def _check_quality(mesh, floor):
    if np.any(mesh.areas() <= 0):
        raise MeshError("zero-area or inverted triangle")
    if mesh.min_angle() < floor - 1e-9:
        raise MeshError(f"quality floor unreachable: minimum angle {mesh.min_angle():.2f} < {floor}")


def generate_graded_mesh(domain, h, grading=None, quality_floor=QUALITY_FLOOR):
    """Mesh of ``domain`` with size ``h`` and radial grading toward vertices.

    ``grading`` maps vertex index to mu in (0, 1].  Within the chart radius
    of a graded vertex, nodes are moved by ``x -> v + (x - v) (|x - v| / R)^(1/mu - 1)``
    with ``R = delta0``; element sizes then behave like ``h (r / R)^(1 - mu)``
    and the layer touching the vertex has size of order ``h^(1/mu)``.
    """
    if h <= 0:
        raise MeshError("h must be positive")
    grading = {int(k): float(v) for k, v in (grading or {}).items()}
    for k, mu in grading.items():
        if not 0 < mu <= 1:
            raise MeshError(f"grading exponent {mu} not in (0, 1]")
        if not 0 <= k < domain.n_vertices:
            raise MeshError(f"no vertex {k}")
    mesh = coarse_mesh(domain)
    while mesh.h() > h * (1 + 1e-12):
        mesh = refine_uniform(mesh)
    nodes = mesh.nodes.copy()
    R = domain.delta0
    for k, mu in grading.items():
        if mu == 1.0:
            continue
        v = domain.vertices[k]
        d = nodes - v
        r = np.linalg.norm(d, axis=1)
        inside = (r < R) & (r > 0)
        nodes[inside] = v + d[inside] * ((r[inside] / R) ** (1.0 / mu - 1.0))[:, None]
    # keep curved boundary nodes on their curves
    for j, (a, b) in enumerate(mesh.boundary_edges):
        e = domain.edges[mesh.parents[j]]
        if e.curve == "arc":
            p0, p1 = domain.vertices[e.start], domain.vertices[e.end]
            nodes[[a, b]] = e.project(nodes[[a, b]], p0, p1)
    out = Mesh(nodes, mesh.triangles, mesh.boundary_edges, mesh.labels, mesh.parents,
               {k: grading.get(k, 1.0) for k in range(domain.n_vertices)}, domain)
    _check_quality(out, quality_floor)
    return out


def uniform_mesh(domain, h, quality_floor=QUALITY_FLOOR):
    return generate_graded_mesh(domain, h, {}, quality_floor)


# -- text format -----------------------------------------------------------

def write_mesh(mesh, sink):
    """Write ``mesh`` in the ``polymesh 1`` text format to a path or stream."""
    buf = io.StringIO()
    buf.write("polymesh 1\n")
    buf.write(f"{mesh.n_nodes} {mesh.n_triangles} {len(mesh.boundary_edges)}\n")
    for x, y in mesh.nodes:
        buf.write(f"{x:.17g} {y:.17g}\n")
    for i, j, k in mesh.triangles:
        buf.write(f"{i} {j} {k}\n")
    for (i, j), lab, par in zip(mesh.boundary_edges, mesh.labels, mesh.parents):
        buf.write(f"{i} {j} {lab} {par}\n")
    text = buf.getvalue()
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(sink, "w") as fh:
            fh.write(text)
    return text


def read_mesh(source, domain=None):
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source) as fh:
            text = fh.read()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "polymesh 1":
        raise MeshError("malformed header")
    try:
        nn, nt, nb = (int(t) for t in lines[1].split())
    except ValueError as exc:
        raise MeshError("malformed header") from exc
    if len(lines) != 2 + nn + nt + nb:
        raise MeshError("malformed header: line count does not match")
    body = lines[2:]
    try:
        nodes = np.array([[float(t) for t in ln.split()] for ln in body[:nn]]).reshape(nn, 2)
        tri = np.array([[int(t) for t in ln.split()] for ln in body[nn:nn + nt]], int).reshape(nt, 3)
        bl = [ln.split() for ln in body[nn + nt:]]
        be = np.array([[int(r[0]), int(r[1])] for r in bl], int).reshape(nb, 2)
        labels = tuple(r[2] for r in bl)
        parents = np.array([int(r[3]) for r in bl], int)
    except (ValueError, IndexError) as exc:
        raise MeshError("malformed record") from exc
    if tri.size and (tri.min() < 0 or tri.max() >= nn):
        raise MeshError("index out of range")
    if be.size and (be.min() < 0 or be.max() >= nn):
        raise MeshError("index out of range")
    if any(lab not in (DIRICHLET, NEUMANN) for lab in labels):
        raise MeshError("unknown boundary label")
    mesh = Mesh(nodes, tri, be, labels, parents, {}, domain)
    if np.any(mesh.areas() == 0):
        raise MeshError("zero-area triangle")
    if np.any(mesh.areas() < 0):
        raise MeshError("negatively oriented triangle")
    return mesh


def canonical_text(mesh):
    return write_mesh(mesh, io.StringIO())
