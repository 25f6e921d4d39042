"""Kondratiev norms K^m_a and the equivalent chart norm built from r d_r, d_theta."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_legendre

from .fields import chart_derivative, multi_indices
from .geometry import chart, interior_angle, weight
from .quadrature import Cloud, mesh_cloud


class NormError(ValueError):
    pass


@dataclass(frozen=True)
class WeightedNormSpec:
    m: int
    a: float
    # None for the whole domain, or a vertex index to restrict to its chart
    region: int | None = None

    def __post_init__(self):
        if self.m < 0:
            raise NormError("m must be nonnegative")


def norm_cloud(domain, mesh, m, depth=4):
    """Quadrature cloud for order-``m`` norms (rule order 2m + 4, rings at vertices)."""
    return mesh_cloud(mesh, 2 * m + 4, mesh.vertex_nodes(domain), depth=depth)


def sector_cloud(domain, vertex, r_min, r_max, n_theta=48, order=16):
    """Tensor Gauss cloud on the chart sector r_min < r < r_max.

    Radial panels are dyadic, so r-power integrands are resolved uniformly
    down to ``r_min``.  Assumes straight edges at the vertex.
    """
    ch = chart(domain, vertex)
    omega = interior_angle(domain, vertex)
    s, ws = roots_legendre(order)
    t, wt = roots_legendre(n_theta)
    theta = 0.5 * omega * (t + 1)
    wth = 0.5 * omega * wt
    edges = [r_max]
    while edges[-1] / 2 > r_min * (1 + 1e-12):
        edges.append(edges[-1] / 2)
    edges.append(r_min)
    rs, wr = [], []
    for hi, lo in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        rs.append(lo + 0.5 * (hi - lo) * (s + 1))
        wr.append(0.5 * (hi - lo) * ws)
    r = np.concatenate(rs)
    wr = np.concatenate(wr)
    R, TH = np.meshgrid(r, theta, indexing="ij")
    W = np.outer(wr * r, wth)
    p = ch.from_polar(R.ravel(), TH.ravel())
    n = p.shape[0]
    return Cloud(p[:, 0].copy(), p[:, 1].copy(), W.ravel(), np.full(n, -1), np.zeros((n, 3)))


def _jet(u, cloud, m):
    if hasattr(u, "jet_on"):
        return u.jet_on(cloud, m)
    return u.jet(cloud.x, cloud.y, m)


def kondratiev_norm(u, spec, mesh=None, domain=None, cloud=None):
    """(sum_{|alpha|<=m} int |r^{|alpha|-a} d^alpha u|^2)^{1/2}.

    ``u`` is a closed-form field or an FE function; FE functions must be
    integrated on a cloud of their own mesh.
    """
    if domain is None:
        domain = mesh.domain
    if cloud is None:
        cloud = norm_cloud(domain, mesh, spec.m)
    if spec.region is not None:
        v = domain.vertices[spec.region]
        cloud = cloud.restrict(np.hypot(cloud.x - v[0], cloud.y - v[1]) < domain.delta0)
    if getattr(u, "degree", None) is not None and spec.m > u.degree + 1:
        raise NormError(f"order {spec.m} exceeds the smoothness of degree-{u.degree} elements")
    r = weight(domain, cloud.points)
    jet = _jet(u, cloud, spec.m)
    total = 0.0
    for i, j in multi_indices(spec.m):
        total += np.sum(cloud.w * np.abs(r ** (i + j - spec.a) * jet[(i, j)]) ** 2)
    return float(np.sqrt(total))


def chart_norm(u, spec, mesh=None, domain=None, cloud=None):
    """Norm from X = r d_r, Y = d_theta on vertex charts and d_x, d_y elsewhere.

    The pieces (one per vertex chart plus the off-vertex patch) are disjoint
    and combined in the l^2 sense, so order-zero norms coincide with
    ``kondratiev_norm`` exactly.
    """
    if domain is None:
        domain = mesh.domain
    if cloud is None:
        cloud = norm_cloud(domain, mesh, spec.m)
    pts = cloud.points
    d = np.linalg.norm(pts[:, None, :] - domain.vertices[None, :, :], axis=2)
    near = d.argmin(axis=1)
    in_chart = d[np.arange(len(pts)), near] < domain.delta0
    r = weight(domain, pts)
    jet = _jet(u, cloud, spec.m)
    total = 0.0
    for k in range(domain.n_vertices):
        if spec.region is not None and k != spec.region:
            continue
        sel = in_chart & (near == k)
        if not sel.any():
            continue
        v = domain.vertices[k]
        dx, dy = cloud.x[sel] - v[0], cloud.y[sel] - v[1]
        sub = {key: val[sel] for key, val in jet.items()}
        w = cloud.w[sel] * r[sel] ** (-2 * spec.a)
        for i in range(spec.m + 1):
            for j in range(spec.m + 1 - i):
                total += np.sum(w * np.abs(chart_derivative(sub, dx, dy, i, j)) ** 2)
    if spec.region is None:
        off = ~in_chart
        w = cloud.w[off] * r[off] ** (-2 * spec.a)
        for i, j in multi_indices(spec.m):
            total += np.sum(w * np.abs(jet[(i, j)][off]) ** 2)
    return float(np.sqrt(total))


@dataclass
class EquivalenceReport:
    ratios: np.ndarray
    refined: np.ndarray | None = None

    @property
    def low(self):
        return float(self.ratios.min())

    @property
    def high(self):
        return float(self.ratios.max())

    @property
    def median(self):
        return float(np.median(self.ratios))

    @property
    def constant(self):
        """Smallest C with all ratios in [1/C, C]."""
        return float(max(self.high, 1 / self.low))

    @property
    def drift(self):
        if self.refined is None:
            return None
        return float(np.max(np.abs(self.refined / self.ratios - 1)))

    @property
    def violated(self):
        return self.drift is not None and self.drift > 0.10


def equivalence_report(samples, spec, mesh, domain=None, refined_mesh=None):
    """Ratios chart_norm / kondratiev_norm, optionally re-measured after refinement.

    FE samples are prolonged to ``refined_mesh``; closed-form samples are
    simply re-integrated there.
    """
    if not samples:
        raise NormError("empty sample list")
    domain = domain if domain is not None else mesh.domain

    def ratios(funcs, msh):
        cl = norm_cloud(domain, msh, spec.m)
        return np.array([chart_norm(u, spec, domain=domain, cloud=cl)
                         / kondratiev_norm(u, spec, domain=domain, cloud=cl) for u in funcs])

    base = ratios(samples, mesh)
    refined = None
    if refined_mesh is not None:
        moved = [u.prolong(refined_mesh) if hasattr(u, "prolong") else u for u in samples]
        refined = ratios(moved, refined_mesh)
    return EquivalenceReport(base, refined)


def write_norm_rows(rows, sink=None):
    """CSV with columns function-id, m, a, kondratiev, chart, ratio."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["function-id", "m", "a", "kondratiev", "chart", "ratio"])
    for fid, m, a, kn, cn in rows:
        w.writerow([fid, m, f"{a:g}", f"{kn:.12e}", f"{cn:.12e}", f"{cn / kn:.12e}"])
    text = buf.getvalue()
    if sink is None:
        return text
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(sink, "w") as fh:
            fh.write(text)
    return text


def truncated_norms(u, m, a, domain, vertex, mesh=None, halvings=10, n_theta=48):
    """K^m_a norm of ``u`` with B(vertex, delta0 2^-k) removed, k = 1..halvings.

    With a mesh, the norm covers the whole domain (the part outside the
    chart integrated on the mesh cloud); without one it covers the chart
    region of ``vertex`` only.  The sector uses dyadic polar panels.
    """
    spec = WeightedNormSpec(m, a)
    acc = 0.0
    if mesh is not None:
        v = domain.vertices[vertex]
        outer = norm_cloud(domain, mesh, m)
        outer = outer.restrict(np.hypot(outer.x - v[0], outer.y - v[1]) >= domain.delta0)
        acc = kondratiev_norm(u, spec, domain=domain, cloud=outer) ** 2
    out = []
    hi = domain.delta0
    for _ in range(halvings + 1):
        out.append(np.sqrt(acc))
        lo = hi / 2
        ring = sector_cloud(domain, vertex, lo, hi, n_theta=n_theta)
        acc += kondratiev_norm(u, spec, domain=domain, cloud=ring) ** 2
        hi = lo
    return np.array(out[1:])
