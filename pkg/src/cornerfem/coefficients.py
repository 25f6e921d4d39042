"""Coefficient sets beta = (a_ij, b_i, c) of divergence-form operators.

The operator is

    p u = -sum_ij d_i(a_ij d_j u) + sum_i b_i d_i u - sum_i d_i(b_{2+i} u) + c u

with ``b[0], b[1]`` the convective and ``b[2], b[3]`` the divergence-side
first-order coefficients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fields as F
from .fields import Field, as_field, expression_field
from .geometry import weight


class CoefficientError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    a: tuple
    b: tuple = (F.ZERO, F.ZERO, F.ZERO, F.ZERO)
    c: Field = F.ZERO
    shift: float = 0.0
    name: str = ""

    def __post_init__(self):
        a = tuple(tuple(as_field(v) for v in row) for row in self.a)
        b = tuple(as_field(v) for v in self.b)
        if len(a) != 2 or any(len(row) != 2 for row in a) or len(b) != 4:
            raise CoefficientError("need a 2x2 matrix a and four first-order coefficients b")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", as_field(self.c))
        if any(f.singular != 0 for row in a for f in row):
            raise CoefficientError("a_ij must be bounded (singular exponent 0)")
        if any(f.singular > 1 for f in b):
            raise CoefficientError("b_i may blow up at most like 1/r")
        if self.c.singular > 2:
            raise CoefficientError("c may blow up at most like 1/r^2")

    def fields(self):
        return [f for row in self.a for f in row] + list(self.b) + [self.c]

    def scaled(self, s):
        return CoefficientSet(tuple(tuple(f * s for f in row) for row in self.a),
                              tuple(f * s for f in self.b), self.c * s, self.shift, self.name)

    def __add__(self, other):
        return CoefficientSet(
            tuple(tuple(self.a[i][j] + other.a[i][j] for j in range(2)) for i in range(2)),
            tuple(p + q for p, q in zip(self.b, other.b)), self.c + other.c, self.shift, self.name)

    def is_hermitian_real(self):
        """True for constant-real-symmetric-friendly data (a = a^T real, b = 0, c real)."""
        return all(f.is_zero() for f in self.b)


# -- built-ins ---------------------------------------------------------------

def laplace():
    return CoefficientSet(((1.0, 0.0), (0.0, 1.0)), name="laplace")


def schroedinger(domain, kappa=1.0):
    """-Laplace + kappa r_Omega^{-2}."""
    return CoefficientSet(((1.0, 0.0), (0.0, 1.0)), c=F.weight_field(domain, -2) * kappa,
                          name=f"schroedinger kappa={kappa:g}")


def variable_demo():
    e = expression_field
    return CoefficientSet(
        ((e("2 + 0.5*sin(x)"), e("0.3*cos(y)")), (e("0.1*x"), e("1.5 + 0.5*x*y"))),
        (e("0.2"), F.ZERO, F.ZERO, e("0.1*y")), e("1"), name="variable-demo")


def from_spec(spec, domain=None, context=None):
    """Coefficient set from a config entry.

    Either a built-in name (``"laplace"``, ``"schroedinger kappa=2"``,
    ``"variable-demo"``) or a table ``{"a": [[..],[..]], "b": [..4..],
    "c": "...", "singular": {"c": 2, "b": 1}}`` of expression strings.
    """
    if isinstance(spec, str):
        name, *args = spec.split()
        params = dict(arg.split("=", 1) for arg in args)
        if name == "laplace":
            return laplace()
        if name in ("schroedinger", "schrodinger"):
            if domain is None:
                raise CoefficientError("schroedinger coefficients need a domain")
            return schroedinger(domain, float(params.get("kappa", 1.0)))
        if name == "variable-demo":
            return variable_demo()
        raise CoefficientError(f"unknown built-in coefficient set {name!r}")
    sing = spec.get("singular", {})

    def mk(text, s):
        return expression_field(str(text), context, singular=s)

    a = spec.get("a", [["1", "0"], ["0", "1"]])
    b = spec.get("b", ["0"] * 4)
    if len(b) == 2:
        b = list(b) + ["0", "0"]
    return CoefficientSet(
        tuple(tuple(mk(t, 0) for t in row) for row in a),
        tuple(mk(t, int(sing.get("b", 0))) for t in b),
        mk(spec.get("c", "0"), int(sing.get("c", 0))),
        name=spec.get("name", "expression"),
    )


# -- weighted sup norms ----------------------------------------------------

def sample_points(domain, h_ref=None, ring_depth=8):
    """Reference point cloud for sup-norm estimates.

    Quadrature points of a uniform reference mesh (with dyadic rings at the
    vertices) together with its nodes and edge midpoints, vertices excluded.
    """
    from .mesh import uniform_mesh
    from .quadrature import mesh_cloud

    if h_ref is None:
        ext = domain.vertices.max(axis=0) - domain.vertices.min(axis=0)
        h_ref = float(np.hypot(*ext)) / 32
    mesh = uniform_mesh(domain, h_ref, quality_floor=0.0)
    cloud = mesh_cloud(mesh, 4, mesh.vertex_nodes(domain), depth=ring_depth)
    edges, _ = mesh.edges()
    mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    pts = np.vstack([cloud.points, mesh.nodes, mids])
    r = weight(domain, pts)
    return pts[r > 1e-12]


def wm_inf_norm(f, m, domain, points):
    """max over |alpha| <= m of sup |r_Omega^|alpha| d^alpha f| on ``points``."""
    x, y = points[:, 0], points[:, 1]
    r = weight(domain, points)
    jet = f.jet(x, y, m)
    best = 0.0
    for (i, j), v in jet.items():
        best = max(best, float(np.max(np.abs(r ** (i + j) * v))))
    return best


def algebra_constant(m):
    """Leibniz: each weighted derivative of order <= m of b*c has at most 2^m terms."""
    return 2 ** m


def inverse_constant(m):
    """Ordered Bell number of m: the count of terms in the m-th derivative of 1/b.

    Each term is (-1)^k k! b^{-k-1} times k derivatives of b; summing over
    set partitions gives sum_k k! S(m, k).
    """
    fub = [1]
    for n in range(1, m + 1):
        fub.append(sum(math.comb(n, k) * fub[n - k] for k in range(1, n + 1)))
    return fub[m]


def zm_norm(beta, m, domain, points=None):
    """max(||a_ij||, ||r b_i||, ||r^2 c||) in the weighted W^{m,inf} norm."""
    if points is None:
        points = sample_points(domain)
    r1 = F.weight_field(domain, 1)
    r2 = F.weight_field(domain, 2)
    parts = [wm_inf_norm(f, m, domain, points) for row in beta.a for f in row]
    parts += [wm_inf_norm(r1 * f, m, domain, points) for f in beta.b if not f.is_zero()]
    if not beta.c.is_zero():
        parts.append(wm_inf_norm(r2 * beta.c, m, domain, points))
    return max(parts)


def hermitian_min_eig(a11, a12, a21, a22):
    """Smallest eigenvalue of (A + A*)/2 for 2x2 matrices given entrywise."""
    p = np.real(a11)
    s = np.real(a22)
    q = 0.5 * (a12 + np.conj(a21))
    return 0.5 * (p + s) - np.sqrt(0.25 * (p - s) ** 2 + np.abs(q) ** 2)


def c_use(beta, domain, points=None):
    """Uniform strong ellipticity constant, inf of the Hermitian part's spectrum.

    A nonpositive value means the coefficients are not uniformly elliptic.
    """
    if points is None:
        points = sample_points(domain)
    x, y = points[:, 0], points[:, 1]
    (f11, f12), (f21, f22) = beta.a
    lam = hermitian_min_eig(f11(x, y), f12(x, y), f21(x, y), f22(x, y))
    return float(np.min(lam))


# -- strong form -----------------------------------------------------------

def apply_operator(beta, u, x, y):
    """p_beta u at off-vertex points, by the product rule."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ju = u.jet(x, y, 2)
    du = (ju[(1, 0)], ju[(0, 1)])
    d2 = {(0, 0): ju[(2, 0)], (0, 1): ju[(1, 1)], (1, 0): ju[(1, 1)], (1, 1): ju[(0, 2)]}
    unit = ((1, 0), (0, 1))
    out = 0
    for i in range(2):
        for j in range(2):
            ja = beta.a[i][j].jet(x, y, 1)
            out = out - ja[unit[i]] * du[j] - ja[(0, 0)] * d2[(i, j)]
        out = out + beta.b[i](x, y) * du[i]
        jb = beta.b[2 + i].jet(x, y, 1)
        out = out - jb[unit[i]] * ju[(0, 0)] - jb[(0, 0)] * du[i]
    return out + beta.c(x, y) * ju[(0, 0)]


def conormal(beta, u, x, y, nx, ny):
    """sum_i nu_i (sum_j a_ij d_j u + b_{2+i} u)."""
    ju = u.jet(x, y, 1)
    du = (ju[(1, 0)], ju[(0, 1)])
    nu = (nx, ny)
    out = 0
    for i in range(2):
        flux = beta.b[2 + i](x, y) * ju[(0, 0)]
        for j in range(2):
            flux = flux + beta.a[i][j](x, y) * du[j]
        out = out + nu[i] * flux
    return out


# -- polar charts ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChartCoefficients:
    """Coefficients of r^2 p_beta in a vertex chart.

    With X = r d_r and Y = d_theta,

        r^2 p_beta = -(c11 X^2 + c12 XY + c22 Y^2 + c1 X + c2 Y) + c0,

    so the principal part has the sign of a_ij (c11 = c22 = 1 for the
    Laplacian) and a potential kappa r^-2 shows up as c0 = kappa.
    """
    beta: CoefficientSet
    chart: object

    def _frame(self, r, theta):
        d = np.asarray(self.chart.reference)
        n = np.asarray(self.chart.normal)
        ct, st = np.cos(theta), np.sin(theta)
        e = (ct * d[0] + st * n[0], ct * d[1] + st * n[1])
        t = (-st * d[0] + ct * n[0], -st * d[1] + ct * n[1])
        p = self.chart.from_polar(r, theta)
        return e, t, p[..., 0], p[..., 1]

    def __call__(self, r, theta):
        r = np.asarray(r, float)
        theta = np.asarray(theta, float)
        e, t, x, y = self._frame(r, theta)
        beta = self.beta
        unit = ((1, 0), (0, 1))
        A = [[beta.a[i][j].jet(x, y, 1) for j in range(2)] for i in range(2)]
        # non-divergence form: -a_ij d_i d_j u + B_j d_j u + C u
        B = [0, 0]
        for j in range(2):
            B[j] = beta.b[j](x, y) - beta.b[2 + j](x, y)
            for i in range(2):
                B[j] = B[j] - A[i][j][unit[i]]
        C = beta.c(x, y)
        for i in range(2):
            C = C - beta.b[2 + i].jet(x, y, 1)[unit[i]]
        c11 = c12 = c22 = c1 = c2 = 0
        for i in range(2):
            for j in range(2):
                a = A[i][j][(0, 0)]
                c11 = c11 + a * e[i] * e[j]
                c12 = c12 + a * (e[i] * t[j] + t[i] * e[j])
                c22 = c22 + a * t[i] * t[j]
                c1 = c1 + a * (t[i] * t[j] - e[i] * e[j])
                c2 = c2 - a * (t[i] * e[j] + e[i] * t[j])
        c1 = c1 - r * (B[0] * e[0] + B[1] * e[1])
        c2 = c2 - r * (B[0] * t[0] + B[1] * t[1])
        c0 = r ** 2 * C
        return {"c11": c11, "c12": c12, "c22": c22, "c1": c1, "c2": c2, "c0": c0}

    def apply(self, u, r, theta):
        """The chart expansion applied to the field ``u`` at chart points."""
        co = self(r, theta)
        _, _, x, y = self._frame(np.asarray(r, float), np.asarray(theta, float))
        dx = x - self.chart.origin[0]
        dy = y - self.chart.origin[1]
        jet = u.jet(x, y, 2)
        cd = F.chart_derivative
        return (-(co["c11"] * cd(jet, dx, dy, 2, 0) + co["c12"] * cd(jet, dx, dy, 1, 1)
                  + co["c22"] * cd(jet, dx, dy, 0, 2) + co["c1"] * cd(jet, dx, dy, 1, 0)
                  + co["c2"] * cd(jet, dx, dy, 0, 1)) + co["c0"] * jet[(0, 0)])


def to_polar_chart(beta, chart):
    if chart is None or not hasattr(chart, "reference"):
        raise CoefficientError("chart not centered at a vertex")
    return ChartCoefficients(beta, chart)


# -- conjugation by r_Omega^a --------------------------------------------------

def conjugate(beta, a, domain):
    """beta(a) with p_{beta(a)} v = r_Omega^{-a} p_beta(r_Omega^a v).

    With g_j = d_j r_Omega / r_Omega the shifted coefficients are
    b_j - a sum_i g_i a_ij (convective), b_{2+i} + a sum_j a_ij g_j
    (divergence side) and c + a sum_i (b_i - b_{2+i}) g_i - a^2 g.a.g;
    a_ij are unchanged.  The result is quadratic in ``a``.
    """
    if a == 0:
        return beta
    g = (F.weight_log_gradient(domain, 0), F.weight_log_gradient(domain, 1))
    A = beta.a
    b_conv = tuple(beta.b[j] - a * (g[0] * A[0][j] + g[1] * A[1][j]) for j in range(2))
    b_div = tuple(beta.b[2 + i] + a * (A[i][0] * g[0] + A[i][1] * g[1]) for i in range(2))
    c = beta.c
    for i in range(2):
        if not (beta.b[i].is_zero() and beta.b[2 + i].is_zero()):
            c = c + a * (beta.b[i] - beta.b[2 + i]) * g[i]
    gag = sum((g[i] * A[i][j] * g[j] for i in range(2) for j in range(2)), F.ZERO)
    c = c - (a * a) * gag
    return CoefficientSet(beta.a, b_conv + b_div, c, beta.shift + a, beta.name)
