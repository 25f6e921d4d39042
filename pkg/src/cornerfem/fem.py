"""P1/P2 Lagrange finite elements for the divergence-form Dirichlet form."""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import apply_operator, conormal
from .fields import Field
from .geometry import DIRICHLET, NEUMANN, weight
from .quadrature import Cloud, line_rule, mesh_cloud

RESIDUAL_TOL = 1e-10
_CHUNK = 200_000


class SolveError(RuntimeError):
    pass


class FemError(ValueError):
    pass


# -- degrees of freedom ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DofMap:
    """Global numbering: nodes first, then (for P2) one dof per mesh edge."""
    mesh: object
    degree: int
    cell_dofs: np.ndarray
    n_dofs: int
    edges: np.ndarray
    t2e: np.ndarray

    @classmethod
    def build(cls, mesh, degree):
        if degree not in (1, 2):
            raise FemError("degree must be 1 or 2")
        edges, t2e = mesh.edges()
        if degree == 1:
            return cls(mesh, 1, mesh.triangles.copy(), mesh.n_nodes, edges, t2e)
        cell = np.hstack([mesh.triangles, mesh.n_nodes + t2e])
        return cls(mesh, 2, cell, mesh.n_nodes + len(edges), edges, t2e)

    def edge_index(self, pairs):
        lookup = {tuple(e): k for k, e in enumerate(self.edges)}
        return np.array([lookup[tuple(sorted(p))] for p in pairs], int)

    def boundary_dofs(self, label):
        mesh = self.mesh
        mask = np.array([lab == label for lab in mesh.labels], bool)
        be = mesh.boundary_edges[mask]
        dofs = [be.ravel()]
        if self.degree == 2 and len(be):
            dofs.append(mesh.n_nodes + self.edge_index(be))
        return np.unique(np.concatenate(dofs)) if len(be) else np.zeros(0, int)

    def dof_points(self):
        nodes = self.mesh.nodes
        if self.degree == 1:
            return nodes
        return np.vstack([nodes, 0.5 * (nodes[self.edges[:, 0]] + nodes[self.edges[:, 1]])])


def barycentric_gradients(mesh):
    """``(T, 3, 2)`` gradients of the barycentric coordinates per triangle."""
    p = mesh.nodes[mesh.triangles]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    Jinv = np.linalg.inv(J)
    g12 = Jinv  # rows: grad lambda_1, grad lambda_2
    g0 = -g12.sum(axis=1, keepdims=True)
    return np.concatenate([g0, g12], axis=1)


def shape_functions(degree, bary, grads, second=False):
    """Basis values ``(n, k)``, gradients ``(n, k, 2)`` and optional Hessians ``(n, k, 3)``.

    ``bary`` are barycentric points and ``grads`` the matching ``(n, 3, 2)``
    barycentric gradients.  Hessians are stored as (xx, xy, yy).
    """
    L = bary
    if degree == 1:
        phi = L
        dphi = grads
        d2 = np.zeros(L.shape + (3,))
        return (phi, dphi, d2) if second else (phi, dphi)
    nxt = [1, 2, 0]
    phi = np.empty((len(L), 6))
    dphi = np.empty((len(L), 6, 2))
    phi[:, :3] = L * (2 * L - 1)
    dphi[:, :3] = (4 * L - 1)[:, :, None] * grads
    Ln = L[:, nxt]
    Gn = grads[:, nxt]
    phi[:, 3:] = 4 * L * Ln
    dphi[:, 3:] = 4 * (L[:, :, None] * Gn + Ln[:, :, None] * grads)
    if not second:
        return phi, dphi

    def outer(g, h):
        return np.stack([2 * g[..., 0] * h[..., 0], g[..., 0] * h[..., 1] + g[..., 1] * h[..., 0],
                         2 * g[..., 1] * h[..., 1]], axis=-1)

    d2 = np.empty((len(L), 6, 3))
    d2[:, :3] = 2 * outer(grads, grads)
    d2[:, 3:] = 4 * outer(grads, Gn)
    return phi, dphi, d2


# -- finite-element functions ------------------------------------------------

@dataclass(eq=False)
class FeFunction:
    dofmap: DofMap
    values: np.ndarray
    constrained: np.ndarray | None = None

    @property
    def mesh(self):
        return self.dofmap.mesh

    @property
    def degree(self):
        return self.dofmap.degree

    singular = 0

    def jet_on(self, cloud, order=0):
        """Cartesian derivatives up to ``order`` at cloud points.

        Orders above the polynomial degree are identically zero inside each
        element; ``self.truncated`` records when such orders were requested.
        """
        self.truncated = order > self.degree
        grads = barycentric_gradients(self.mesh)[cloud.elem]
        phi, dphi, d2 = shape_functions(self.degree, cloud.bary, grads, second=True)
        loc = self.values[self.dofmap.cell_dofs[cloud.elem]]
        out = {(0, 0): np.einsum("nk,nk->n", phi, loc)}
        if order >= 1:
            out[(1, 0)] = np.einsum("nk,nk->n", dphi[..., 0], loc)
            out[(0, 1)] = np.einsum("nk,nk->n", dphi[..., 1], loc)
        if order >= 2:
            for key, c in (((2, 0), 0), ((1, 1), 1), ((0, 2), 2)):
                out[key] = np.einsum("nk,nk->n", d2[..., c], loc)
        zero = np.zeros_like(out[(0, 0)])
        for s in range(3, order + 1):
            for i in range(s + 1):
                out[(s - i, i)] = zero
        return out

    def __call__(self, cloud):
        return self.jet_on(cloud, 0)[(0, 0)]

    def prolong(self, fine_mesh):
        """Interpolate onto a mesh obtained by ``refine_uniform`` (exact: nested spaces)."""
        if fine_mesh.coarse_parent is None:
            raise FemError("fine mesh does not record its coarse parents")
        fine = DofMap.build(fine_mesh, self.degree)
        pts = fine.dof_points()
        owner = np.empty(fine.n_dofs, int)
        owner[fine.cell_dofs.ravel()] = np.repeat(fine_mesh.coarse_parent, fine.cell_dofs.shape[1])
        bary = _barycentric(self.mesh, owner, pts)
        cloud = Cloud(pts[:, 0], pts[:, 1], np.zeros(len(pts)), owner, bary)
        return FeFunction(fine, self.jet_on(cloud, 0)[(0, 0)])

    def __add__(self, other):
        return FeFunction(self.dofmap, self.values + other.values)

    def __sub__(self, other):
        return FeFunction(self.dofmap, self.values - other.values)

    def __mul__(self, s):
        return FeFunction(self.dofmap, self.values * s)

    __rmul__ = __mul__


def _barycentric(mesh, elem, pts):
    p = mesh.nodes[mesh.triangles[elem]]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    l12 = np.linalg.solve(J, (pts - p[:, 0])[..., None])[..., 0]
    return np.column_stack([1 - l12.sum(axis=1), l12])


def interpolate(dofmap, u):
    """Nodal interpolant of a closed-form field."""
    pts = dofmap.dof_points()
    return FeFunction(dofmap, np.asarray(u(pts[:, 0], pts[:, 1]), complex) * np.ones(len(pts)))


def random_function(dofmap, rng, pinned=()):
    """Random FE function with complex values, zero at ``pinned`` dofs."""
    v = rng.standard_normal(dofmap.n_dofs) + 1j * rng.standard_normal(dofmap.n_dofs)
    v[list(pinned)] = 0
    return FeFunction(dofmap, v)


# -- assembly ------------------------------------------------------------------

@dataclass(eq=False)
class LinearSystem:
    matrix: sp.csr_matrix
    load: np.ndarray
    dofmap: DofMap
    free: np.ndarray
    constrained: np.ndarray
    cloud: Cloud

    @property
    def n_free(self):
        return len(self.free)

    def restrict(self, full_matrix):
        return full_matrix[self.free][:, self.free].tocsr()

    def extend(self, x):
        out = np.zeros(self.dofmap.n_dofs, complex)
        out[self.free] = x
        return out


def constrained_dofs(domain, dofmap, beta=None, pin_vertices=None):
    """Dirichlet dofs, plus vertex dofs when ``c`` carries an r^-2 singularity.

    Functions of finite energy for such ``c`` satisfy r^-1 v in L^2, which
    forces them to vanish at the vertex.
    """
    out = [dofmap.boundary_dofs(DIRICHLET)]
    if pin_vertices is None:
        pin_vertices = beta is not None and beta.c.singular >= 2
    if pin_vertices:
        out.append(np.asarray(dofmap.mesh.vertex_nodes(domain)))
    return np.unique(np.concatenate(out)).astype(int)


def assembly_cloud(domain, mesh, degree):
    return mesh_cloud(mesh, 2 * degree + 4, mesh.vertex_nodes(domain))


def _form_matrix(dofmap, cloud, kernel):
    """Sum of ``kernel(phi, dphi, pts) -> (n, k, k)`` weighted over the cloud."""
    mesh = dofmap.mesh
    grads_all = barycentric_gradients(mesh)
    k = dofmap.cell_dofs.shape[1]
    n_el = mesh.n_triangles
    local = np.zeros((n_el, k * k), complex)
    for s in range(0, len(cloud.w), _CHUNK):
        sl = slice(s, s + _CHUNK)
        el = cloud.elem[sl]
        phi, dphi = shape_functions(dofmap.degree, cloud.bary[sl], grads_all[el])
        vals = kernel(phi, dphi, cloud.x[sl], cloud.y[sl]) * cloud.w[sl, None, None]
        R = sp.csr_matrix((np.ones(len(el)), (el, np.arange(len(el)))), shape=(n_el, len(el)))
        local += R @ vals.reshape(len(el), k * k)
    rows = np.repeat(dofmap.cell_dofs, k, axis=1).ravel()
    cols = np.tile(dofmap.cell_dofs, (1, k)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(dofmap.n_dofs,) * 2)


def form_matrix(beta, dofmap, cloud):
    """Full matrix ``M[i, j] = B(phi_j, phi_i)`` over all dofs."""
    def kernel(phi, dphi, x, y):
        out = 0
        for i in range(2):
            for j in range(2):
                a = beta.a[i][j]
                if not a.is_zero():
                    out = out + a(x, y)[:, None, None] * dphi[:, :, None, i] * dphi[:, None, :, j]
        for i in range(2):
            b = beta.b[i]
            if not b.is_zero():
                out = out + b(x, y)[:, None, None] * phi[:, :, None] * dphi[:, None, :, i]
            b = beta.b[2 + i]
            if not b.is_zero():
                out = out + b(x, y)[:, None, None] * dphi[:, :, None, i] * phi[:, None, :]
        if not beta.c.is_zero():
            out = out + beta.c(x, y)[:, None, None] * phi[:, :, None] * phi[:, None, :]
        return np.broadcast_to(out, (len(x),) + (phi.shape[1],) * 2)
    return _form_matrix(dofmap, cloud, kernel)


def mass_matrix(dofmap, cloud):
    return _form_matrix(dofmap, cloud, lambda phi, dphi, x, y: phi[:, :, None] * phi[:, None, :] + 0j)


def stiffness_matrix(dofmap, cloud):
    return _form_matrix(dofmap, cloud, lambda phi, dphi, x, y: np.einsum("nid,njd->nij", dphi, dphi) + 0j)


def gram_matrix(dofmap, cloud):
    """H^1 Gram matrix (stiffness + mass) over all dofs."""
    return stiffness_matrix(dofmap, cloud) + mass_matrix(dofmap, cloud)


def outward_normals(mesh, pairs):
    """Unit outward normals of boundary segments ``pairs``."""
    p, q = mesh.nodes[pairs[:, 0]], mesh.nodes[pairs[:, 1]]
    d = q - p
    n = np.column_stack([d[:, 1], -d[:, 0]]) / np.linalg.norm(d, axis=1)[:, None]
    # orient away from the owning triangle
    edges, t2e = mesh.edges()
    lookup = {tuple(e): k for k, e in enumerate(edges)}
    owner = np.empty(len(edges), int)
    owner[t2e.ravel()] = np.repeat(np.arange(mesh.n_triangles), 3)
    own = owner[[lookup[tuple(sorted(e))] for e in pairs]]
    inward = mesh.barycenters()[own] - 0.5 * (p + q)
    flip = np.einsum("ij,ij->i", n, inward) > 0
    n[flip] *= -1
    return n


def load_vector(dofmap, cloud, f=None, h=None):
    """``F(phi_i) = int f phi_i + int_{Neumann} h phi_i dS``.

    ``f`` is a field; ``h`` is called as ``h(x, y, nx, ny)``.
    """
    mesh = dofmap.mesh
    F = np.zeros(dofmap.n_dofs, complex)
    if f is not None:
        grads = barycentric_gradients(mesh)[cloud.elem]
        phi, _ = shape_functions(dofmap.degree, cloud.bary, grads)
        fv = np.asarray(f(cloud.x, cloud.y)) * np.ones(len(cloud.w))
        np.add.at(F, dofmap.cell_dofs[cloud.elem], (cloud.w * fv)[:, None] * phi)
    if h is not None:
        mask = np.array([lab == NEUMANN for lab in mesh.labels], bool)
        be = mesh.boundary_edges[mask]
        if len(be):
            s, w = line_rule(2 * dofmap.degree + 4)
            p, q = mesh.nodes[be[:, 0]], mesh.nodes[be[:, 1]]
            ln = np.linalg.norm(q - p, axis=1)
            nrm = outward_normals(mesh, be)
            pts = p[:, None, :] + s[None, :, None] * (q - p)[:, None, :]
            hv = h(pts[..., 0], pts[..., 1], nrm[:, None, 0], nrm[:, None, 1])
            hv = np.asarray(hv) * np.ones(pts.shape[:2])
            lam = np.column_stack([1 - s, s])
            if dofmap.degree == 1:
                shp = lam
                dofs = be
            else:
                shp = np.column_stack([lam * (2 * lam - 1), 4 * lam[:, 0] * lam[:, 1]])
                dofs = np.column_stack([be, mesh.n_nodes + dofmap.edge_index(be)])
            contrib = np.einsum("eq,q,qk->ek", hv, w, shp) * ln[:, None]
            np.add.at(F, dofs, contrib)
    return F


def assemble(domain, mesh, beta, degree=1, rhs=(None, None), pin_vertices=None, cloud=None):
    """Linear system of the Dirichlet form with homogeneous Dirichlet data.

    Dirichlet (and pinned vertex) dofs are removed from rows and columns
    alike; Neumann data ``h`` enters the load only.
    """
    dofmap = DofMap.build(mesh, degree)
    if cloud is None:
        cloud = assembly_cloud(domain, mesh, degree)
    full = form_matrix(beta, dofmap, cloud)
    f, h = rhs
    F = load_vector(dofmap, cloud, f, h)
    fixed = constrained_dofs(domain, dofmap, beta, pin_vertices)
    free = np.setdiff1d(np.arange(dofmap.n_dofs), fixed)
    return LinearSystem(full[free][:, free].tocsr(), F[free], dofmap, free, fixed, cloud)


# -- solving -------------------------------------------------------------------

def factorize(matrix):
    """Sparse LU with a singularity check on the pivots of U."""
    A = sp.csc_matrix(matrix)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SolveError(f"singular system: {exc}") from exc
    piv = np.abs(lu.U.diagonal())
    scale = max(abs(A).max(), 1e-300)
    if piv.min() <= 1e-11 * scale:
        raise SolveError(f"singular system: smallest pivot {piv.min():.3e}")
    return lu


def solve_matrix(matrix, rhs, lu=None):
    lu = lu if lu is not None else factorize(matrix)
    x = lu.solve(np.asarray(rhs, complex))
    nb = np.linalg.norm(rhs)
    res = np.linalg.norm(matrix @ x - rhs)
    if nb > 0 and res > RESIDUAL_TOL * nb:
        # one step of iterative refinement before giving up
        x = x + lu.solve(rhs - matrix @ x)
        res = np.linalg.norm(matrix @ x - rhs)
        if res > RESIDUAL_TOL * nb:
            raise SolveError(f"residual {res / nb:.3e} above tolerance")
    return x


def solve(system):
    """FE solution of ``system``; raises SolveError for singular matrices."""
    x = solve_matrix(system.matrix, system.load)
    return FeFunction(system.dofmap, system.extend(x), system.constrained)


# -- manufactured data -----------------------------------------------------------

class _StrongForm(Field):
    def __init__(self, beta, u):
        self.beta, self.u = beta, u
        self.singular = 0

    def jet(self, x, y, order=0):
        if order > 0:
            raise FemError("manufactured right-hand sides carry no derivatives")
        return {(0, 0): apply_operator(self.beta, self.u, x, y)}


def manufactured_rhs(domain, beta, u_exact):
    """Data ``(f, h)`` for which ``u_exact`` solves the mixed problem."""
    try:
        u_exact.jet(np.array([0.5]), np.array([0.5]), 2)
    except Exception as exc:  # noqa: BLE001 - any evaluation failure means no 2-jet
        raise FemError(f"exact solution lacks second derivatives: {exc}") from exc
    f = _StrongForm(beta, u_exact)

    def h(x, y, nx, ny):
        return conormal(beta, u_exact, x, y, nx, ny)
    return f, h


def apply_pointwise(beta, u, x, domain=None):
    """Strong form ``p_beta u`` at points off the vertex set."""
    x = np.atleast_2d(np.asarray(x, float))
    if domain is not None and np.any(weight(domain, x) <= 0):
        raise FemError("cannot evaluate the operator at a vertex")
    val = apply_operator(beta, u, x[:, 0], x[:, 1])
    return complex(val[0]) if len(val) == 1 else val


# -- export --------------------------------------------------------------------

def write_solution(fun, sink):
    """``solution 1`` header, dof count, then ``re im`` per dof."""
    buf = io.StringIO()
    buf.write("solution 1\n")
    buf.write(f"{len(fun.values)}\n")
    for v in fun.values:
        buf.write(f"{v.real:.17g} {v.imag:.17g}\n")
    text = buf.getvalue()
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(sink, "w") as fh:
            fh.write(text)
