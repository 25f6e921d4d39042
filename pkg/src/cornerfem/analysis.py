"""Coercivity, bound checks, Neumann-series perturbation and convergence studies."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from . import fem
from .coefficients import c_use, conjugate, zm_norm
from .quadrature import mesh_cloud
from .weighted_norms import WeightedNormSpec, kondratiev_norm, norm_cloud

EIG_TOL = 1e-8
DENSE_LIMIT = 1500


class AnalysisError(RuntimeError):
    pass


# -- exponents -------------------------------------------------------------------

def n_exponent(m):
    """N_m from N_0 = 0, N_m = 2 N_{m-1} + m + 1."""
    n = 0
    for k in range(1, m + 1):
        n = 2 * n + k + 1
    return n


def n_exponent_closed(m):
    """The closed form 2^(m+2) - m - 3 (equals the recurrence started at N_0 = 1)."""
    return 2 ** (m + 2) - m - 3


# -- coercivity ----------------------------------------------------------------------

@dataclass
class Coercivity:
    rho: float
    n_free: int
    method: str
    iterations: int = 0


def positive_definite(A):
    """True if the Hermitian matrix ``A`` is positive definite.

    Uses an LU with diagonal pivots in symmetric mode, so U carries the
    LDL^* pivots and Sylvester's law gives the inertia.
    """
    try:
        lu = spla.splu(sp.csc_matrix(A), diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError:
        return False
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return False
    d = lu.U.diagonal()
    return bool(np.all(d.real > 0))


def smallest_pencil_eig(H, G, tol=EIG_TOL, upper=None, bracket=1e-2):
    """Smallest eigenvalue of the Hermitian pencil (H, G), G positive definite.

    The eigenvalue is bracketed by inertia bisection (H - sigma G is
    positive definite exactly when sigma lies below the spectrum) and then
    polished by shift-invert Lanczos from the lower end of the bracket.
    ``upper`` is an optional known upper bound (e.g. rho on a coarser nested
    mesh); ``bracket`` is the relative bracket width handed to Lanczos.
    """
    n = H.shape[0]
    if not (np.iscomplexobj(H.data) and np.abs(H.data.imag).max(initial=0) > 0):
        H = H.real
    H = H.tocsc()
    G = G.real.tocsc()
    if n <= DENSE_LIMIT:
        lam = sla.eigh(H.toarray(), G.toarray(), eigvals_only=True, subset_by_index=[0, 0])
        return float(lam[0]), "dense", 0
    # Rayleigh quotients of unit vectors bound the minimum from above
    hi = float(np.min(H.diagonal().real / G.diagonal()))
    if upper is not None:
        hi = min(hi, float(upper))
    if positive_definite(H - hi * G):
        return hi, "inertia", 0
    step = 1e-3 * max(1.0, abs(hi))
    lo = hi - step
    while not positive_definite(H - lo * G):
        hi, step = lo, step * 10
        lo = hi - step
        if step > 1e12:
            raise AnalysisError("eigensolver could not place a shift below the spectrum")
    its = 0
    while hi - lo > bracket * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if positive_definite(H - mid * G):
            lo = mid
        else:
            hi = mid
        its += 1
    try:
        lam = spla.eigsh(H, k=1, M=G, sigma=lo, which="LM", tol=tol * 1e-2, maxiter=5000,
                         return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise AnalysisError("eigensolver did not converge") from exc
    return float(lam[0].real), "shift-invert", its


def coercivity_constant(domain, mesh, beta, degree=1, pin_vertices=None, tol=EIG_TOL, system=None,
                        upper=None):
    """rho_h = min eigenvalue of ((A + A^*)/2, G) on the free space; G is the H^1 Gram matrix."""
    if system is None:
        system = fem.assemble(domain, mesh, beta, degree, pin_vertices=pin_vertices)
    A = system.matrix
    H = 0.5 * (A + A.conj().T)
    G = system.restrict(fem.gram_matrix(system.dofmap, system.cloud))
    rho, method, its = smallest_pencil_eig(H, G, tol, upper)
    return Coercivity(rho, system.n_free, method, its)


def is_nested(meshes):
    for coarse, fine in zip(meshes[:-1], meshes[1:]):
        if fine.coarse_parent is None or len(fine.coarse_parent) != 4 * coarse.n_triangles:
            return False
        if not np.array_equal(fine.nodes[: coarse.n_nodes], coarse.nodes):
            return False
    return True


@dataclass
class RhoCuseVerdict:
    rhos: list
    cuse: float
    nested: bool
    monotone: bool | None
    bound_ok: bool
    warning: str = ""

    @property
    def passed(self):
        return self.bound_ok and self.monotone is not False


def rho_cuse_check(domain, meshes, beta, degree=1, slack=1.05):
    """rho_h along ``meshes`` against C_use; monotonicity is checked for nested sequences only."""
    nested = is_nested(meshes)
    rhos = []
    for m in meshes:
        # on nested spaces the coarser value bounds the finer one from above
        hint = rhos[-1] * (1 + 1e-6) if nested and rhos else None
        rhos.append(coercivity_constant(domain, m, beta, degree, upper=hint).rho)
    cu = c_use(beta, domain)
    monotone = None
    warning = ""
    if nested:
        monotone = all(b <= a + 1e-10 * max(1.0, abs(a)) for a, b in zip(rhos[:-1], rhos[1:]))
    else:
        warning = "non-nested mesh sequence: monotonicity not checked"
    return RhoCuseVerdict(rhos, cu, nested, monotone, rhos[-1] <= slack * cu, warning)


def gram_norm(Q, G):
    """Operator norm of Q with respect to the G inner product on both sides."""
    Gc = sp.csc_matrix(G)
    lu = fem.factorize(Gc)
    n = Q.shape[0]
    if n <= DENSE_LIMIT:
        Gd = G.toarray()
        Qd = Q.toarray()
        W = Qd.conj().T @ np.linalg.solve(Gd, Qd)
        W = 0.5 * (W + W.conj().T)
        return float(np.sqrt(max(sla.eigh(W, Gd, eigvals_only=True)[-1], 0.0)))
    Qh = Q.conj().T.tocsr()
    op = spla.LinearOperator(Q.shape, matvec=lambda v: Qh @ lu.solve(Q @ v), dtype=complex)
    Minv = spla.LinearOperator(Q.shape, matvec=lu.solve, dtype=complex)
    lam = spla.eigsh(op, k=1, M=Gc, Minv=Minv, which="LA", tol=1e-10, return_eigenvectors=False)
    return float(np.sqrt(max(lam[0].real, 0.0)))


# -- Neumann series ------------------------------------------------------------------

@dataclass
class SeriesResult:
    errors: np.ndarray
    ratios: np.ndarray
    q_fit: float
    q_pred: float
    u0_norm: float
    solution: np.ndarray


def neumann_series_solve(P, Q, F, delta, n_terms, G, rho, q_norm=None):
    """u_n = sum_{k<=n} P^-1 (delta Q P^-1)^k F against the direct solve of (P - delta Q) u = F.

    Errors are measured in the H^1 norm given by the Gram matrix ``G``.
    """
    if q_norm is None:
        q_norm = gram_norm(Q, G)
    q_pred = abs(delta) * q_norm / rho if rho > 0 else np.inf
    if q_pred >= 1:
        raise AnalysisError(f"perturbation too large: estimated q = {q_pred:.3g}")

    def h1(v):
        return float(np.sqrt(abs(np.vdot(v, G @ v))))

    lu = fem.factorize(P)
    direct = fem.solve_matrix(P - delta * Q, F) if delta != 0 else fem.solve_matrix(P, F, lu)
    term = fem.solve_matrix(P, F, lu)
    u = term.copy()
    u0_norm = h1(u)
    errors = [h1(u - direct)]
    for _ in range(n_terms):
        term = lu.solve(delta * (Q @ term))
        u = u + term
        errors.append(h1(u - direct))
    errors = np.array(errors)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = errors[1:] / errors[:-1]
    sel = slice(2, min(9, len(errors)))
    e = errors[sel]
    if len(e) >= 2 and np.all(e > 0):
        slope = np.polyfit(np.arange(len(errors))[sel], np.log(e), 1)[0]
        q_fit = float(np.exp(slope))
    else:
        q_fit = 0.0
    return SeriesResult(errors, ratios, q_fit, q_pred, u0_norm, u)


# -- inverse bound harness --------------------------------------------------------------

@dataclass
class SolveReport:
    case: str
    n_triangles: int
    h: float
    rho: float
    cuse: float
    zm: float
    u_norm: float
    f_norm: float
    Nm: int
    Nm_closed: int
    r_obs: float = field(init=False)
    envelope: float = field(init=False)
    c_obs: float = field(init=False)
    verdict: str = "PASS"

    def __post_init__(self):
        self.r_obs = self.u_norm / self.f_norm
        self.envelope = self.rho ** (-self.Nm - 1) * self.zm ** self.Nm
        self.c_obs = self.r_obs / self.envelope

    def c_obs_closed(self):
        return self.r_obs / (self.rho ** (-self.Nm_closed - 1) * self.zm ** self.Nm_closed)


@dataclass
class BoundResult:
    reports: list
    skipped: list
    spread: float
    cap: float
    slope: float | None

    @property
    def passed(self):
        return self.spread < self.cap


def _data_norm(system, f, m, a, domain, G):
    """Norm of the data: discrete dual H^1 norm for m = 0, K^{m-1}_{a-1} of f otherwise.

    Neumann data enters through the load vector when m = 0; for m >= 1 the
    edge term is the r^{1-a}-weighted L^2 norm of h on Neumann edges.
    """
    F = system.load
    if m == 0:
        if a != 0:
            raise AnalysisError("m = 0 data norms are only available for a = 0")
        lu = fem.factorize(G)
        return float(np.sqrt(abs(np.vdot(F, lu.solve(F)))))
    spec = WeightedNormSpec(m - 1, a - 1)
    return kondratiev_norm(f, spec, domain=domain, cloud=system.cloud)


def verify_inverse_bound(domain, family, m, a, mesh, f, degree=None, cap=1e3, zm_points=None,
                         pin_vertices=None):
    """Observed inverse norms against rho^{-N_m-1} ||beta(a)||_{Z_m}^{N_m} over a family.

    ``family`` is a list of ``(case, beta)``.  Each member is conjugated by
    ``r^a`` and solved with data ``f``; members with rho_h below ten times
    the eigensolver tolerance are skipped.
    """
    from .coefficients import sample_points

    degree = degree if degree is not None else (1 if m == 0 else 2)
    if zm_points is None:
        zm_points = sample_points(domain)
    Nm, Nc = n_exponent(m), n_exponent_closed(m)
    reports, skipped = [], []
    for case, beta in family:
        ba = conjugate(beta, a, domain)
        system = fem.assemble(domain, mesh, ba, degree, (f, None), pin_vertices=pin_vertices)
        G = system.restrict(fem.gram_matrix(system.dofmap, system.cloud))
        H = 0.5 * (system.matrix + system.matrix.conj().T)
        rho = smallest_pencil_eig(H, G)[0]
        if rho < 10 * EIG_TOL:
            skipped.append((case, f"not coercive (rho_h = {rho:.3e})"))
            continue
        try:
            uh = fem.solve(system)
        except fem.SolveError as exc:
            skipped.append((case, str(exc)))
            continue
        cloud = norm_cloud(domain, mesh, m + 1)
        un = kondratiev_norm(uh, WeightedNormSpec(m + 1, a + 1), domain=domain, cloud=cloud)
        fn = _data_norm(system, f, m, a, domain, G)
        reports.append(SolveReport(case, mesh.n_triangles, mesh.h(), rho, c_use(ba, domain, zm_points),
                                   zm_norm(ba, m, domain, zm_points), un, fn, Nm, Nc))
    if not reports:
        raise AnalysisError("no coercive member in the family")
    cs = np.array([r.c_obs for r in reports])
    spread = float(cs.max() / cs.min())
    for r in reports:
        r.verdict = "PASS" if spread < cap else "FAIL"
    slope = None
    if len(reports) >= 2:
        rho = np.array([r.rho for r in reports])
        robs = np.array([r.r_obs for r in reports])
        slope = float(np.polyfit(np.log(rho), np.log(robs), 1)[0])
    return BoundResult(reports, skipped, spread, cap, slope)


# -- convergence --------------------------------------------------------------------

@dataclass
class ConvergenceTable:
    rows: list
    rates: dict

    def slope(self, key):
        return self.rates[key]


def fe_errors(domain, uh, u_exact, cloud):
    """L^2, H^1 and K^1_1 norms of u_exact - u_h on ``cloud``."""
    from .geometry import weight

    e = uh.jet_on(cloud, 1)
    x = u_exact.jet(cloud.x, cloud.y, 1)
    d0 = np.abs(x[(0, 0)] - e[(0, 0)]) ** 2
    d1 = np.abs(x[(1, 0)] - e[(1, 0)]) ** 2 + np.abs(x[(0, 1)] - e[(0, 1)]) ** 2
    r = weight(domain, cloud.points)
    l2 = np.sqrt(np.sum(cloud.w * d0))
    h1 = np.sqrt(np.sum(cloud.w * (d0 + d1)))
    k11 = np.sqrt(np.sum(cloud.w * (d0 / r ** 2 + d1)))
    return float(l2), float(h1), float(k11)


def convergence_rates(ndofs, errors):
    """Rate p in err ~ N^(-p/2), the h-rate for quasi-uniform 2D meshes."""
    slope = np.polyfit(np.log(ndofs), np.log(errors), 1)[0]
    return float(-2 * slope)


def convergence_study(domain, beta, u_exact, meshes, degree=1, region=None, depth=6):
    """Errors per level and least-squares rates.

    ``region`` optionally restricts the error integrals to points with
    ``region(x, y)`` true (e.g. away from a vertex).
    """
    if len(meshes) < 3:
        raise AnalysisError("convergence study needs at least 3 levels")
    f, h = fem.manufactured_rhs(domain, beta, u_exact)
    rows = []
    for level, mesh in enumerate(meshes):
        system = fem.assemble(domain, mesh, beta, degree, (f, h))
        uh = fem.solve(system)
        cloud = mesh_cloud(mesh, 2 * degree + 4, mesh.vertex_nodes(domain), depth=depth)
        if region is not None:
            cloud = cloud.restrict(np.asarray(region(cloud.x, cloud.y), bool))
        l2, h1, k11 = fe_errors(domain, uh, u_exact, cloud)
        rows.append({"level": level, "h": mesh.h(), "ndof": system.n_free,
                     "errL2": l2, "errH1": h1, "errK11": k11})
    nd = [r["ndof"] for r in rows]
    rates = {k: convergence_rates(nd, [r[k] for r in rows]) for k in ("errL2", "errH1", "errK11")}
    return ConvergenceTable(rows, rates)


# -- CSV ------------------------------------------------------------------------------

def emit_csv(header, rows, sink):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if sink is not None:
        if hasattr(sink, "write"):
            sink.write(text)
        else:
            with open(sink, "w") as fh:
                fh.write(text)
    return text


def _g(v):
    return f"{v:.10e}"


def convergence_csv(table, sink=None):
    rows = [[r["level"], _g(r["h"]), r["ndof"], _g(r["errL2"]), _g(r["errH1"]), _g(r["errK11"])]
            for r in table.rows]
    rows.append(["slope", "", "", f"{table.rates['errL2']:.4f}", f"{table.rates['errH1']:.4f}",
                 f"{table.rates['errK11']:.4f}"])
    return emit_csv(["level", "h", "ndof", "errL2", "errH1", "errK11"], rows, sink)


def bound_csv(result, sink=None):
    rows = [[r.case, _g(r.rho), _g(r.cuse), _g(r.zm), r.Nm, _g(r.r_obs), _g(r.envelope), _g(r.c_obs),
             r.verdict] for r in result.reports]
    return emit_csv(["case", "rho", "cuse", "zm", "Nm", "Robs", "envelope", "Cobs", "verdict"], rows, sink)


def series_csv(result, sink=None):
    rows = [[n, _g(e), "" if n == 0 else _g(result.ratios[n - 1])] for n, e in enumerate(result.errors)]
    return emit_csv(["n", "err", "ratio"], rows, sink)
