"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (printed in the terminal summary)
before asserting, so a failing criterion still reports its numbers.
"""
import math
import time

import numpy as np
from shapely.geometry import Point

from cornerfem import analysis as A, coefficients as C, fem, fields as F, problems, weighted_norms as W
from cornerfem.geometry import chart, weight
from cornerfem.mesh import generate_graded_mesh, refine_uniform, uniform_mesh


def nested(domain, h, levels):
    ms = [uniform_mesh(domain, h)]
    for _ in range(levels - 1):
        ms.append(refine_uniform(ms[-1]))
    return ms


def random_elliptic(rng):
    u = lambda lo, hi: round(float(rng.uniform(lo, hi)), 3)
    e = F.expression_field
    a11 = e(f"{u(1, 2)} + {u(0, 0.5)}*sin({u(1, 4)}*x + {u(0, 3)})")
    a22 = e(f"{u(1, 2)} + {u(0, 0.5)}*cos({u(1, 4)}*y + {u(0, 3)}*x)")
    a12 = e(f"{u(-0.4, 0.4)}*sin({u(1, 3)}*x*y)")
    a21 = e(f"{u(-0.4, 0.4)} + {u(-0.2, 0.2)}*I")
    b = [e(f"{u(-0.5, 0.5)}"), e(f"{u(-0.5, 0.5)}*x"), e("0"), e(f"{u(-0.5, 0.5)}*y")]
    c = e(f"{u(0, 2)} + {u(0, 1)}*x*y")
    return C.CoefficientSet(((a11, a12), (a21, a22)), b, c)


def test_c01_coercivity_oracle(square, verdict):
    t0 = time.perf_counter()
    rhos = [A.coercivity_constant(square, m, C.laplace()).rho for m in nested(square, 1 / 8, 4)]
    elapsed = time.perf_counter() - t0
    oracle = 2 * math.pi ** 2 / (1 + 2 * math.pi ** 2)
    rel = rhos[-1] / oracle - 1
    monotone = all(b < a for a, b in zip(rhos, rhos[1:])) and rhos[-1] > oracle
    ok = 0 <= rel <= 0.01 and monotone and elapsed < 30
    verdict(1, ok, f"rho_h(1/64) = {rhos[-1]:.6f}, oracle {oracle:.6f}, rel {rel:.1e}, "
                   f"monotone from above {monotone}, {elapsed:.1f} s")
    assert ok


def test_c02_rho_below_cuse(square, verdict):
    rng = np.random.default_rng(7)
    meshes = nested(square, 1 / 8, 4)
    worst = 0.0
    results = []
    for _ in range(10):
        v = A.rho_cuse_check(square, meshes, random_elliptic(rng), degree=2)
        results.append(v.bound_ok and v.monotone)
        worst = max(worst, v.rhos[-1] / v.cuse)
    skew = C.CoefficientSet(((1, 1), (0, 1)))
    exact = C.c_use(skew, square) == 0.5
    sv = A.rho_cuse_check(square, meshes, skew)
    ok = all(results) and exact and sv.passed
    verdict(2, ok, f"{sum(results)}/10 random sets pass, max rho_h/C_use = {worst:.4f}; "
                   f"skew case C_use = 0.5 exactly {exact}, rho_h = {sv.rhos[-1]:.5f}")
    assert ok


def test_c03_norm_equivalence(lshape, verdict):
    bound = 4.0  # frozen from a calibration run (largest observed ratio 3.25)
    rng = np.random.default_rng(3)
    mesh = uniform_mesh(lshape, 1 / 4)
    fine = refine_uniform(mesh)
    dm = fem.DofMap.build(mesh, 2)
    pinned = mesh.vertex_nodes(lshape)
    samples = [fem.random_function(dm, rng, pinned) for _ in range(50)]
    worst_c, worst_drift = 0.0, 0.0
    for m in (0, 1, 2):
        for a in (0.0, 1.0):
            rep = W.equivalence_report(samples, W.WeightedNormSpec(m, a), mesh, lshape, fine)
            worst_c = max(worst_c, rep.constant)
            worst_drift = max(worst_drift, rep.drift)
    ok = worst_c <= bound and worst_drift < 0.10
    verdict(3, ok, f"50 P2 functions, m <= 2, a in {{0, 1}}: max C = {worst_c:.3f} (bound {bound:g}), "
                   f"max refinement drift {worst_drift:.1e}")
    assert ok


def _increment_ratio(norms):
    """Ratio of the last two squared-norm increments: < 1 for a convergent tail."""
    inc = np.diff(np.asarray(norms) ** 2)
    return inc[-1] / inc[-2]


def test_c04_regularity_threshold(lshape, verdict):
    u = problems.singular_function(lshape, 0)
    stable = W.truncated_norms(u, 2, 1.5, lshape, 0, halvings=10)
    growing = W.truncated_norms(u, 2, 1.8, lshape, 0, halvings=10)
    q_stable = _increment_ratio(stable)  # analytic 2^(-1/3)
    g_ratio = growing[-1] / growing[-2]
    ok = q_stable < 1 and g_ratio >= 2.0
    verdict(4, ok, f"K^2 weight 1.5: tail increment ratio {q_stable:.4f} < 1 (convergent); "
                   f"weight 1.8: growth {g_ratio:.4f} per halving (target >= 2)")
    assert ok


def test_c05_convergence_rates(lshape, verdict):
    t0 = time.perf_counter()
    u = problems.corner_singular_solution(lshape, 0)
    uni = A.convergence_study(lshape, C.laplace(), u, nested(lshape, 1 / 16, 4))
    graded = [generate_graded_mesh(lshape, 2.0 ** -k, {0: 2 / 3}) for k in range(4, 8)]
    grd = A.convergence_study(lshape, C.laplace(), u, graded)
    elapsed = time.perf_counter() - t0
    ru, rg = uni.slope("errH1"), grd.slope("errH1")
    ok = abs(ru - 2 / 3) <= 0.1 and abs(rg - 1) <= 0.1 and elapsed < 300
    verdict(5, ok, f"H1 rate uniform {ru:.3f} (2/3 +- 0.1), graded mu = 2/3 {rg:.3f} (1 +- 0.1), {elapsed:.0f} s")
    assert ok


def test_c06_conjugation_identity(lshape, verdict):
    rng = np.random.default_rng(6)
    poly = lshape.boundary_polygon()
    pts = []
    while len(pts) < 200:
        p = rng.uniform(-1, 1, 2)
        if poly.contains(Point(p)) and weight(lshape, p) > 1e-2:
            pts.append(p)
    pts = np.array(pts)
    x, y = pts[:, 0], pts[:, 1]
    sets = [C.schroedinger(lshape, 1.0), C.variable_demo(), random_elliptic(np.random.default_rng(1))]
    v = F.expression_field("1 + 2*x - x*y^2 + 3*y^3 - x^4")
    worst = 0.0
    for beta in sets:
        for a in (-0.5, 0.3):
            lhs = C.apply_operator(C.conjugate(beta, a, lshape), v, x, y)
            rhs = C.apply_operator(beta, F.weight_field(lshape, a) * v, x, y) / weight(lshape, pts) ** a
            worst = max(worst, float(np.abs(lhs - rhs).max()))
    ok = worst <= 1e-9
    verdict(6, ok, f"max |p_beta(a) v - r^-a p_beta(r^a v)| = {worst:.2e} over 200 points, 3 sets, a in {{-0.5, 0.3}}")
    assert ok


def test_c07_neumann_series(square, verdict):
    mesh = uniform_mesh(square, 1 / 16)
    s = fem.assemble(square, mesh, C.laplace(), 1, (F.expression_field("1"), None))
    Q = s.restrict(fem.mass_matrix(s.dofmap, s.cloud))
    G = s.restrict(fem.gram_matrix(s.dofmap, s.cloud))
    rho = A.coercivity_constant(square, mesh, C.laplace(), system=s).rho
    qn = A.gram_norm(Q, G)
    delta = 0.3 * rho / qn
    res = A.neumann_series_solve(s.matrix, Q, s.load, delta, 10, G, rho, qn)
    within = 0.5 <= res.q_fit / res.q_pred <= 2
    bound = 2 * res.q_pred ** 10 * res.u0_norm
    ok = within and res.errors[10] <= bound
    verdict(7, ok, f"q_fit = {res.q_fit:.4f} vs q_pred = {res.q_pred:.4f}; "
                   f"err_10 = {res.errors[10]:.2e} <= {bound:.2e}")
    assert ok


def _sweep(square, mesh, degree, span=101.0, count=6):
    """Members -Laplace - t with rho_h spanning a factor ``span`` on ``mesh``.

    rho_h(t) = (lam_h - t) / (1 + lam_h) with lam_h the first discrete
    Dirichlet eigenvalue, read off from rho_h(0).
    """
    rho0 = A.coercivity_constant(square, mesh, C.laplace(), degree).rho
    lam = rho0 / (1 - rho0)
    ts = [lam - r * (1 + lam) for r in np.geomspace(rho0, rho0 / span, count)]
    return [(f"t={t:.4f}", C.laplace() + C.CoefficientSet(((0, 0), (0, 0)), c=-t)) for t in ts]


def test_c08_inverse_bound(square, verdict):
    f = F.expression_field("sin(pi*x)*sin(pi*y)")
    m0, m1 = uniform_mesh(square, 1 / 16), uniform_mesh(square, 1 / 8)
    r0 = A.verify_inverse_bound(square, _sweep(square, m0, 1), 0, 0.0, m0, f)
    r1 = A.verify_inverse_bound(square, _sweep(square, m1, 2), 1, 0.0, m1, f)
    span = min(max(r.rho for r in rep.reports) / min(r.rho for r in rep.reports) for rep in (r0, r1))
    ok0 = r0.passed and r0.slope <= -0.8
    ok = ok0 and r1.passed and span >= 100
    verdict(8, ok, f"rho_h varies {span:.0f}x; m = 0: C_obs spread {r0.spread:.3g}, slope {r0.slope:.3f}; "
                   f"m = 1: C_obs spread {r1.spread:.3g} (cap 1e3)")
    assert ok


def test_c09_schroedinger_neumann(artificial_square, verdict):
    d = artificial_square
    beta = C.schroedinger(d, 1.0)
    meshes = nested(d, 1 / 8, 4)
    rhos = [A.coercivity_constant(d, m, beta).rho for m in meshes]
    stable = min(rhos) > 0 and (max(rhos) - min(rhos)) / max(rhos) <= 0.02
    u = F.expression_field("x*(1 - x)*y*(1 - y)*(1 + x + cos(2*y))")

    def away(x, y):
        return weight(d, np.column_stack([x, y])) >= d.delta0

    t = A.convergence_study(d, beta, u, meshes, region=away)
    l2, h1 = t.slope("errL2"), t.slope("errH1")
    ok = stable and abs(l2 - 2) <= 0.1 and abs(h1 - 1) <= 0.1
    verdict(9, ok, f"rho_h = {', '.join(f'{r:.5f}' for r in rhos)}; away from vertices L2 rate {l2:.3f}, "
                   f"H1 rate {h1:.3f}")
    assert ok


def _grammar(rng, depth=2):
    if depth == 0:
        c = round(float(rng.uniform(0.3, 2)), 2)
        return ["x", "y", "r", "theta", f"{c}*x*y", f"{c}"][rng.integers(6)]
    a, b = _grammar(rng, depth - 1), _grammar(rng, depth - 1)
    return [f"({a} + {b})", f"({a} - {b})", f"({a})*({b})", f"({a})/(2 + ({b})^2)",
            f"sin({a})", f"cos({a})", f"exp(0.5*sin({a}))", f"log(2 + ({a})^2)"][rng.integers(8)]


def test_c10_algebra_inverse(lshape, verdict):
    rng = np.random.default_rng(11)
    ctx = F.ExprContext.from_chart(chart(lshape, 0))
    pts = C.sample_points(lshape)
    worst_alg, worst_inv, checked = 0.0, 0.0, 0
    for _ in range(100):
        sb, sc = _grammar(rng), _grammar(rng)
        b, c = F.expression_field(sb, ctx), F.expression_field(sc, ctx)
        base = F.expression_field(f"2 + sin({sb})", ctx)
        inv = F.InverseField(base)
        for m in (3, 2, 1, 0):
            lhs = C.wm_inf_norm(F.ProductField(b, c), m, lshape, pts)
            rhs = C.algebra_constant(m) * C.wm_inf_norm(b, m, lshape, pts) * C.wm_inf_norm(c, m, lshape, pts)
            worst_alg = max(worst_alg, lhs / rhs if rhs else (0.0 if lhs == 0 else math.inf))
            lhs = C.wm_inf_norm(inv, m, lshape, pts)
            rhs = (C.inverse_constant(m) * C.wm_inf_norm(inv, 0, lshape, pts) ** (m + 1)
                   * C.wm_inf_norm(base, m, lshape, pts) ** m)
            worst_inv = max(worst_inv, lhs / rhs)
            checked += 1
    ok = worst_alg <= 1 + 1e-12 and worst_inv <= 1 + 1e-12
    verdict(10, ok, f"{checked} (pair, m) checks: max algebra ratio {worst_alg:.4f}, "
                    f"max inverse ratio {worst_inv:.4f} (constants 2^m and 1, 1, 3, 13)")
    assert ok
