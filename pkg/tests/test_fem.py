import io
import math

import numpy as np
import pytest

from cornerfem import analysis as A, coefficients as C, fem, fields as F, problems
from cornerfem.mesh import refine_uniform, uniform_mesh

SMOOTH = "sin(pi*x)*sin(pi*y)"


def test_stiffness_row_sums(square):
    m = uniform_mesh(square, 1 / 8)
    dm = fem.DofMap.build(m, 1)
    K = fem.stiffness_matrix(dm, fem.assembly_cloud(square, m, 1)).tocsr()
    interior = np.setdiff1d(np.arange(dm.n_dofs), dm.boundary_dofs("D"))
    assert np.abs(np.asarray(K.sum(axis=1)).ravel()[interior]).max() < 1e-12
    # structured interior rows reproduce the five-point stencil
    row = K[interior[len(interior) // 2]].toarray().ravel()
    nz = np.sort(row[np.abs(row) > 1e-12].real)
    assert np.allclose(nz, [-1, -1, -1, -1, 4])


def test_convection_transpose(square):
    m = uniform_mesh(square, 1 / 4)
    cloud = fem.assembly_cloud(square, m, 1)
    dm = fem.DofMap.build(m, 1)
    L = fem.form_matrix(C.laplace(), dm, cloud)
    conv = C.CoefficientSet(((1, 0), (0, 1)), (1, 0, 0, 0))
    div = C.CoefficientSet(((1, 0), (0, 1)), (0, 0, 1, 0))
    K1 = fem.form_matrix(conv, dm, cloud) - L
    K3 = fem.form_matrix(div, dm, cloud) - L
    assert abs(K1.T - K3).max() < 1e-12


def test_neumann_load_is_area(neumann_square):
    m = uniform_mesh(neumann_square, 1 / 4)
    s = fem.assemble(neumann_square, m, C.laplace(), 1, (F.expression_field("1"), None))
    assert s.load.sum().real == pytest.approx(1.0, rel=1e-13)


def test_hermitian_when_symmetric(lshape):
    m = uniform_mesh(lshape, 1 / 4)
    beta = C.CoefficientSet(((F.expression_field("2 + x*y"), 0.3), (0.3, 1)), c=F.expression_field("1 + x^2"))
    Amat = fem.assemble(lshape, m, beta, 2).matrix
    assert abs(Amat - Amat.conj().T).max() < 1e-12


@pytest.mark.parametrize("degree, rate", [(1, 2.0), (2, 3.0)])
def test_l2_convergence(square, degree, rate):
    u = F.expression_field(SMOOTH)
    meshes = [uniform_mesh(square, 1 / 4)]
    for _ in range(3):
        meshes.append(refine_uniform(meshes[-1]))
    table = A.convergence_study(square, C.laplace(), u, meshes, degree)
    h = np.array([mm.h() for mm in meshes])
    slope = np.polyfit(np.log(h), np.log([r["errL2"] for r in table.rows]), 1)[0]
    assert slope == pytest.approx(rate, abs=0.1)


def test_pure_neumann_singular(neumann_square):
    m = uniform_mesh(neumann_square, 1 / 4)
    s = fem.assemble(neumann_square, m, C.laplace(), 1, (F.expression_field("1"), None))
    with pytest.raises(fem.SolveError, match="singular system"):
        fem.solve(s)


def test_schroedinger_neumann_solvable(artificial_square):
    beta = C.schroedinger(artificial_square, 1.0)
    u = F.expression_field("x*(1 - x)*y*(1 - y)*(1 + x)")
    m = uniform_mesh(artificial_square, 1 / 8)
    s = fem.assemble(artificial_square, m, beta, 1, fem.manufactured_rhs(artificial_square, beta, u))
    uh = fem.solve(s)
    x = uh.values[s.free]
    assert np.linalg.norm(s.matrix @ x - s.load) <= 1e-10 * np.linalg.norm(s.load)


def test_galerkin_orthogonality(lshape):
    beta = C.variable_demo()
    m = uniform_mesh(lshape, 1 / 4)
    s = fem.assemble(lshape, m, beta, 2, (F.expression_field("1 + x"), None))
    uh = fem.solve(s)
    full = fem.form_matrix(beta, s.dofmap, s.cloud)
    load = fem.load_vector(s.dofmap, s.cloud, F.expression_field("1 + x"))
    resid = (full @ uh.values - load)[s.free]
    assert np.abs(resid).max() <= 1e-10 * np.abs(load).max()


def test_refinement_reduces_energy_error(square):
    u = F.expression_field(SMOOTH)
    f, h = fem.manufactured_rhs(square, C.laplace(), u)
    m = uniform_mesh(square, 1 / 4)
    errs = []
    for _ in range(3):
        s = fem.assemble(square, m, C.laplace(), 1, (f, h))
        errs.append(A.fe_errors(square, fem.solve(s), u, s.cloud)[1])
        m = refine_uniform(m)
    assert errs[0] > errs[1] > errs[2]


def test_coercivity_transfer(square):
    beta = C.variable_demo()
    m = uniform_mesh(square, 1 / 8)
    s = fem.assemble(square, m, beta, 1, (F.expression_field("exp(x)*y"), None))
    uh = fem.solve(s)
    G = s.restrict(fem.gram_matrix(s.dofmap, s.cloud)).toarray().real
    rho = A.coercivity_constant(square, m, beta, 1, system=s).rho
    x = uh.values[s.free]
    u_norm = math.sqrt(np.real(x.conj() @ G @ x))
    dual = math.sqrt(np.real(s.load.conj() @ np.linalg.solve(G, s.load)))
    assert u_norm <= dual / rho * (1 + 1e-10)


def test_manufactured_examples(square, lshape):
    u = F.expression_field(SMOOTH)
    f, h = fem.manufactured_rhs(square, C.laplace(), u)
    x = np.array([0.3, 0.7])
    y = np.array([0.2, 0.9])
    assert np.allclose(f(x, y), 2 * math.pi ** 2 * np.sin(math.pi * x) * np.sin(math.pi * y))
    assert np.allclose(h(x, 0 * x, 0.0, -1.0), -math.pi * np.sin(math.pi * x))
    sing = problems.singular_function(lshape, 0)
    fs, _ = fem.manufactured_rhs(lshape, C.laplace(), sing)
    pts = np.array([[0.3, 0.4], [-0.5, -0.2], [-0.7, 0.6]])
    assert np.abs(fs(pts[:, 0], pts[:, 1])).max() < 1e-12


def test_apply_pointwise(square, lshape, rng):
    assert fem.apply_pointwise(C.laplace(), F.expression_field("x^2 + y^2"), [0.3, 0.6]) == pytest.approx(-4)
    kappa = 1.7
    val = fem.apply_pointwise(C.schroedinger(square, kappa), F.expression_field("1"), [0.5, 0.5], square)
    assert val == pytest.approx(4 * kappa)
    sing = problems.singular_function(lshape, 0)
    th = rng.uniform(0.1, 4.6, 20)
    r = rng.uniform(0.05, 0.45, 20)
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    assert np.abs(fem.apply_pointwise(C.laplace(), sing, pts, lshape)).max() <= 1e-8
    with pytest.raises(fem.FemError):
        fem.apply_pointwise(C.laplace(), sing, [0.0, 0.0], lshape)


def test_prolong_is_exact(lshape, rng):
    m = uniform_mesh(lshape, 1 / 2)
    fine = refine_uniform(m)
    for degree in (1, 2):
        u = fem.random_function(fem.DofMap.build(m, degree), rng)
        v = u.prolong(fine)
        cloud = fem.assembly_cloud(lshape, fine, degree)
        parent_cloud = type(cloud)(cloud.x, cloud.y, cloud.w, fine.coarse_parent[cloud.elem],
                                   fem._barycentric(m, fine.coarse_parent[cloud.elem], cloud.points))
        assert np.allclose(v(cloud), u(parent_cloud), atol=1e-12)


def test_write_solution(square):
    dm = fem.DofMap.build(uniform_mesh(square, 1 / 2), 1)
    u = fem.FeFunction(dm, np.arange(dm.n_dofs) * (1 + 2j))
    buf = io.StringIO()
    fem.write_solution(u, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "solution 1" and int(lines[1]) == dm.n_dofs
    assert lines[3] == "1 2"
