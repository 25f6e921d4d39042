"""Command-line front end.

    cornerfem <subcommand> --config <path> [--out <dir>] [--plot] [--threads N]

Exit status 0 on success, 1 on validation errors and 2 on numerical
failures; failures print one ``error kind=... reason="..."`` line on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, coefficients, fem, fields, geometry, mesh as meshmod, problems, weighted_norms
from .plotting import write_loglog

THREADS_ENV = "CORNERFEM_THREADS"
SUBCOMMANDS = ("solve", "coercivity", "norms", "converge", "perturb", "verify-bound")


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


# -- config ----------------------------------------------------------------------

class RunConfig:
    """A validated JSON run configuration."""

    def __init__(self, data, base):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        self.data = data
        self.base = Path(base)
        self.domain = self._domain(data.get("domain"))
        vertex = int(data.get("center_vertex", 0))
        if not 0 <= vertex < self.domain.n_vertices:
            raise ConfigError(f"center_vertex {vertex} out of range")
        self.context = fields.ExprContext.from_chart(geometry.chart(self.domain, vertex))
        self.degree = int(data.get("degree", 1))
        if self.degree not in (1, 2):
            raise ConfigError("degree must be 1 or 2")
        norm = data.get("norm", {})
        self.m = int(norm.get("m", 0))
        self.a = float(norm.get("a", 0.0))
        if not 0 <= self.m <= 3:
            raise ConfigError("norm order m must lie in 0..3")
        if abs(self.a) > 2:
            raise ConfigError("weight a must satisfy |a| <= 2")
        self.seed = int(data.get("seed", 0))
        mesh = data.get("mesh", {})
        self.h = float(mesh.get("h", 0.125))
        self.levels = int(mesh.get("levels", 1))
        self.refine = mesh.get("refine", "uniform")
        if self.refine not in ("uniform", "regenerate"):
            raise ConfigError("mesh.refine must be 'uniform' or 'regenerate'")
        self.grading = {int(k): float(v) for k, v in mesh.get("grading", {}).items()}
        if self.h <= 0 or self.levels < 1:
            raise ConfigError("mesh.h must be positive and mesh.levels >= 1")

    def _domain(self, spec):
        if spec is None:
            raise ConfigError("missing 'domain'")
        try:
            if isinstance(spec, dict):
                return geometry.build_domain(spec)
            if spec in problems.BUNDLED:
                return problems.bundled_domain(spec)
            path = self.base / spec
            if not path.exists():
                raise ConfigError(f"domain file {spec!r} not found")
            return geometry.load_domain(path)
        except geometry.DomainError as exc:
            raise ConfigError(f"invalid domain: {exc}") from exc

    def coefficients(self, key="coefficients", default="laplace"):
        spec = self.data.get(key, default)
        try:
            return coefficients.from_spec(spec, self.domain, self.context)
        except (coefficients.CoefficientError, fields.FieldError) as exc:
            raise ConfigError(f"invalid {key}: {exc}") from exc

    def field(self, text):
        try:
            return fields.expression_field(str(text), self.context)
        except fields.FieldError as exc:
            raise ConfigError(str(exc)) from exc

    def exact(self):
        spec = self.data.get("exact")
        if spec is None:
            return None
        if isinstance(spec, dict):
            if "singular_vertex" not in spec:
                raise ConfigError("exact solution tables need 'singular_vertex'")
            return problems.corner_singular_solution(self.domain, int(spec["singular_vertex"]),
                                                     spec.get("cutoff", "edges"))
        return self.field(spec)

    def meshes(self):
        try:
            if self.refine == "uniform":
                out = [meshmod.generate_graded_mesh(self.domain, self.h, self.grading)]
                for _ in range(self.levels - 1):
                    out.append(meshmod.refine_uniform(out[-1]))
                return out
            return [meshmod.generate_graded_mesh(self.domain, self.h / 2 ** k, self.grading)
                    for k in range(self.levels)]
        except meshmod.MeshError as exc:
            raise ConfigError(f"mesh: {exc}") from exc

    def study(self, key, default=None):
        return self.data.get(key, default)


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {str(path)!r} not found")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return RunConfig(data, path.parent)


# -- subcommands ---------------------------------------------------------------------

def _rhs(cfg, beta):
    u = cfg.exact()
    if u is not None:
        return fem.manufactured_rhs(cfg.domain, beta, u), u
    f = cfg.field(cfg.data.get("f", "1"))
    h_text = cfg.data.get("h")
    if h_text is None:
        return (f, None), None
    hf = cfg.field(h_text)

    def h(x, y, nx, ny):
        return hf(x, y)
    return (f, h), None


def cmd_solve(cfg, out, plot):
    beta = cfg.coefficients()
    mesh = cfg.meshes()[-1]
    rhs, u = _rhs(cfg, beta)
    system = fem.assemble(cfg.domain, mesh, beta, cfg.degree, rhs)
    try:
        uh = fem.solve(system)
    except fem.SolveError as exc:
        raise NumericalFailure(str(exc)) from exc
    with open(out / "solution.txt", "w") as fh:
        fem.write_solution(uh, fh)
    meshmod.write_mesh(mesh, out / "mesh.txt")
    spec = weighted_norms.WeightedNormSpec(min(cfg.m + 1, cfg.degree), cfg.a + 1)
    kn = weighted_norms.kondratiev_norm(uh, spec, mesh, cfg.domain)
    row = [mesh.n_triangles, system.n_free, f"{mesh.h():.10e}", f"{kn:.10e}"]
    header = ["triangles", "ndof", "h", f"K^{spec.m}_{spec.a:g} norm"]
    if u is not None:
        l2, h1, k11 = analysis.fe_errors(cfg.domain, uh, u, system.cloud)
        row += [f"{l2:.10e}", f"{h1:.10e}", f"{k11:.10e}"]
        header += ["errL2", "errH1", "errK11"]
    analysis.emit_csv(header, [row], out / "solve.csv")


def cmd_coercivity(cfg, out, plot):
    beta = cfg.coefficients()
    meshes = cfg.meshes()
    rows, rhos = [], []
    for level, m in enumerate(meshes):
        try:
            res = analysis.coercivity_constant(cfg.domain, m, beta, cfg.degree)
        except analysis.AnalysisError as exc:
            raise NumericalFailure(str(exc)) from exc
        rhos.append(res.rho)
        rows.append([level, f"{m.h():.10e}", res.n_free, f"{res.rho:.10e}"])
    cu = coefficients.c_use(beta, cfg.domain)
    rows.append(["cuse", "", "", f"{cu:.10e}"])
    analysis.emit_csv(["level", "h", "ndof", "rho"], rows, out / "coercivity.csv")
    if plot and len(meshes) > 1:
        write_loglog(out / "coercivity.svg", {"rho_h - min": ([m.h() for m in meshes[:-1]],
                                                             np.array(rhos[:-1]) - rhos[-1])},
                     title="coercivity constant", xlabel="h", ylabel="rho_h - rho_final")
    if rhos[-1] < 10 * analysis.EIG_TOL:
        raise NumericalFailure("not coercive")


def cmd_norms(cfg, out, plot):
    st = cfg.study("norms", {})
    count = int(st.get("samples", 10))
    mesh = cfg.meshes()[-1]
    dm = fem.DofMap.build(mesh, cfg.degree)
    rng = np.random.default_rng(cfg.seed)
    pinned = mesh.vertex_nodes(cfg.domain)
    spec = weighted_norms.WeightedNormSpec(cfg.m, cfg.a)
    if cfg.m > cfg.degree:
        raise ConfigError(f"norm order {cfg.m} needs elements of degree >= {cfg.m}")
    cloud = weighted_norms.norm_cloud(cfg.domain, mesh, cfg.m)
    rows = []
    for k in range(count):
        u = fem.random_function(dm, rng, pinned)
        kn = weighted_norms.kondratiev_norm(u, spec, domain=cfg.domain, cloud=cloud)
        cn = weighted_norms.chart_norm(u, spec, domain=cfg.domain, cloud=cloud)
        rows.append((f"fe{k}", cfg.m, cfg.a, kn, cn))
    exact = cfg.exact()
    if exact is not None:
        kn = weighted_norms.kondratiev_norm(exact, spec, domain=cfg.domain, cloud=cloud)
        cn = weighted_norms.chart_norm(exact, spec, domain=cfg.domain, cloud=cloud)
        rows.append(("exact", cfg.m, cfg.a, kn, cn))
    weighted_norms.write_norm_rows(rows, out / "norms.csv")


def cmd_converge(cfg, out, plot):
    beta = cfg.coefficients()
    u = cfg.exact()
    if u is None:
        raise ConfigError("converge needs an 'exact' solution")
    meshes = cfg.meshes()
    try:
        table = analysis.convergence_study(cfg.domain, beta, u, meshes, cfg.degree)
    except analysis.AnalysisError as exc:
        raise ConfigError(str(exc)) from exc
    except fem.SolveError as exc:
        raise NumericalFailure(str(exc)) from exc
    analysis.convergence_csv(table, out / "convergence.csv")
    if plot:
        nd = [r["ndof"] for r in table.rows]
        write_loglog(out / "convergence.svg", {k: (nd, [r[k] for r in table.rows])
                                               for k in ("errL2", "errH1", "errK11")},
                     title="convergence", xlabel="ndof", ylabel="error")


def cmd_perturb(cfg, out, plot):
    st = cfg.study("perturb", {})
    beta = cfg.coefficients()
    gamma = cfg.coefficients("perturbation", {"c": "1"})
    mesh = cfg.meshes()[-1]
    (f, h), _ = _rhs(cfg, beta)
    system = fem.assemble(cfg.domain, mesh, beta, cfg.degree, (f, h))
    full_q = fem.form_matrix(gamma, system.dofmap, system.cloud)
    Q = system.restrict(full_q)
    G = system.restrict(fem.gram_matrix(system.dofmap, system.cloud))
    try:
        rho = analysis.coercivity_constant(cfg.domain, mesh, beta, cfg.degree, system=system).rho
        if rho < 10 * analysis.EIG_TOL:
            raise NumericalFailure("not coercive")
        qn = analysis.gram_norm(Q, G)
        factor = float(st.get("factor", 0.3))
        delta = factor * rho / qn if st.get("scale", "rho_over_norm") == "rho_over_norm" else factor * rho
        res = analysis.neumann_series_solve(system.matrix, Q, system.load, delta, int(st.get("terms", 10)),
                                            G, rho, qn)
    except analysis.AnalysisError as exc:
        raise NumericalFailure(str(exc)) from exc
    except fem.SolveError as exc:
        raise NumericalFailure(str(exc)) from exc
    analysis.series_csv(res, out / "series.csv")
    if plot:
        n = np.arange(1, len(res.errors) + 1)
        write_loglog(out / "series.svg", {"error": (n, res.errors)}, title="Neumann series",
                     xlabel="n + 1", ylabel="H1 error", fit=False)


def _family(cfg):
    st = cfg.study("family")
    if st is None:
        raise ConfigError("verify-bound needs a 'family'")
    if isinstance(st, list):
        return [(f"case{k}", coefficients.from_spec(s, cfg.domain, cfg.context)) for k, s in enumerate(st)]
    sweep = st.get("c_sweep")
    if sweep is None:
        raise ConfigError("family must be a list of coefficient specs or a 'c_sweep'")
    # members beta - t (zeroth-order shift c -> c - t)
    base = cfg.coefficients()
    if "values" in sweep:
        ts = [float(t) for t in sweep["values"]]
    else:
        ts = np.linspace(float(sweep["t_min"]), float(sweep["t_max"]), int(sweep.get("count", 6)))
    return [(f"t={t:.6g}", base + coefficients.CoefficientSet(((0, 0), (0, 0)), c=-t)) for t in ts]


def cmd_verify_bound(cfg, out, plot):
    family = _family(cfg)
    f = cfg.field(cfg.data.get("f", "1"))
    mesh = cfg.meshes()[-1]
    try:
        res = analysis.verify_inverse_bound(cfg.domain, family, cfg.m, cfg.a, mesh, f,
                                            cap=float(cfg.data.get("cap", 1e3)))
    except analysis.AnalysisError as exc:
        raise NumericalFailure(str(exc)) from exc
    analysis.bound_csv(res, out / "bound.csv")
    for case, why in res.skipped:
        print(f"skipped case={case} reason=\"{why}\"", file=sys.stderr)
    if plot and len(res.reports) > 1:
        write_loglog(out / "bound.svg", {"Robs": ([r.rho for r in res.reports], [r.r_obs for r in res.reports])},
                     title="inverse bound", xlabel="rho_h", ylabel="R_obs")


COMMANDS = {
    "solve": cmd_solve,
    "coercivity": cmd_coercivity,
    "norms": cmd_norms,
    "converge": cmd_converge,
    "perturb": cmd_perturb,
    "verify-bound": cmd_verify_bound,
}


def build_parser():
    p = argparse.ArgumentParser(prog="cornerfem", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", help=", ".join(SUBCOMMANDS))
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    return p


def _fail(kind, reason, code):
    reason = " ".join(str(reason).split()).replace('"', "'")
    print(f'error kind={kind} reason="{reason}"', file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    if args.subcommand not in COMMANDS:
        return _fail("validation", f"unknown subcommand {args.subcommand}", 1)
    threads = args.threads
    if threads is None and os.environ.get(THREADS_ENV):
        threads = int(os.environ[THREADS_ENV])
    from threadpoolctl import threadpool_limits

    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(limits=threads):
            COMMANDS[args.subcommand](cfg, out, args.plot)
    except ConfigError as exc:
        return _fail("validation", exc, 1)
    except NumericalFailure as exc:
        return _fail("numerical", exc, 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
