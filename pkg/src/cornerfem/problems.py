"""Bundled domains and exact solutions used by the studies and the CLI."""
from __future__ import annotations

import json
from importlib import resources

import sympy as sp

from .fields import ExprContext, ExprField
from .geometry import build_domain, chart, interior_angle

BUNDLED = ("square", "square-neumann", "square-artificial", "lshape", "lshape-mixed")


def domain_spec(name):
    text = resources.files("cornerfem.data").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def bundled_domain(name):
    if name not in BUNDLED:
        raise KeyError(f"no bundled domain {name!r}")
    return build_domain(domain_spec(name))


def smoothstep_cutoff(r, r0, r1):
    """C^3 cutoff: 1 for r < r0, 0 for r > r1."""
    s = (r - r0) / (r1 - r0)
    ramp = 1 - (35 * s ** 4 - 84 * s ** 5 + 70 * s ** 6 - 20 * s ** 7)
    return sp.Piecewise((1, r < r0), (ramp, r < r1), (0, True))


def edge_multiplier(domain, vertex):
    """Product of the line functions of all edges away from ``vertex``.

    Vanishes on those (straight) edges and equals 1 at the vertex.
    """
    from .fields import X, Y

    v = domain.vertices[vertex]
    inc, out = domain.edges_at(vertex)
    expr = sp.Integer(1)
    for i, e in enumerate(domain.edges):
        if i in (inc, out):
            continue
        if e.curve != "line":
            raise ValueError("edge multiplier needs straight edges")
        p, q = domain.vertices[e.start], domain.vertices[e.end]
        nx, ny = sp.nsimplify(q[1] - p[1]), sp.nsimplify(p[0] - q[0])
        line = nx * (X - sp.nsimplify(p[0])) + ny * (Y - sp.nsimplify(p[1]))
        at_v = line.subs({X: sp.nsimplify(v[0]), Y: sp.nsimplify(v[1])})
        if at_v == 0:
            raise ValueError("an edge line passes through the vertex")
        expr *= line / at_v
    return sp.expand(expr)


def corner_singular_solution(domain, vertex, cutoff="edges", r0=0.25, r1=0.75):
    """r^{pi/omega} sin(pi theta / omega) at ``vertex`` times a smooth cutoff.

    ``cutoff="edges"`` multiplies by :func:`edge_multiplier`;
    ``cutoff="radial"`` by a C^3 radial step from 1 (r < r0) to 0 (r > r1).
    Both vanish on the whole boundary.
    """
    omega = interior_angle(domain, vertex)
    lam = sp.nsimplify(sp.pi / sp.Float(omega, 30), [sp.pi], tolerance=1e-12)
    r, theta = ExprContext.from_chart(chart(domain, vertex)).symbols()
    if cutoff == "edges":
        chi = edge_multiplier(domain, vertex)
    elif cutoff == "radial":
        chi = smoothstep_cutoff(r, r0, r1)
    else:
        raise ValueError(f"unknown cutoff {cutoff!r}")
    expr = chi * r ** lam * sp.sin(lam * theta)
    return ExprField(expr, text=f"{cutoff} cutoff * r^{lam} sin({lam} theta)")


def singular_function(domain, vertex):
    """r^{pi/omega} sin(pi theta / omega) without cutoff."""
    omega = interior_angle(domain, vertex)
    lam = sp.nsimplify(sp.pi / sp.Float(omega, 30), [sp.pi], tolerance=1e-12)
    r, theta = ExprContext.from_chart(chart(domain, vertex)).symbols()
    return ExprField(r ** lam * sp.sin(lam * theta), text=f"r^{lam}*sin({lam}*theta)")
