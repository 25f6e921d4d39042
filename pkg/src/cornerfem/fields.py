"""Closed-form scalar fields with exact partial derivatives.

A field is evaluated through its *jet*: ``f.jet(x, y, order)`` returns a dict
mapping ``(i, j)`` to the values of ``d^i/dx^i d^j/dy^j f`` at the points,
for every ``i + j <= order``.  Sums and products of fields are fields again
(the product uses the Leibniz rule), so coefficients built from expressions
and from the vertex weight keep exact derivatives.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import sympy as sp
from scipy.special import comb

X, Y = sp.symbols("x y", real=True)
_DX, _DY = sp.symbols("dx dy", real=True)


def multi_indices(order):
    return [(i, k - i) for k in range(order + 1) for i in range(k, -1, -1)]


class FieldError(ValueError):
    pass


class Field:
    """Base class.  Subclasses implement :meth:`jet`."""

    #: declared blow-up exponent s: the field behaves like r_Omega^(-s) at vertices
    singular = 0
    max_order = 8

    def jet(self, x, y, order=0):
        raise NotImplementedError

    def __call__(self, x, y):
        return self.jet(np.asarray(x, float), np.asarray(y, float), 0)[(0, 0)]

    def d(self, i, j, x, y):
        return self.jet(np.asarray(x, float), np.asarray(y, float), i + j)[(i, j)]

    def __add__(self, other):
        return SumField([self, as_field(other)])

    __radd__ = __add__

    def __sub__(self, other):
        return SumField([self, -as_field(other)])

    def __rsub__(self, other):
        return SumField([as_field(other), -self])

    def __neg__(self):
        return ScaledField(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return ScaledField(self, other)
        return ProductField(self, as_field(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return ScaledField(self, 1.0 / other)
        return ProductField(self, InverseField(as_field(other)))

    def is_zero(self):
        return False


def as_field(v):
    if isinstance(v, Field):
        return v
    if np.isscalar(v):
        return ConstantField(v)
    raise FieldError(f"cannot turn {type(v).__name__} into a field")


class ConstantField(Field):
    def __init__(self, value):
        self.value = value

    def jet(self, x, y, order=0):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        out = {(0, 0): np.full(shape, self.value, dtype=complex if np.iscomplexobj(self.value) else float)}
        for a in multi_indices(order)[1:]:
            out[a] = np.zeros(shape)
        return out

    def is_zero(self):
        return self.value == 0

    def __repr__(self):
        return f"ConstantField({self.value!r})"


ZERO = ConstantField(0.0)


class ScaledField(Field):
    def __init__(self, f, s):
        self.f, self.s = f, s
        self.singular = f.singular

    def jet(self, x, y, order=0):
        return {k: self.s * v for k, v in self.f.jet(x, y, order).items()}

    def is_zero(self):
        return self.s == 0 or self.f.is_zero()


class SumField(Field):
    def __init__(self, terms):
        self.terms = [t for t in terms if not t.is_zero()] or [ZERO]
        self.singular = max(t.singular for t in self.terms)

    def jet(self, x, y, order=0):
        jets = [t.jet(x, y, order) for t in self.terms]
        return {a: sum(j[a] for j in jets) for a in jets[0]}

    def is_zero(self):
        return all(t.is_zero() for t in self.terms)


class ProductField(Field):
    def __init__(self, f, g):
        self.f, self.g = f, g
        self.singular = f.singular + g.singular

    def jet(self, x, y, order=0):
        jf = self.f.jet(x, y, order)
        jg = self.g.jet(x, y, order)
        out = {}
        for (i, j) in multi_indices(order):
            acc = 0
            for k in range(i + 1):
                for l in range(j + 1):
                    acc = acc + comb(i, k, exact=True) * comb(j, l, exact=True) * jf[(k, l)] * jg[(i - k, j - l)]
            out[(i, j)] = acc
        return out

    def is_zero(self):
        return self.f.is_zero() or self.g.is_zero()


class InverseField(Field):
    """1 / f, derivatives from differentiating f * (1/f) = 1."""

    def __init__(self, f):
        self.f = f
        self.singular = 0

    def jet(self, x, y, order=0):
        jf = self.f.jet(x, y, order)
        inv = 1.0 / jf[(0, 0)]
        out = {(0, 0): inv}
        for (i, j) in multi_indices(order)[1:]:
            acc = 0
            for k in range(i + 1):
                for l in range(j + 1):
                    if k == 0 and l == 0:
                        continue
                    acc = acc + comb(i, k, exact=True) * comb(j, l, exact=True) * jf[(k, l)] * out[(i - k, j - l)]
            out[(i, j)] = -inv * acc
        return out


def _lambdify_jet(expr, symbols, order, derivs=None, funcs=None):
    """Compile all partial derivatives of ``expr`` (w.r.t. the first two symbols).

    ``derivs``/``funcs`` from an earlier, lower-order call are extended in place.
    """
    a, b = symbols[:2]
    derivs = {(0, 0): expr} if derivs is None else derivs
    funcs = {} if funcs is None else funcs
    for (i, j) in multi_indices(order):
        if (i, j) in funcs:
            continue
        if (i, j) not in derivs:
            derivs[(i, j)] = sp.diff(derivs[(i, j - 1)], b) if j else sp.diff(derivs[(i - 1, j)], a)
        funcs[(i, j)] = sp.lambdify(symbols, derivs[(i, j)], modules="numpy", cse=True)
    return funcs


def _broadcast(v, shape):
    v = np.asarray(v)
    if v.shape != shape:
        v = np.broadcast_to(v, shape).copy()
    return v


class ExprField(Field):
    """A field given by a sympy expression in ``x`` and ``y``."""

    def __init__(self, expr, singular=0, text=None):
        self.expr = sp.sympify(expr)
        free = self.expr.free_symbols - {X, Y}
        if free:
            raise FieldError(f"unknown symbols {sorted(map(str, free))}")
        self.singular = int(singular)
        self.text = text if text is not None else str(self.expr)
        self._funcs = {}
        self._derivs = None
        self._order = -1
        self._complex = bool(self.expr.has(sp.I))

    def _compile(self, order):
        if order > self._order:
            if self._derivs is None:
                self._derivs = {(0, 0): self.expr}
            _lambdify_jet(self.expr, (X, Y), order, self._derivs, self._funcs)
            self._order = order

    def jet(self, x, y, order=0):
        self._compile(order)
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        shape = np.broadcast(x, y).shape
        with np.errstate(all="ignore"):
            return {a: _broadcast(self._funcs[a](x, y), shape) for a in multi_indices(order)}

    def is_zero(self):
        return self.expr == 0

    def __repr__(self):
        return f"ExprField({self.text!r})"


@lru_cache(maxsize=None)
def _radial_funcs(expr_key, order):
    expr = sp.sympify(expr_key)
    return _lambdify_jet(expr, (_DX, _DY), order)


class VertexField(Field):
    """Field defined through the offset to the nearest vertex.

    Within ``delta0`` of a vertex ``v`` the value is ``near(x - v)``; farther
    away it is the constant ``far``.  ``near`` is a sympy expression in
    ``dx``, ``dy``.  The vertex weight r_Omega and its powers are of this form.
    """

    def __init__(self, domain, near, far, singular=0):
        self.domain = domain
        self.near = sp.sympify(near)
        self.far = complex(far) if isinstance(far, complex) else float(far)
        self.singular = singular
        self._key = sp.srepr(self.near)

    def jet(self, x, y, order=0):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        shape = np.broadcast(x, y).shape
        px = np.broadcast_to(x, shape).ravel()
        py = np.broadcast_to(y, shape).ravel()
        verts = self.domain.vertices
        d2 = (px[:, None] - verts[None, :, 0]) ** 2 + (py[:, None] - verts[None, :, 1]) ** 2
        k = d2.argmin(axis=1)
        dist = np.sqrt(d2[np.arange(len(px)), k])
        near = dist < self.domain.delta0
        dx = px - verts[k, 0]
        dy = py - verts[k, 1]
        funcs = _radial_funcs(self._key, order)
        out = {}
        for a in multi_indices(order):
            val = np.zeros(len(px), dtype=complex if isinstance(self.far, complex) else float)
            if a == (0, 0):
                val[:] = self.far
            if near.any():
                with np.errstate(all="ignore"):
                    val[near] = _broadcast(funcs[a](dx[near], dy[near]), (int(near.sum()),))
            out[a] = val.reshape(shape)
        return out


_RHO = sp.sqrt(_DX ** 2 + _DY ** 2)


def weight_field(domain, power=1):
    """r_Omega ** power as a field."""
    power = sp.nsimplify(power) if isinstance(power, (int, float)) else power
    return VertexField(domain, _RHO ** power, domain.delta0 ** float(power),
                       singular=max(0, int(math.ceil(-float(power)))))


def weight_log_gradient(domain, j):
    """d_j r_Omega / r_Omega: (x_j - v_j) / |x - v|^2 near a vertex, zero elsewhere."""
    comp = _DX if j == 0 else _DY
    return VertexField(domain, comp / _RHO ** 2, 0.0, singular=1)


# -- expression grammar ----------------------------------------------------

_ALLOWED_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "log": sp.log, "sqrt": sp.sqrt}


class ExprContext:
    """Meaning of ``r`` and ``theta`` in coefficient expressions.

    ``r`` is the distance to ``center``; ``theta`` is the polar angle about
    ``center`` measured from the direction ``reference`` (radians), with the
    branch cut placed at ``theta_mid + pi`` so that angles in
    ``(theta_mid - pi, theta_mid + pi)`` are continuous.
    """

    def __init__(self, center=(0.0, 0.0), reference=0.0, theta_mid=math.pi):
        self.center = tuple(map(float, center))
        self.reference = float(reference)
        self.theta_mid = float(theta_mid)

    @classmethod
    def from_chart(cls, chart):
        ref = math.atan2(chart.reference[1], chart.reference[0])
        return cls(chart.origin, ref, 0.5 * (chart.theta_min + chart.theta_max))

    def symbols(self):
        cx, cy = (sp.nsimplify(c) for c in self.center)
        dx, dy = X - cx, Y - cy
        r = sp.sqrt(dx ** 2 + dy ** 2)
        phi = sp.nsimplify(self.reference + self.theta_mid)
        u = sp.cos(phi) * dx + sp.sin(phi) * dy
        v = -sp.sin(phi) * dx + sp.cos(phi) * dy
        theta = sp.nsimplify(self.theta_mid) + sp.atan2(v, u)
        return r, theta


def parse_expression(text, context=None):
    """Parse a coefficient expression into a sympy expression in x, y.

    Grammar: numbers, ``x``, ``y``, ``r``, ``theta``, ``pi``, ``I``, the
    operators ``+ - * / ^`` and parentheses, and the functions ``sin``,
    ``cos``, ``exp``, ``log`` and ``sqrt``.
    """
    from sympy.parsing.sympy_parser import (
        auto_number, convert_xor, factorial_notation, parse_expr,
    )

    context = context or ExprContext()
    r, theta = context.symbols()
    local = {"x": X, "y": Y, "r": r, "theta": theta, "pi": sp.pi, "I": sp.I, **_ALLOWED_FUNCS}
    transformations = (auto_number, factorial_notation, convert_xor)
    try:
        expr = parse_expr(str(text), local_dict=local, global_dict={"Integer": sp.Integer, "Float": sp.Float,
                                                                  "Rational": sp.Rational, "Symbol": _reject},
                          transformations=transformations, evaluate=True)
    except Exception as exc:
        raise FieldError(f"cannot parse expression {text!r}: {exc}") from exc
    if not isinstance(expr, sp.Expr):
        raise FieldError(f"not a scalar expression: {text!r}")
    bad = expr.free_symbols - {X, Y}
    if bad:
        raise FieldError(f"unknown symbols in {text!r}: {sorted(map(str, bad))}")
    for f in expr.atoms(sp.Function):
        if type(f) not in (sp.sin, sp.cos, sp.exp, sp.log, sp.atan2) and not isinstance(f, sp.Abs):
            raise FieldError(f"function {type(f).__name__} not in the grammar")
    return expr


def _reject(name, **kwargs):
    raise FieldError(f"unknown symbol {name!r}")


def expression_field(text, context=None, singular=0):
    return ExprField(parse_expression(text, context), singular=singular, text=str(text))


# -- the chart vector fields r d_r and d_theta ----------------------------

@lru_cache(maxsize=None)
def _chart_operator(i, j):
    """X^i Y^j u in Cartesian partials, X = r d_r and Y = d_theta about the origin.

    Returns ``[(coef_func(dx, dy), (a, b)), ...]`` so that
    ``X^i Y^j u = sum coef * d^a_x d^b_y u``.
    """
    U = sp.Function("U")(_DX, _DY)

    def Xop(e):
        return _DX * sp.diff(e, _DX) + _DY * sp.diff(e, _DY)

    def Yop(e):
        return -_DY * sp.diff(e, _DX) + _DX * sp.diff(e, _DY)

    e = U
    for _ in range(j):
        e = Yop(e)
    for _ in range(i):
        e = Xop(e)
    e = sp.expand(e)
    terms = []
    for a, b in multi_indices(i + j):
        if a == 0 and b == 0:
            d = U
        else:
            args = [(_DX, a)] if a else []
            args += [(_DY, b)] if b else []
            d = sp.Derivative(U, *args)
        coef = sp.simplify(e.coeff(d)) if d != U else sp.simplify(e.subs({dd: 0 for dd in e.atoms(sp.Derivative)}) / U)
        if coef != 0:
            terms.append((sp.lambdify((_DX, _DY), coef, "numpy"), (a, b)))
    return terms


def chart_derivative(jet, dx, dy, i, j):
    """Evaluate X^i Y^j u from the Cartesian jet of u at offsets (dx, dy)."""
    out = 0
    for coef, ab in _chart_operator(i, j):
        out = out + np.asarray(coef(dx, dy)) * jet[ab]
    return out
