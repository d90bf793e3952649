"""Closed-form scalar fields and one-forms with exact first derivatives.

Fields are sympy expressions over a fixed coordinate tuple, lambdified once
for vectorized evaluation.  The CLI accepts a small infix grammar over the
coordinates with ``sin, cos, exp, +, -, *, /, ^`` and numeric literals.
"""

from __future__ import annotations

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (
    parse_expr,
    standard_transformations,
    convert_xor,
    implicit_multiplication_application,
)

from .errors import ExpressionError

_ALLOWED_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "tan": sp.tan,
                  "sqrt": sp.sqrt, "log": sp.log}
_TRANSFORMS = standard_transformations + (convert_xor, implicit_multiplication_application)


def _as_batch(pts):
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        return pts[None, :], True
    return pts, False


class ScalarField:
    """A smooth function of the listed coordinates with an exact gradient.

    Parameters
    ----------
    expr : sympy expression or str or number
    coords : tuple of coordinate names, e.g. ``("q", "p", "z")``
    """

    def __init__(self, expr, coords):
        self.coords = tuple(coords)
        self.symbols = sp.symbols(self.coords)
        if isinstance(self.symbols, sp.Symbol):
            self.symbols = (self.symbols,)
        if isinstance(expr, str):
            expr = _parse(expr, self.coords)
        self.expr = sp.sympify(expr)
        bad = self.expr.free_symbols - set(self.symbols)
        if bad:
            raise ExpressionError(
                f"expression uses symbols {sorted(map(str, bad))} outside coordinates {self.coords}")
        self._val = sp.lambdify(self.symbols, self.expr, modules="numpy")
        self._grads = [sp.lambdify(self.symbols, sp.diff(self.expr, s), modules="numpy")
                       for s in self.symbols]

    # -- evaluation -------------------------------------------------------
    def __call__(self, pts):
        """Evaluate at ``pts`` of shape (d,) or (N, d); returns scalar or (N,)."""
        P, single = _as_batch(pts)
        out = np.broadcast_to(np.asarray(self._val(*P.T), dtype=float), (P.shape[0],)).copy()
        return float(out[0]) if single else out

    def gradient(self, pts):
        """Exact gradient at ``pts``; returns (d,) or (N, d)."""
        P, single = _as_batch(pts)
        cols = [np.broadcast_to(np.asarray(g(*P.T), dtype=float), (P.shape[0],))
                for g in self._grads]
        out = np.stack(cols, axis=-1)
        return out[0] if single else out

    # -- algebra ----------------------------------------------------------
    def _lift(self, other):
        if isinstance(other, ScalarField):
            if other.coords != self.coords:
                raise ExpressionError("cannot combine fields over different coordinates")
            return other.expr
        return sp.sympify(other)

    def __add__(self, other):
        return ScalarField(self.expr + self._lift(other), self.coords)

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.expr - self._lift(other), self.coords)

    def __rsub__(self, other):
        return ScalarField(self._lift(other) - self.expr, self.coords)

    def __mul__(self, other):
        return ScalarField(self.expr * self._lift(other), self.coords)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(-self.expr, self.coords)

    def __repr__(self):
        return f"ScalarField({self.expr}, coords={self.coords})"

    # -- self test --------------------------------------------------------
    def check_gradient(self, pts, step=1e-6, rel_tol=1e-7):
        """Compare the exact gradient against central differences.

        Returns the worst relative mismatch over the points; raises
        ``ExpressionError`` if it exceeds ``rel_tol``.
        """
        P, _ = _as_batch(pts)
        g = self.gradient(P)
        fd = np.empty_like(g)
        for j in range(P.shape[1]):
            e = np.zeros(P.shape[1])
            e[j] = step
            fd[:, j] = (self(P + e) - self(P - e)) / (2 * step)
        scale = np.maximum(np.abs(g), 1.0)
        worst = float(np.max(np.abs(g - fd) / scale))
        if worst > rel_tol:
            raise ExpressionError(
                f"gradient self-test failed: relative mismatch {worst:.3e} > {rel_tol:.1e}")
        return worst


class OneFormField:
    """A one-form with one coefficient per coordinate.

    Coefficients are :class:`ScalarField` instances (exact Jacobian) or bare
    callables ``pts -> (N,)`` (Jacobian falls back to fourth-order central
    differences with Richardson extrapolation, step 1e-4).
    """

    FD_STEP = 1e-4

    def __init__(self, coefficients, coords):
        self.coords = tuple(coords)
        self.coefficients = []
        for c in coefficients:
            if isinstance(c, (str, sp.Expr, int, float)):
                c = ScalarField(c, self.coords)
            self.coefficients.append(c)
        if len(self.coefficients) != len(self.coords):
            raise ExpressionError(
                f"need {len(self.coords)} coefficients, got {len(self.coefficients)}")

    def values(self, pts):
        """Coefficient row c with alpha = sum_i c_i dx_i; shape (d,) or (N, d)."""
        P, single = _as_batch(pts)
        out = np.stack([np.broadcast_to(np.asarray(c(P), dtype=float), (P.shape[0],))
                        for c in self.coefficients], axis=-1)
        return out[0] if single else out

    def jacobian(self, pts):
        """J[i, j] = d c_j / d x_i; shape (d, d) or (N, d, d)."""
        P, single = _as_batch(pts)
        d = len(self.coords)
        J = np.empty((P.shape[0], d, d))
        for j, c in enumerate(self.coefficients):
            if isinstance(c, ScalarField):
                J[:, :, j] = c.gradient(P)
            else:
                J[:, :, j] = _fd_gradient4(c, P, self.FD_STEP)
        return J[0] if single else J

    def exterior_derivative_matrix(self, pts):
        """Antisymmetric matrix M with (d alpha)(u, w) = u^T M w."""
        J = self.jacobian(pts)
        return J - np.swapaxes(J, -1, -2)


def _fd_gradient4(func, P, h):
    """Fourth-order central differences of ``func`` with one Richardson level."""
    d = P.shape[1]
    out = np.empty((P.shape[0], d))

    def central4(step, j):
        e = np.zeros(d)
        e[j] = step
        return (-func(P + 2 * e) + 8 * func(P + e)
                - 8 * func(P - e) + func(P - 2 * e)) / (12 * step)

    for j in range(d):
        c1 = central4(h, j)
        c2 = central4(h / 2, j)
        out[:, j] = (16 * c2 - c1) / 15
    return out


def _parse(text, coords):
    local = {name: sp.Symbol(name) for name in coords}
    local.update(_ALLOWED_FUNCS)
    local["pi"] = sp.pi
    numeric = {"Integer": sp.Integer, "Float": sp.Float, "Rational": sp.Rational,
               "Symbol": sp.Symbol}
    try:
        expr = parse_expr(text, local_dict=local, transformations=_TRANSFORMS,
                          global_dict=numeric, evaluate=True)
    except Exception as exc:
        raise ExpressionError(f"cannot parse expression {text!r}: {exc}") from exc
    return expr


def parse_scalar_field(text, coords):
    """Parse the CLI infix grammar into a :class:`ScalarField`."""
    return ScalarField(_parse(text, coords), coords)


def parse_oneform_field(text, coords):
    """Parse ``expr;expr;...`` (one coefficient per coordinate) into a one-form."""
    parts = [p.strip() for p in text.split(";")]
    if len(parts) != len(coords):
        raise ExpressionError(
            f"one-form needs {len(coords)} coefficients separated by ';', got {len(parts)}")
    return OneFormField([_parse(p, coords) for p in parts], coords)
