"""Linear differential operators and parametric differential equations.

A derivative functional is identified by a multi-index: a tuple with one
non-negative derivative order per input dimension, so ``(0,)`` is ``u`` in
1-D and ``(3, 0)`` is ``u_xxx`` for coordinates ``("x", "t")``.

Operator coefficients are vectorized callables ``coeff(X, theta, frozen)``
taking an ``(N, D)`` array of points and returning ``N`` values. Frozen
fields map multi-indices to callables ``X -> (N,)`` (typically GP posterior
means), which lets a linearized operator be evaluated at any point.
"""

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ArgumentError, DimensionError, MissingFieldError, OrderError

MAX_ORDER = 3

Coeff = Callable[[np.ndarray, np.ndarray, Mapping], np.ndarray]


def as_index(orders, dim=None, max_order=MAX_ORDER):
    """Validate and normalize a multi-index to a tuple of ints."""
    idx = tuple(int(o) for o in np.atleast_1d(orders))
    if dim is not None and len(idx) != dim:
        raise DimensionError(f"multi-index {idx} has length {len(idx)}, expected {dim}")
    if len(idx) < 1 or any(o < 0 for o in idx):
        raise ArgumentError(f"invalid multi-index {idx}")
    if sum(idx) > max_order:
        raise OrderError(f"multi-index {idx} has total order {sum(idx)} > {max_order}")
    return idx


def zero_index(dim):
    return (0,) * dim


def unit_index(dim, axis, order=1):
    idx = [0] * dim
    idx[axis] = order
    return tuple(idx)


def label(index, coords=None):
    """Human-readable name of a derivative functional, e.g. ``u_xxx``."""
    if coords is None:
        coords = ("t",) if len(index) == 1 else tuple(f"x{d + 1}" for d in range(len(index)))
    suffix = "".join(c * o for c, o in zip(coords, index))
    return "u_" + suffix if suffix else "u"


def _points(X, dim):
    """Coerce a point or point set to an ``(N, dim)`` array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[:, None] if dim == 1 else X[None, :]
    if X.shape[-1] != dim:
        raise DimensionError(f"points have dimension {X.shape[-1]}, expected {dim}")
    return X


def _single(x, dim):
    return np.ndim(x) == 0 or (np.ndim(x) == 1 and dim > 1)


def constant(c):
    """Coefficient that is the constant ``c`` everywhere."""
    c = float(c)

    def coeff(X, theta, frozen):
        return np.full(len(X), c)

    coeff.constant = c
    return coeff


def theta_coeff(i, scale=1.0):
    """Coefficient ``scale * theta[i]``."""

    def coeff(X, theta, frozen):
        return np.full(len(X), scale * theta[i])

    return coeff


@dataclass(frozen=True)
class OperatorTerm:
    index: tuple
    coeff: Coeff

    def __post_init__(self):
        object.__setattr__(self, "index", as_index(self.index))


@dataclass(frozen=True)
class LinearOperator:
    """A sum of ``coeff(x) * d^index u`` terms over ``dim`` input dimensions."""

    terms: tuple
    dim: int

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ArgumentError("a linear operator needs at least one term")
        for t in terms:
            if len(t.index) != self.dim:
                raise DimensionError(
                    f"term index {t.index} does not match operator dimension {self.dim}"
                )
        object.__setattr__(self, "terms", terms)

    @property
    def indices(self):
        return [t.index for t in self.terms]

    @property
    def max_order(self):
        return max(sum(t.index) for t in self.terms)

    def coefficients(self, X, theta, frozen=None):
        """Evaluate every coefficient at points ``X`` -> list of ``(N,)`` arrays."""
        X = _points(X, self.dim)
        theta = np.asarray(theta, dtype=float)
        frozen = {} if frozen is None else frozen
        out = []
        for t in self.terms:
            c = np.asarray(t.coeff(X, theta, frozen), dtype=float)
            out.append(np.broadcast_to(c, (len(X),)))
        return out


def identity(dim):
    """The identity operator, ``L u = u``."""
    return LinearOperator((OperatorTerm(zero_index(dim), constant(1.0)),), dim)


def derivative(index):
    """The operator picking out a single derivative functional ``d^index u``."""
    index = as_index(index)
    return LinearOperator((OperatorTerm(index, constant(1.0)),), len(index))


@dataclass(frozen=True)
class EquationSpec:
    """A parametric differential equation ``F(x, u, d^a u, ...; theta) = 0``.

    ``residual(values, X, theta)`` is vectorized: ``values`` maps each
    multi-index in ``functionals`` to an ``(N,)`` array. ``linearize(theta,
    frozen)`` returns the Picard-frozen :class:`LinearOperator`;
    ``frozen_functionals`` lists what the linearizer reads from ``frozen``.
    """

    name: str
    param_dim: int
    dim: int
    functionals: tuple
    residual: Callable
    linearize: Callable
    is_linear: bool
    coords: tuple = None
    frozen_functionals: tuple = ()
    param_names: tuple = field(default=None)

    def __post_init__(self):
        object.__setattr__(
            self, "functionals", tuple(as_index(i, self.dim) for i in self.functionals)
        )
        if zero_index(self.dim) not in self.functionals:
            raise ArgumentError("derivative functionals must include u itself")
        if self.coords is None:
            object.__setattr__(self, "coords", ("t",) if self.dim == 1 else
                               tuple(f"x{d + 1}" for d in range(self.dim)))
        if self.param_names is None:
            object.__setattr__(
                self, "param_names", tuple(f"theta_{i + 1}" for i in range(self.param_dim))
            )

    def label(self, index):
        return label(index, self.coords)


def _check_values(values, indices, where):
    for idx in indices:
        if idx not in values:
            raise MissingFieldError(idx, where)


def eval_residual(eq, values, x, theta):
    """Evaluate the full (possibly nonlinear) residual ``F`` pointwise.

    Returns an ``(N,)`` array for ``N`` points, or a float for a single point.
    """
    _check_values(values, eq.functionals, f"residual of {eq.name}")
    X = _points(x, eq.dim)
    vals = {k: np.broadcast_to(np.asarray(v, dtype=float), (len(X),)) for k, v in values.items()}
    r = np.asarray(eq.residual(vals, X, np.asarray(theta, dtype=float)), dtype=float)
    if _single(x, eq.dim):
        return float(r.reshape(-1)[0])
    return r


def linearize_equation(eq, theta, frozen=None):
    """Picard-linearize ``eq`` at ``theta`` around the ``frozen`` fields."""
    frozen = {} if frozen is None else frozen
    if not eq.is_linear:
        _check_values(frozen, eq.frozen_functionals, f"frozen fields of {eq.name}")
    return eq.linearize(np.asarray(theta, dtype=float), frozen)


def apply_operator(L, values, x, theta, frozen=None):
    """Evaluate ``L u`` pointwise from tabulated derivative values of ``u``."""
    _check_values(values, L.indices, "operator application")
    X = _points(x, L.dim)
    coeffs = L.coefficients(X, theta, frozen)
    out = np.zeros(len(X))
    for t, c in zip(L.terms, coeffs):
        out = out + c * np.asarray(values[t.index], dtype=float)
    if _single(x, L.dim):
        return float(out.reshape(-1)[0])
    return out


# -- built-in equations -------------------------------------------------------


def oscillator_equation():
    """Damped linear oscillator ``u'' + theta_1 u' + theta_2 u = 0``."""
    u, du, ddu = (0,), (1,), (2,)

    def residual(v, X, theta):
        return v[ddu] + theta[0] * v[du] + theta[1] * v[u]

    def linearize(theta, frozen):
        return LinearOperator(
            (
                OperatorTerm(ddu, constant(1.0)),
                OperatorTerm(du, theta_coeff(0)),
                OperatorTerm(u, theta_coeff(1)),
            ),
            1,
        )

    return EquationSpec(
        "oscillator", 2, 1, (u, du, ddu), residual, linearize, True, ("t",),
        param_names=("theta_1", "theta_2"),
    )


def vdp_equation():
    """Van der Pol ``u'' - mu (1 - u^2) u' + u = 0``.

    The nonlinear product ``u^2 u'`` keeps ``u'`` and freezes ``u``.
    """
    u, du, ddu = (0,), (1,), (2,)

    def residual(v, X, theta):
        return v[ddu] - theta[0] * (1.0 - v[u] ** 2) * v[du] + v[u]

    def linearize(theta, frozen):
        mu = float(theta[0])
        u0 = frozen[u]

        def damping(X, th, fr):
            return -mu * (1.0 - np.asarray(u0(X)) ** 2)

        return LinearOperator(
            (
                OperatorTerm(ddu, constant(1.0)),
                OperatorTerm(du, damping),
                OperatorTerm(u, constant(1.0)),
            ),
            1,
        )

    return EquationSpec(
        "vdp", 1, 1, (u, du, ddu), residual, linearize, False, ("t",),
        frozen_functionals=(u,), param_names=("mu",),
    )


def kdv_equation():
    """KdV ``u_t + theta_1 u u_x + theta_2 u_xxx = 0`` on coordinates ``(x, t)``.

    The product ``u u_x`` keeps ``u_x`` and freezes ``u``.
    """
    u, ux, uxxx, ut = (0, 0), (1, 0), (3, 0), (0, 1)

    def residual(v, X, theta):
        return v[ut] + theta[0] * v[u] * v[ux] + theta[1] * v[uxxx]

    def linearize(theta, frozen):
        th1 = float(theta[0])
        u0 = frozen[u]

        def advection(X, th, fr):
            return th1 * np.asarray(u0(X))

        return LinearOperator(
            (
                OperatorTerm(ut, constant(1.0)),
                OperatorTerm(ux, advection),
                OperatorTerm(uxxx, theta_coeff(1)),
            ),
            2,
        )

    return EquationSpec(
        "kdv", 2, 2, (u, ux, uxxx, ut), residual, linearize, False, ("x", "t"),
        frozen_functionals=(u,), param_names=("theta_1", "theta_2"),
    )


# -- operators from configuration ----------------------------------------------


def polynomial_coeff(monomials):
    """Coefficient from a polynomial-in-theta-and-x descriptor.

    ``monomials`` is a number, one monomial or a list of ``{"c": float, "theta": [exps],
    "x": [exps]}`` entries; missing exponent lists mean all zeros.
    """
    if isinstance(monomials, (int, float)):
        return constant(monomials)
    if isinstance(monomials, dict):
        monomials = [monomials]
    terms = []
    for m in monomials:
        if isinstance(m, (int, float)):
            terms.append((float(m), None, None))
        elif not isinstance(m, dict) or set(m) - {"c", "theta", "x"}:
            raise ArgumentError(f"bad coefficient monomial {m!r}; expected {{c, theta, x}}")
        else:
            terms.append((
                float(m.get("c", 1.0)),
                None if m.get("theta") is None else np.asarray(m["theta"], dtype=float),
                None if m.get("x") is None else np.asarray(m["x"], dtype=float),
            ))

    def coeff(X, theta, frozen):
        out = np.zeros(len(X))
        for c, te, xe in terms:
            v = np.full(len(X), c)
            if te is not None:
                v = v * np.prod(np.asarray(theta, dtype=float)[: len(te)] ** te)
            if xe is not None:
                v = v * np.prod(X[:, : len(xe)] ** xe, axis=1)
            out = out + v
        return out

    return coeff


def linear_equation(name, terms, param_dim, dim, coords=None):
    """Build a linear :class:`EquationSpec` from ``[{"orders", "coeff"}, ...]``."""
    if not terms:
        raise ArgumentError("custom operator needs at least one term")
    op_terms = tuple(
        OperatorTerm(as_index(t["orders"], dim), polynomial_coeff(t.get("coeff", 1.0)))
        for t in terms
    )
    op = LinearOperator(op_terms, dim)
    functionals = [zero_index(dim)] + [t.index for t in op_terms if t.index != zero_index(dim)]
    functionals = tuple(dict.fromkeys(functionals))

    def residual(v, X, theta):
        return apply_operator(op, v, X, theta)

    def linearize(theta, frozen):
        return op

    return EquationSpec(name, param_dim, dim, functionals, residual, linearize, True, coords)
