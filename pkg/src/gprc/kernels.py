"""RBF kernel, its analytic partial derivatives, and operator-induced covariances.

The kernel is ``k(x, x') = amp2 * exp(-0.5 * sum_d prec_d (x_d - x'_d)^2)``.
With ``s = x_d - x'_d`` and ``tau = sqrt(prec_d) s`` each dimension
contributes ``exp(-tau^2 / 2)``, whose ``n``-th derivative in ``s`` is
``(-sqrt(prec_d))^n He_n(tau) exp(-tau^2 / 2)`` (probabilists' Hermite
polynomials). Differentiating the second argument flips the sign of ``s``, so

    d^a/dx_d^a d^b/dx'_d^b  ->  (-1)^a prec_d^{(a+b)/2} He_{a+b}(tau) exp(-tau^2/2).

The first-argument convention gives ``dk/dx = -k * prec * (x - x')``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DimensionError, OrderError
from .operators import MAX_ORDER, LinearOperator, OperatorTerm, as_index, constant, identity


@dataclass(frozen=True)
class KernelHyper:
    """RBF hyperparameters, stored as logarithms."""

    log_amp2: float
    log_prec: tuple

    def __post_init__(self):
        object.__setattr__(self, "log_amp2", float(self.log_amp2))
        object.__setattr__(self, "log_prec", tuple(float(v) for v in np.atleast_1d(self.log_prec)))
        if not np.all(np.isfinite(self.vector)):
            raise ArgumentError("kernel hyperparameters must be finite")

    @classmethod
    def from_values(cls, amp2, prec):
        prec = np.atleast_1d(np.asarray(prec, dtype=float))
        if amp2 <= 0 or np.any(prec <= 0):
            raise ArgumentError(f"amp2 and prec must be positive, got {amp2}, {prec}")
        return cls(np.log(amp2), tuple(np.log(prec)))

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v[0], tuple(v[1:]))

    @property
    def dim(self):
        return len(self.log_prec)

    @property
    def amp2(self):
        return float(np.exp(self.log_amp2))

    @property
    def prec(self):
        return np.exp(np.asarray(self.log_prec))

    @property
    def vector(self):
        return np.r_[self.log_amp2, self.log_prec]

    @property
    def names(self):
        return ["amp2"] + [f"prec{d}" for d in range(self.dim)]


def _hermite_table(tau, nmax):
    """``He_0 .. He_nmax`` evaluated elementwise at ``tau``."""
    H = [np.ones_like(tau)]
    if nmax >= 1:
        H.append(tau.copy())
    for n in range(1, nmax):
        H.append(tau * H[n] - n * H[n - 1])
    return H


def _eval_coeffs(L, P, theta, frozen):
    shape = P.shape[:-1]
    flat = P.reshape(-1, P.shape[-1])
    return [c.reshape(shape) for c in L.coefficients(flat, theta, frozen)]


def _pair_index(i, j):
    return tuple(a + b for a, b in zip(i, j))


def cov(L1, L2, P1, P2, h, theta=(), frozen=None, grad=False):
    """Covariance ``L1_x L2_x' k(x, x')`` for broadcastable point arrays.

    ``P1`` and ``P2`` have shapes ``(..., D)`` that broadcast against each
    other; the result has the broadcast shape without the trailing axis.
    With ``grad=True`` a list of derivatives with respect to each
    log-hyperparameter (``log amp2`` then ``log prec_d``) is returned as well.
    Identity may be passed as ``None``.
    """
    P1 = np.asarray(P1, dtype=float)
    P2 = np.asarray(P2, dtype=float)
    D = h.dim
    if P1.shape[-1] != D or P2.shape[-1] != D:
        raise DimensionError(
            f"points of dimension {P1.shape[-1]}/{P2.shape[-1]} for a {D}-D kernel"
        )
    L1 = identity(D) if L1 is None else L1
    L2 = identity(D) if L2 is None else L2
    if L1.dim != D or L2.dim != D:
        raise DimensionError("operator dimension does not match the kernel")
    for t1 in L1.terms:
        for t2 in L2.terms:
            if sum(t1.index) + sum(t2.index) > 2 * MAX_ORDER:
                raise OrderError(
                    f"derivative orders {t1.index}+{t2.index} exceed 2*MAX_ORDER={2 * MAX_ORDER}"
                )

    prec = h.prec
    diff = P1 - P2
    tau = diff * np.sqrt(prec)
    base = h.amp2 * np.exp(-0.5 * np.sum(tau**2, axis=-1))
    nmax = [max(t1.index[d] + t2.index[d] for t1 in L1.terms for t2 in L2.terms) for d in range(D)]
    H = [_hermite_table(tau[..., d], nmax[d] + (1 if grad else 0)) for d in range(D)]

    c1 = _eval_coeffs(L1, P1, theta, frozen)
    c2 = _eval_coeffs(L2, P2, theta, frozen)

    def factor(d, a, n):
        return (-1.0) ** a * prec[d] ** (0.5 * n) * H[d][n]

    def factor_grad(d, a, n):
        t = tau[..., d]
        Hn = H[d][n]
        Hm = H[d][n - 1] if n >= 1 else 0.0
        return (-1.0) ** a * prec[d] ** (0.5 * n) * (0.5 * n * (Hn + t * Hm) - 0.5 * t**2 * Hn)

    out = 0.0
    grads = [0.0] * (D + 1) if grad else None
    for t1, w1 in zip(L1.terms, c1):
        for t2, w2 in zip(L2.terms, c2):
            n = _pair_index(t1.index, t2.index)
            w = w1 * w2
            if not np.any(w):
                continue
            fac = [factor(d, t1.index[d], n[d]) for d in range(D)]
            term = w * np.prod(np.stack(np.broadcast_arrays(*fac)), axis=0)
            out = out + term
            if grad:
                for d in range(D):
                    others = [fac[e] for e in range(D) if e != d]
                    g = factor_grad(d, t1.index[d], n[d])
                    if others:
                        g = g * np.prod(np.stack(np.broadcast_arrays(*others)), axis=0)
                    grads[d + 1] = grads[d + 1] + w * g
    shape = np.broadcast_shapes(P1.shape[:-1], P2.shape[:-1])
    out = np.broadcast_to(out * base, shape) if np.ndim(out) == 0 else out * base
    if not grad:
        return np.array(out, dtype=float)
    grads[0] = np.array(out, dtype=float)
    grads[1:] = [np.broadcast_to(g * base, shape).copy() for g in grads[1:]]
    return np.array(out, dtype=float), grads


def _point(x, D):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (D,):
        raise DimensionError(f"point {x} does not have dimension {D}")
    return x


def rbf(x, x2, h):
    """Kernel value between two points."""
    return float(cov(None, None, _point(x, h.dim), _point(x2, h.dim), h))


def rbf_deriv(x, x2, h, a, b):
    """``d^a/dx^a d^b/dx2^b k(x, x2)`` in closed form."""
    a = as_index(a, h.dim)
    b = as_index(b, h.dim)
    La = LinearOperator((OperatorTerm(a, constant(1.0)),), h.dim)
    Lb = LinearOperator((OperatorTerm(b, constant(1.0)),), h.dim)
    x, x2 = _point(x, h.dim), _point(x2, h.dim)
    return float(cov(La, Lb, x, x2, h))


def op_kernel(L1, L2, x, x2, h, theta=(), frozen=None):
    """``L1_x L2_x2 k(x, x2)``; ``None`` stands for the identity operator."""
    return float(cov(L1, L2, _point(x, h.dim), _point(x2, h.dim), h, theta, frozen))


def gram(L1, L2, X1, X2, h, theta=(), frozen=None):
    """Matrix of :func:`op_kernel` over all pairs ``(X1[i], X2[j])``."""
    X1 = np.asarray(X1, dtype=float).reshape(-1, h.dim)
    X2 = np.asarray(X2, dtype=float).reshape(-1, h.dim)
    return cov(L1, L2, X1[:, None, :], X2[None, :, :], h, theta, frozen)


def hyper_position(which, h):
    """Map a hyperparameter id (``"amp2"``, ``"prec<d>"`` or int) to its slot."""
    if isinstance(which, (int, np.integer)) and 0 <= which <= h.dim:
        return int(which)
    if which == "amp2":
        return 0
    if which == "prec" and h.dim == 1:
        return 1
    if isinstance(which, str) and which.startswith("prec"):
        try:
            d = int(which[4:])
        except ValueError:
            d = -1
        if 0 <= d < h.dim:
            return d + 1
    raise ArgumentError(f"unknown hyperparameter id {which!r}")


def gram_grad(L1, L2, X1, X2, h, theta=(), frozen=None, which="amp2"):
    """Elementwise derivative of :func:`gram` w.r.t. one log-hyperparameter."""
    pos = hyper_position(which, h)
    X1 = np.asarray(X1, dtype=float).reshape(-1, h.dim)
    X2 = np.asarray(X2, dtype=float).reshape(-1, h.dim)
    _, grads = cov(L1, L2, X1[:, None, :], X2[None, :, :], h, theta, frozen, grad=True)
    return grads[pos]
