"""Independent reference implementations used as test oracles.

Nothing here calls the package's covariance code: kernels are written out
by hand (1-D) or evaluated in extended precision with mpmath, and every
linear solve uses an explicit inverse.
"""

import itertools

import mpmath
import numpy as np

from gprc.gp import JITTER

mpmath.mp.dps = 40


# -- RBF derivatives by nested central differences ------------------------------


def rbf_mp(x, x2, amp2, prec):
    s = mpmath.mpf(0)
    for a, b, p in zip(x, x2, prec):
        s += mpmath.mpf(p) * (a - b) ** 2
    return mpmath.mpf(amp2) * mpmath.exp(-s / 2)


def fd_rbf_deriv(x, x2, amp2, prec, a, b, step=1e-3):
    """``d^a/dx^a d^b/dx2^b k`` by nested central differences in extended precision.

    Each derivative order applies one central difference with ``step``; the
    truncation error is ``O(step^2)`` per order.
    """
    x = [mpmath.mpf(float(v)) for v in x]
    x2 = [mpmath.mpf(float(v)) for v in x2]
    h = mpmath.mpf(step)
    # list of (argument, dimension) shifts, one per derivative order
    moves = [(0, d) for d, o in enumerate(a) for _ in range(o)]
    moves += [(1, d) for d, o in enumerate(b) for _ in range(o)]
    total = mpmath.mpf(0)
    for signs in itertools.product((1, -1), repeat=len(moves)):
        p = [list(x), list(x2)]
        for (arg, d), sgn in zip(moves, signs):
            p[arg][d] += sgn * h
        total += np.prod(signs) * rbf_mp(p[0], p[1], amp2, prec)
    return float(total / (2 * h) ** len(moves))


# -- hand-written 1-D kernel derivatives ------------------------------------------


def rbf_1d_derivs(s, amp2, g):
    """``d^n/ds^n amp2 exp(-g s^2 / 2)`` for ``n = 0..6``."""
    e = amp2 * np.exp(-0.5 * g * s**2)
    return [
        e,
        -g * s * e,
        (g**2 * s**2 - g) * e,
        (-(g**3) * s**3 + 3 * g**2 * s) * e,
        (g**4 * s**4 - 6 * g**3 * s**2 + 3 * g**2) * e,
        (-(g**5) * s**5 + 10 * g**4 * s**3 - 15 * g**3 * s) * e,
        (g**6 * s**6 - 15 * g**5 * s**4 + 45 * g**4 * s**2 - 15 * g**3) * e,
    ]


def k_ab(x, x2, amp2, g, a, b):
    """``d^a/dx^a d^b/dx'^b k`` in 1-D; ``d/dx' = -d/ds``."""
    s = np.subtract.outer(np.ravel(x), np.ravel(x2))
    return (-1.0) ** b * rbf_1d_derivs(s, amp2, g)[a + b]


def oscillator_blocks(X1, X2, amp2, g, theta):
    """``k_uu, k_ru, k_ur, k_rr`` of ``r = u'' + th1 u' + th2 u`` from the expansions."""
    t1, t2 = theta
    k = lambda a, b: k_ab(X1, X2, amp2, g, a, b)  # noqa: E731
    kuu = k(0, 0)
    kru = k(2, 0) + t1 * k(1, 0) + t2 * k(0, 0)
    kur = k(0, 2) + t1 * k(0, 1) + t2 * k(0, 0)
    krr = (k(2, 2) + t1**2 * k(1, 1) + t2**2 * k(0, 0)
           + t1 * (k(2, 1) + k(1, 2)) + t2 * (k(2, 0) + k(0, 2)) + t1 * t2 * (k(1, 0) + k(0, 1)))
    return kuu, kru, kur, krr


def oscillator_functional_cross(Xs, X, chi, amp2, g, theta, a):
    """Covariances of ``d^a u(Xs)`` with ``u(X)`` and with ``r(chi)``."""
    t1, t2 = theta
    ku = k_ab(Xs, X, amp2, g, a, 0)
    kr = k_ab(Xs, chi, amp2, g, a, 2) + t1 * k_ab(Xs, chi, amp2, g, a, 1) \
        + t2 * k_ab(Xs, chi, amp2, g, a, 0)
    return ku, kr


# -- dense GP oracles ---------------------------------------------------------------


def dense_joint(X, amp2, g, theta, s_u2, s_r2):
    kuu, kru, kur, krr = oscillator_blocks(X, X, amp2, g, theta)
    n = len(np.ravel(X))
    jit = JITTER * amp2
    return np.block([[kuu + (s_u2 + jit) * np.eye(n), kur],
                     [kru, krr + (s_r2 + jit) * np.eye(n)]])


def dense_nlml(X, y, amp2, g, theta, s_u2, s_r2):
    K = dense_joint(X, amp2, g, theta, s_u2, s_r2)
    Y = np.r_[y, np.zeros(len(y))]
    sign, logdet = np.linalg.slogdet(K)
    assert sign > 0
    return 0.5 * Y @ np.linalg.inv(K) @ Y + 0.5 * logdet + 0.5 * len(Y) * np.log(2 * np.pi)


def dense_gprc_predict(X, y, xs, chi, amp2, g, theta, s_u2, s_r2, a=0):
    """Posterior of ``d^a u(xs)`` given data and zero residuals at ``chi``."""
    X, chi = np.ravel(X), np.ravel(chi)
    kuu = k_ab(X, X, amp2, g, 0, 0)
    kur = oscillator_blocks(X, chi, amp2, g, theta)[2]
    krr = oscillator_blocks(chi, chi, amp2, g, theta)[3]
    jit = JITTER * amp2
    K = np.block([[kuu + (s_u2 + jit) * np.eye(len(X)), kur],
                  [kur.T, krr + (s_r2 + jit) * np.eye(len(chi))]])
    ku, kr = oscillator_functional_cross([xs], X, chi, amp2, g, theta, a)
    kstar = np.r_[ku.ravel(), kr.ravel()]
    Kinv = np.linalg.inv(K)
    Y = np.r_[y, np.zeros(len(chi))]
    kss = k_ab([xs], [xs], amp2, g, a, a)[0, 0]
    return kstar @ Kinv @ Y, kss - kstar @ Kinv @ kstar


def textbook_gpr(X, y, Xs, amp2, prec, s_u2, a=None):
    """Plain GP posterior mean/variance of ``u`` (any D) with an explicit inverse."""
    X = np.atleast_2d(X)
    Xs = np.atleast_2d(Xs)
    prec = np.asarray(prec, dtype=float)

    def k(A, B):
        d = A[:, None, :] - B[None, :, :]
        return amp2 * np.exp(-0.5 * np.sum(prec * d**2, axis=-1))

    K = k(X, X) + (s_u2 + JITTER * amp2) * np.eye(len(X))
    Ks = k(Xs, X)
    Kinv = np.linalg.inv(K)
    mean = Ks @ Kinv @ y
    var = amp2 - np.einsum("ij,jk,ik->i", Ks, Kinv, Ks)
    return mean, var


def deriv_scale(amp2, prec, n):
    """Natural magnitude ``amp2 * prec^(n/2) * sqrt(n!)`` of an order-``n`` RBF derivative.

    ``sqrt(n!)`` is the RMS of ``He_n`` under a standard normal weight; it
    keeps relative errors meaningful near zeros of the Hermite factor.
    """
    from math import factorial, sqrt

    return amp2 * np.prod(np.asarray(prec, dtype=float) ** (0.5 * np.asarray(n))) * \
        np.prod([sqrt(factorial(int(k))) for k in np.atleast_1d(n)])


def rel_err(value, reference, scale):
    return abs(value - reference) / max(abs(reference), scale)
