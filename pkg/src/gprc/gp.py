"""Joint Gaussian process over a solution ``u`` and its equation residual ``r = L u``.

Training maximizes the marginal likelihood of ``Y = [y; 0]`` under

    K = [[K_uu + s_u I, K_ur], [K_ru, K_rr + s_r I]]

evaluated at the ``n`` observation points (the residual is observed to be
zero wherever the equation holds). Prediction conditions on the noisy data
and on zero residual at an extended set of ``m`` points around each test
location. A model with ``op=None`` is plain GP regression.
"""

import functools
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import ArgumentError, GridError, IllConditionedError, TrainingError
from .kernels import KernelHyper, cov
from .operators import derivative, identity, zero_index

log = logging.getLogger(__name__)

JITTER = 1e-8
VAR_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Dataset:
    """Noisy observations ``y`` at rows of ``X`` inside a box ``domain``."""

    X: np.ndarray
    y: np.ndarray
    domain: np.ndarray = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if len(y) < 1 or X.shape[0] != len(y):
            raise ArgumentError(f"need n >= 1 matching rows, got X {X.shape}, y {y.shape}")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
            raise ArgumentError("observations must be finite")
        if self.domain is None:
            domain = np.column_stack([X.min(axis=0), X.max(axis=0)])
        else:
            domain = np.asarray(self.domain, dtype=float).reshape(X.shape[1], 2)
        if np.any(X < domain[:, 0] - 1e-12) or np.any(X > domain[:, 1] + 1e-12):
            raise ArgumentError("observation locations outside the domain")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "domain", domain)

    @property
    def n(self):
        return len(self.y)

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def extent(self):
        return np.maximum(self.domain[:, 1] - self.domain[:, 0], 1e-12)


@dataclass(frozen=True)
class NoiseConfig:
    sigma_u2: float = 0.1
    sigma_r2: float = 1.0
    train_sigma_u2: bool = True

    def __post_init__(self):
        if self.sigma_u2 < 0 or self.sigma_r2 < 0:
            raise ArgumentError("noise variances must be nonnegative")


@dataclass(frozen=True)
class ChiConfig:
    """Extended set: ``m`` evenly spaced points over ``x* -/+ width``."""

    m: int = 1
    width: object = 0.0

    def __post_init__(self):
        if self.m < 0:
            raise ArgumentError("chi size m must be >= 0")
        if np.any(np.asarray(self.width, dtype=float) < 0):
            raise ArgumentError("chi half-width must be >= 0")


@dataclass(frozen=True)
class OptimizerConfig:
    max_iter: int = 200
    gtol: float = 1e-5
    restarts: int = 3
    seed: int = 0


class Prediction(NamedTuple):
    mean: float
    var: float


@dataclass
class FieldEstimate:
    """Posterior means/variances of derivative functionals on a grid.

    ``mean`` and ``var`` map multi-indices to arrays aligned with ``grid``.
    ``fields`` optionally holds callables usable as frozen fields.
    """

    grid: np.ndarray
    mean: dict
    var: dict
    fields: dict = field(default_factory=dict)
    model: object = None
    iterations: int = 0
    metric: float = float("nan")
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        for k, v in [*self.mean.items(), *self.var.items()]:
            if len(v) != len(self.grid):
                raise GridError(f"functional {k} has {len(v)} values for {len(self.grid)} grid points")

    def subset(self, rows):
        return FieldEstimate(
            self.grid[rows],
            {k: v[rows] for k, v in self.mean.items()},
            {k: v[rows] for k, v in self.var.items()},
            self.fields, self.model, self.iterations, self.metric, list(self.history),
        )


@dataclass(frozen=True, eq=False)
class GprcModel:
    """Data, operator, hyperparameters and noise of one joint GP.

    Immutable: use :func:`dataclasses.replace` (or :meth:`with_params`) to
    change hyperparameters; factorizations are cached per instance.
    """

    data: Dataset
    op: object
    hyper: KernelHyper
    noise: NoiseConfig
    theta: tuple = ()
    frozen: dict = None

    @property
    def constrained(self):
        return self.op is not None

    @property
    def params(self):
        """Trainable log-hyperparameters."""
        v = self.hyper.vector
        if self.noise.train_sigma_u2:
            v = np.r_[v, np.log(max(self.noise.sigma_u2, 1e-300))]
        return v

    @property
    def param_names(self):
        names = self.hyper.names
        return names + ["sigma_u2"] if self.noise.train_sigma_u2 else names

    def with_params(self, v):
        v = np.asarray(v, dtype=float)
        D = self.hyper.dim
        hyper = KernelHyper.from_vector(v[: D + 1])
        noise = self.noise
        if noise.train_sigma_u2:
            noise = replace(noise, sigma_u2=float(np.exp(v[D + 1])))
        return replace(self, hyper=hyper, noise=noise)

    def _kw(self):
        return dict(h=self.hyper, theta=self.theta, frozen=self.frozen)

    @functools.cached_property
    def _joint(self):
        return _assemble(self, grad=True)

    @functools.cached_property
    def _factor(self):
        K = self._joint[0]
        return _cholesky(K), K

    @functools.cached_property
    def _data_factor(self):
        """Cholesky of the data block ``K_uu + s_u I``, used for prediction."""
        X = self.data.X
        A = cov(None, None, X[:, None], X[None], self.hyper)
        A[np.diag_indices_from(A)] += self.noise.sigma_u2 + JITTER * self.hyper.amp2
        return _cholesky(A)


def _cholesky(K):
    try:
        return scipy.linalg.cholesky(K, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        try:
            pivot = float(np.min(np.linalg.eigvalsh(K)))
        except np.linalg.LinAlgError:
            pivot = float("nan")
        raise IllConditionedError("covariance factorization failed", pivot) from None


def _assemble(m, grad=False):
    """Joint covariance and its derivatives w.r.t. the trainable parameters."""
    X = m.data.X
    n = len(X)
    P1, P2 = X[:, None], X[None]
    kw = m._kw()
    Kuu, gu = cov(None, None, P1, P2, grad=True, **kw)
    if m.constrained:
        Kur, gur = cov(None, m.op, P1, P2, grad=True, **kw)
        Krr, grr = cov(m.op, m.op, P1, P2, grad=True, **kw)
        K = np.block([[Kuu, Kur], [Kur.T, Krr]])
        dK = [np.block([[a, b], [b.T, c]]) for a, b, c in zip(gu, gur, grr)]
    else:
        K = Kuu
        dK = list(gu)
    N = K.shape[0]
    jit = JITTER * m.hyper.amp2
    idx = np.arange(N)
    K[idx[:n], idx[:n]] += m.noise.sigma_u2
    if m.constrained:
        K[idx[n:], idx[n:]] += m.noise.sigma_r2
    K[idx, idx] += jit
    dK[0] = dK[0].copy()
    dK[0][idx, idx] += jit
    if m.noise.train_sigma_u2:
        dS = np.zeros((N, N))
        dS[idx[:n], idx[:n]] = m.noise.sigma_u2
        dK.append(dS)
    return K, dK


def _targets(m):
    y = m.data.y
    return np.r_[y, np.zeros(len(y))] if m.constrained else y.copy()


def joint_matrix(m):
    """The (2n x 2n) joint covariance (n x n for plain GPR), jitter included."""
    return m._joint[0].copy()


def nlml(m):
    """Negative log marginal likelihood of ``[y; 0]``."""
    Lc, _ = m._factor
    Y = _targets(m)
    a = scipy.linalg.solve_triangular(Lc, Y, lower=True)
    N = len(Y)
    return float(np.sum(np.log(np.diag(Lc))) + 0.5 * a @ a + 0.5 * N * math.log(2 * math.pi))


def nlml_grad(m):
    """Gradient of :func:`nlml` over ``m.params`` (log-space)."""
    Lc, _ = m._factor
    dK = m._joint[1]
    Y = _targets(m)
    Kinv = scipy.linalg.cho_solve((Lc, True), np.eye(len(Y)))
    alpha = Kinv @ Y
    W = Kinv - np.outer(alpha, alpha)
    return np.array([0.5 * np.sum(W * d) for d in dK])


def _bounds(m):
    y = m.data.y
    scale = max(float(np.mean(y**2)), 1e-8)
    ext = m.data.extent
    b = [(np.log(scale) - 12, np.log(scale) + 12)]
    b += [(-2 * np.log(1e2 * e), -2 * np.log(1e-3 * e)) for e in ext]
    if m.noise.train_sigma_u2:
        b.append((np.log(scale) - 20, np.log(scale) + 3))
    return b


def _objective(m):
    def f(v):
        cand = m.with_params(v)
        try:
            val = nlml(cand)
            g = nlml_grad(cand)
        except IllConditionedError:
            return 1e25, np.zeros_like(v)
        if not np.isfinite(val) or not np.all(np.isfinite(g)):
            return 1e25, np.zeros_like(v)
        return val, g

    return f


def initial_params(m, rng):
    """A random restart point: log-uniform length-scales over extent x [0.05, 0.5]."""
    y = m.data.y
    ell = m.data.extent * np.exp(rng.uniform(np.log(0.05), np.log(0.5), size=m.data.dim))
    v = np.r_[np.log(max(float(np.mean(y**2)), 1e-8)), -2 * np.log(ell)]
    if m.noise.train_sigma_u2:
        s = m.noise.sigma_u2 if m.noise.sigma_u2 > 0 else 0.01 * max(float(np.var(y)), 1e-8)
        v = np.r_[v, np.log(s)]
    return v


def train(m, opt=None, warm_start=False):
    """Fit hyperparameters by L-BFGS-B on the NLML.

    The current parameters are always one starting point; unless
    ``warm_start`` is set, ``opt.restarts`` random starts are added. The best
    local optimum (never worse than the start) is returned.
    """
    opt = OptimizerConfig() if opt is None else opt
    rng = np.random.default_rng(opt.seed)
    if m.noise.train_sigma_u2 and m.noise.sigma_u2 <= 0:
        m = replace(m, noise=replace(m.noise, sigma_u2=0.01 * max(float(np.var(m.data.y)), 1e-8)))
    f = _objective(m)
    bounds = _bounds(m)
    starts = [np.clip(m.params, [b[0] for b in bounds], [b[1] for b in bounds])]
    if not warm_start:
        starts += [initial_params(m, rng) for _ in range(opt.restarts)]

    best_v, best_f = None, np.inf
    try:
        f0 = nlml(m)
        best_v, best_f = m.params, f0
    except IllConditionedError:
        pass
    if opt.max_iter <= 0:
        if best_v is None:
            raise TrainingError("initial hyperparameters are not factorizable")
        return m
    for v0 in starts:
        res = scipy.optimize.minimize(
            f, v0, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": opt.max_iter, "gtol": opt.gtol},
        )
        if res.fun < best_f and res.fun < 1e24:
            best_v, best_f = res.x, float(res.fun)
    if best_v is None:
        raise TrainingError("hyperparameter training failed from every start")
    return m.with_params(best_v)


def extended_set(x_star, cfg, domain=None):
    """``cfg.m`` evenly spaced points on ``x* - w .. x* + w`` (clipped to domain)."""
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    if cfg.m == 0:
        return np.empty((0, len(x_star)))
    w = np.broadcast_to(np.asarray(cfg.width, dtype=float), x_star.shape)
    s = np.linspace(-1.0, 1.0, cfg.m) if cfg.m > 1 else np.zeros(1)
    pts = x_star[None, :] + s[:, None] * w[None, :]
    if domain is not None:
        domain = np.asarray(domain, dtype=float)
        pts = np.clip(pts, domain[:, 0], domain[:, 1])
    return pts


def _chi_points(Xs, cfg, domain):
    """Extended sets for every test point -> (N, m, D)."""
    if cfg.m == 0:
        return np.empty((len(Xs), 0, Xs.shape[1]))
    w = np.broadcast_to(np.asarray(cfg.width, dtype=float), (Xs.shape[1],))
    s = np.linspace(-1.0, 1.0, cfg.m) if cfg.m > 1 else np.zeros(1)
    pts = Xs[:, None, :] + s[None, :, None] * w[None, None, :]
    if domain is not None:
        pts = np.clip(pts, domain[:, 0], domain[:, 1])
    return pts


def _functional_op(dim, a):
    return identity(dim) if a is None or tuple(a) == zero_index(dim) else derivative(a)


def _check_var(var, scale):
    tol = VAR_TOL * np.maximum(1.0, scale)
    if np.any(var < -tol):
        i = int(np.argmin(var))
        raise IllConditionedError(f"negative posterior variance {var[i]:.3e}")
    return np.maximum(var, 0.0)


def predict_many(m, Xs, functionals, cfg=None, domain=None):
    """Posterior means and variances of several functionals at many points.

    Each test point gets its own extended set; the data block factorization
    is shared and the per-point residual block enters through its Schur
    complement. Returns ``(means, variances)`` dicts keyed by multi-index.
    """
    cfg = ChiConfig(0) if cfg is None or not m.constrained else cfg
    D = m.data.dim
    Xs = np.asarray(Xs, dtype=float).reshape(-1, D)
    domain = m.data.domain if domain is None else domain
    X, y = m.data.X, m.data.y
    n, N = len(X), len(Xs)
    kw = m._kw()
    Lc = m._data_factor
    beta = scipy.linalg.solve_triangular(Lc, y, lower=True)
    chi = _chi_points(Xs, cfg, domain)
    mm = chi.shape[1]
    jit = JITTER * m.hyper.amp2
    if mm:
        B = cov(None, m.op, X[:, None], chi.reshape(-1, D)[None], **kw).reshape(n, N, mm)
        C = cov(m.op, m.op, chi[:, :, None, :], chi[:, None, :, :], **kw)
        C = C + (m.noise.sigma_r2 + jit) * np.eye(mm)
        W = scipy.linalg.solve_triangular(Lc, B.reshape(n, N * mm), lower=True).reshape(n, N, mm)
        S = C - np.einsum("inj,ink->njk", W, W)
        Wb = np.einsum("inj,i->nj", W, beta)
        try:
            q = -np.linalg.solve(S, Wb[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise IllConditionedError("singular residual Schur complement") from None

    means, variances = {}, {}
    for a in functionals:
        key = zero_index(D) if a is None else tuple(a)
        La = _functional_op(D, key)
        ku = cov(La, None, Xs[:, None], X[None], **kw)
        kll = cov(La, La, Xs, Xs, **kw)
        wu = scipy.linalg.solve_triangular(Lc, ku.T, lower=True)
        mean = wu.T @ beta
        var = kll - np.sum(wu**2, axis=0)
        if mm:
            kr = cov(La, m.op, Xs[:, None, :], chi, **kw)
            g = kr - np.einsum("inj,in->nj", W, wu)
            mean = mean + np.sum(g * q, axis=1)
            var = var - np.sum(g * np.linalg.solve(S, g[..., None])[..., 0], axis=1)
        means[key] = mean
        variances[key] = _check_var(var, np.abs(kll))
    return means, variances


def predict(m, x_star, functional=None, cfg=None):
    """Posterior mean and variance of ``d^functional u`` at one point."""
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    key = zero_index(m.data.dim) if functional is None else tuple(functional)
    means, variances = predict_many(m, x_star[None], [key], cfg)
    return Prediction(float(means[key][0]), float(variances[key][0]))


def mean_function(m, functional=None, cfg=None):
    """Callable ``X -> posterior mean`` of a functional, usable as a frozen field."""
    key = zero_index(m.data.dim) if functional is None else tuple(functional)
    cache = OrderedDict()

    def f(X):
        # frozen coefficients are re-evaluated at the same points on every pass
        X = np.ascontiguousarray(X, dtype=float)
        tag = (X.shape, X.tobytes())
        if tag in cache:
            cache.move_to_end(tag)
            return cache[tag]
        out = predict_many(m, X, [key], cfg)[0][key]
        out.setflags(write=False)
        cache[tag] = out
        if len(cache) > 32:
            cache.popitem(last=False)
        return out

    return f


def predict_field(m, grid, functionals, cfg=None):
    """Apply :func:`predict` at every grid point for every functional."""
    grid = np.asarray(grid, dtype=float).reshape(-1, m.data.dim)
    functionals = [zero_index(m.data.dim) if a is None else tuple(a) for a in functionals]
    means, variances = predict_many(m, grid, functionals, cfg)
    fields = {k: mean_function(m, k, cfg) for k in functionals}
    return FieldEstimate(grid, means, variances, fields=fields, model=m)


def default_hyper(data):
    """Data-scaled starting hyperparameters (length-scale = 0.2 x extent)."""
    amp2 = max(float(np.mean(data.y**2)), 1e-8)
    return KernelHyper.from_values(amp2, 1.0 / (0.2 * data.extent) ** 2)
