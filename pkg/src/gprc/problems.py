"""Built-in problems, reference solvers and synthetic datasets.

Three setups are provided: a damped linear oscillator (closed form), the
Van der Pol oscillator (classical RK4) and the KdV equation (Fourier
integrating-factor RK4 on a periodic domain).
"""

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ArgumentError, SolverBlowupError
from .gp import ChiConfig, Dataset
from .operators import kdv_equation, oscillator_equation, vdp_equation


# -- damped oscillator ---------------------------------------------------------


def oscillator_solution(theta, u0, v0, t):
    """Closed-form solution of ``u'' + theta_1 u' + theta_2 u = 0``.

    Handles under-, critically- and over-damped regimes. Returns
    ``(u, u', u'')`` evaluated at ``t`` (scalar or array).
    """
    th1, th2 = float(theta[0]), float(theta[1])
    t = np.asarray(t, dtype=float)
    a = -0.5 * th1
    disc = 0.25 * th1**2 - th2
    scale = max(abs(th2), 0.25 * th1**2, 1e-300)
    if disc < -1e-14 * scale:
        w = np.sqrt(-disc)
        A, B = u0, (v0 - a * u0) / w
        out = []
        for _ in range(3):
            out.append(np.exp(a * t) * (A * np.cos(w * t) + B * np.sin(w * t)))
            A, B = a * A + w * B, a * B - w * A
    elif disc > 1e-14 * scale:
        s = np.sqrt(disc)
        r1, r2 = a + s, a - s
        C1 = (v0 - r2 * u0) / (r1 - r2)
        C2 = u0 - C1
        out = [C1 * r1**k * np.exp(r1 * t) + C2 * r2**k * np.exp(r2 * t) for k in range(3)]
    else:
        A, B = u0, v0 - a * u0
        out = []
        for _ in range(3):
            out.append(np.exp(a * t) * (A + B * t))
            A, B = a * A + B, a * B
    return tuple(out)


# -- RK4 -----------------------------------------------------------------------


def rk4_solve(f, y0, t_grid):
    """Classical fourth-order Runge-Kutta on the nodes of ``t_grid``.

    ``f(t, y)`` returns the state derivative. Returns an array of shape
    ``(len(t_grid), len(y0))``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ArgumentError("t_grid must be strictly increasing")
    y = np.array(y0, dtype=float).reshape(-1)
    out = np.empty((len(t_grid), len(y)))
    out[0] = y
    for i in range(len(t_grid) - 1):
        t, h = t_grid[i], t_grid[i + 1] - t_grid[i]
        k1 = np.asarray(f(t, y))
        k2 = np.asarray(f(t + 0.5 * h, y + 0.5 * h * k1))
        k3 = np.asarray(f(t + 0.5 * h, y + 0.5 * h * k2))
        k4 = np.asarray(f(t + h, y + h * k3))
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise SolverBlowupError("non-finite RK4 state", i + 1)
        out[i + 1] = y
    return out


def vdp_rhs(mu):
    def f(t, y):
        return np.array([y[1], mu * (1.0 - y[0] ** 2) * y[1] - y[0]])

    return f


def vdp_solution(mu, u0, v0, t, h=1e-3):
    """RK4 reference for ``u'' - mu (1 - u^2) u' + u = 0``; returns ``(u, u', u'')``.

    Requested times are inserted into a uniform step-``h`` grid from 0.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    T = float(t.max())
    grid = np.union1d(np.arange(0.0, T + h, h), t)
    grid = grid[grid <= max(T, 0.0) + 1e-15]
    grid = grid[np.r_[True, np.diff(grid) > 1e-12]]
    if grid[0] > 0:
        grid = np.r_[0.0, grid]
    sol = rk4_solve(vdp_rhs(mu), [u0, v0], grid) if len(grid) > 1 else np.array([[u0, v0]])
    u = np.interp(t, grid, sol[:, 0])
    du = np.interp(t, grid, sol[:, 1])
    ddu = mu * (1.0 - u**2) * du - u
    return u, du, ddu


# -- KdV -------------------------------------------------------------------------


def kdv_soliton(x, t, theta, c, x0, period=None):
    """Exact traveling soliton ``(3c/theta_1) sech^2(0.5 sqrt(c/theta_2)(x - x0 - c t))``."""
    xi = np.asarray(x, dtype=float) - x0 - c * np.asarray(t, dtype=float)
    if period is not None:
        xi = (xi + 0.5 * period) % period - 0.5 * period
    k = 0.5 * np.sqrt(c / theta[1])
    return 3.0 * c / theta[0] / np.cosh(k * xi) ** 2


class _Spectral:
    """Fourier integrating-factor RK4 stepper for ``u_t + a u u_x + b u_xxx = 0``."""

    def __init__(self, theta, x_grid):
        x_grid = np.asarray(x_grid, dtype=float)
        self.nx = len(x_grid)
        self.dx = x_grid[1] - x_grid[0]
        self.x0 = x_grid[0]
        self.period = self.nx * self.dx
        self.k = 2 * np.pi * np.fft.fftfreq(self.nx, d=self.dx)
        self.a, self.b = float(theta[0]), float(theta[1])
        self.lin = 1j * self.b * self.k**3
        kmax = np.abs(self.k).max()
        self.dealias = np.abs(self.k) < (2.0 / 3.0) * kmax

    def nonlinear(self, vhat):
        if self.a == 0.0:
            return np.zeros_like(vhat)
        u = np.fft.ifft(vhat).real
        return -0.5j * self.a * self.k * np.fft.fft(u * u) * self.dealias

    def max_dt(self, umax):
        kmax = np.abs(self.k).max()
        return min(0.01, 1.0 / (abs(self.a) * max(umax, 1e-12) * kmax + 1e-12))

    def advance(self, vhat, T, umax):
        """Advance by time ``T`` with equal sub-steps below the stability bound."""
        if T == 0:
            return vhat
        nsub = max(1, int(np.ceil(abs(T) / self.max_dt(umax))))
        dt = T / nsub
        E = np.exp(0.5 * dt * self.lin)
        E2 = E * E
        N = self.nonlinear
        for _ in range(nsub):
            a = dt * N(vhat)
            b = dt * N(E * (vhat + 0.5 * a))
            c = dt * N(E * vhat + 0.5 * b)
            d = dt * N(E2 * vhat + E * c)
            vhat = E2 * vhat + (E2 * a + 2 * E * (b + c) + d) / 6.0
        return vhat


def kdv_solve(theta, u0, x_grid, t_grid):
    """Solve ``u_t + theta_1 u u_x + theta_2 u_xxx = 0`` on a periodic grid.

    ``u0`` is a callable of ``x`` or an array on ``x_grid``. Snapshots are
    returned at every ``t_grid`` node as an ``(len(t_grid), len(x_grid))`` array.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    if theta[1] <= 0:
        raise ArgumentError("dispersion coefficient theta_2 must be positive")
    if np.any(np.diff(t_grid) <= 0):
        raise ArgumentError("t_grid must be strictly increasing")
    sp = _Spectral(theta, x_grid)
    u = np.asarray(u0(x_grid) if callable(u0) else u0, dtype=float)
    umax0 = np.abs(u).max()
    U = np.empty((len(t_grid), len(x_grid)))
    U[0] = u
    vhat = np.fft.fft(u)
    for i in range(1, len(t_grid)):
        vhat = sp.advance(vhat, t_grid[i] - t_grid[i - 1], umax0)
        u = np.fft.ifft(vhat).real
        if not np.all(np.isfinite(u)) or np.abs(u).max() > 10 * max(umax0, 1e-12):
            raise SolverBlowupError("KdV field blew up", i)
        U[i] = u
    return U


@dataclass
class KdvField:
    """Stored spectral KdV solution with exact evaluation at off-grid points."""

    theta: tuple
    x: np.ndarray
    t: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        self._sp = _Spectral(self.theta, self.x)
        self._umax = float(np.abs(self.U[0]).max())

    def _spectrum_at(self, t):
        i = int(np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 1))
        vhat = np.fft.fft(self.U[i])
        return self._sp.advance(vhat, t - self.t[i], self._umax)

    def derivatives(self, points, orders=(0, 1, 3)):
        """Spatial derivatives ``d^p u/dx^p`` at ``(x, t)`` points -> dict ``p -> values``."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        out = {p: np.empty(len(points)) for p in orders}
        k = self._sp.k
        for tv in np.unique(points[:, 1]):
            rows = np.flatnonzero(points[:, 1] == tv)
            vhat = self._spectrum_at(tv) / self._sp.nx
            phase = np.exp(1j * np.outer(points[rows, 0] - self.x[0], k))
            for p in orders:
                out[p][rows] = (phase @ ((1j * k) ** p * vhat)).real
        return out

    def __call__(self, points):
        return self.derivatives(points, (0,))[0]

    def time_derivative(self, points, delta=1e-3):
        """``u_t`` by central differences of re-solved fields at ``t -/+ delta``."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        hi = self(points + [0.0, delta])
        lo = self(points - [0.0, delta])
        return (hi - lo) / (2 * delta)

    def snapshot_points(self, xlim=None, tlim=None):
        """Grid nodes ``(x, t)`` (and values) inside an optional window."""
        xm = np.ones(len(self.x), bool) if xlim is None else (self.x >= xlim[0]) & (self.x <= xlim[1])
        tm = np.ones(len(self.t), bool) if tlim is None else (self.t >= tlim[0] - 1e-12) & (self.t <= tlim[1] + 1e-12)
        XX, TT = np.meshgrid(self.x[xm], self.t[tm])
        return np.column_stack([XX.ravel(), TT.ravel()]), self.U[np.ix_(tm, xm)].ravel()


# -- problem configuration -------------------------------------------------------


@dataclass(frozen=True)
class ProblemConfig:
    """Everything needed to reproduce one experimental setup."""

    name: str
    true_theta: tuple
    domain: tuple
    ic: tuple
    obs_n: int
    obs_kind: str
    noise_var: float
    sigma_r2: float
    chi_m: int
    chi_width: tuple
    alpha: float
    proposal_sd: tuple
    n_samples: int
    prior_lo: tuple
    prior_hi: tuple
    init: tuple
    colloc_n: tuple
    solver: dict = field(default_factory=dict)
    max_picard: int = 1
    train_noise: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.noise_var < 0:
            raise ArgumentError("noise_var must be nonnegative")
        if self.obs_kind not in ("grid", "random"):
            raise ArgumentError(f"unknown observation kind {self.obs_kind!r}")

    @property
    def dim(self):
        return len(self.domain)

    @property
    def chi(self):
        return ChiConfig(self.chi_m, self.chi_width)

    def as_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


# Two-soliton initial condition: (speed, initial centre) pairs on [-30, 30).
KDV_SOLITONS = ((2.0, -26.0), (0.75, -12.0))

_DEFAULTS = {
    "oscillator": dict(
        name="oscillator", true_theta=(1.0, 3.0), domain=((0.0, 10.0),), ic=(1.0, 0.0),
        obs_n=21, obs_kind="grid", noise_var=0.1, sigma_r2=10.0, chi_m=1, chi_width=(0.0,),
        alpha=100.0, proposal_sd=(0.6, 0.6), n_samples=5000, prior_lo=(0.0, 0.0),
        prior_hi=(5.0, 5.0), init=(2.5, 2.5), colloc_n=(200,), solver={},
    ),
    "vdp": dict(
        name="vdp", true_theta=(0.5,), domain=((0.0, 20.0),), ic=(2.0, 0.0),
        obs_n=41, obs_kind="grid", noise_var=0.01, sigma_r2=0.1, chi_m=10, chi_width=(1.0,),
        alpha=100.0, proposal_sd=(0.6,), n_samples=5000, prior_lo=(0.0,), prior_hi=(2.0,),
        init=(1.0,), colloc_n=(200,), solver={"h": 1e-3},
    ),
    "kdv": dict(
        name="kdv", true_theta=(6.0, 1.0), domain=((-21.0, 26.0), (15.0, 20.0)),
        ic=KDV_SOLITONS, obs_n=200, obs_kind="random", noise_var=0.1, sigma_r2=0.1,
        chi_m=1, chi_width=(0.0, 0.0), alpha=100.0, proposal_sd=(0.6, 0.6), n_samples=5000,
        prior_lo=(0.0, 0.0), prior_hi=(10.0, 3.0), init=(5.0, 1.5), colloc_n=(20, 20),
        solver={"nx": 512, "x_range": (-30.0, 30.0), "nt": 200, "t_end": 20.0},
    ),
}

_EQUATIONS = {"oscillator": oscillator_equation, "vdp": vdp_equation, "kdv": kdv_equation}


def builtin(name, **overrides):
    """Equation and default configuration of a built-in problem."""
    if name not in _DEFAULTS:
        raise ArgumentError(f"unknown problem {name!r}; choose from {sorted(_DEFAULTS)}")
    cfg = ProblemConfig(**_DEFAULTS[name])
    valid = {f.name for f in fields(ProblemConfig)}
    bad = set(overrides) - valid
    if bad:
        raise ArgumentError(f"unknown config fields {sorted(bad)}")
    tupled = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    return _EQUATIONS[name](), replace(cfg, **tupled)


def observation_points(cfg, seed=None):
    """Observation locations of the configured plan."""
    lo, hi = np.asarray(cfg.domain, dtype=float).T
    if cfg.obs_kind == "grid":
        if cfg.dim != 1:
            raise ArgumentError("grid observation plans are 1-D")
        return np.linspace(lo[0], hi[0], cfg.obs_n)[:, None]
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    if cfg.name == "kdv":
        # sample nodes of the stored space-time solution inside the window
        pts, _ = reference(cfg).snapshot_points(cfg.domain[0], cfg.domain[1])
        rows = np.sort(rng.choice(len(pts), size=cfg.obs_n, replace=False))
        return pts[rows]
    return lo + (hi - lo) * rng.random((cfg.obs_n, cfg.dim))


_KDV_CACHE = {}


def reference(cfg):
    """Clean reference solution of a problem as a callable on ``(N, D)`` points.

    The returned object also has ``derivatives(X) -> {multi-index: values}``.
    """
    theta = tuple(float(v) for v in cfg.true_theta)
    if cfg.name == "oscillator":
        return _OdeTruth(lambda t: oscillator_solution(theta, cfg.ic[0], cfg.ic[1], t))
    if cfg.name == "vdp":
        h = cfg.solver.get("h", 1e-3)
        return _OdeTruth(lambda t: vdp_solution(theta[0], cfg.ic[0], cfg.ic[1], t, h))
    if cfg.name == "kdv":
        s = cfg.solver
        key = (theta, tuple(map(tuple, cfg.ic)), s["nx"], tuple(s["x_range"]), s["nt"], s["t_end"])
        if key not in _KDV_CACHE:
            x = np.linspace(s["x_range"][0], s["x_range"][1], s["nx"], endpoint=False)
            t = np.linspace(0.0, s["t_end"], s["nt"] + 1)
            period = s["x_range"][1] - s["x_range"][0]

            def u0(xx):
                return sum(kdv_soliton(xx, 0.0, theta, c, x0, period) for c, x0 in cfg.ic)

            _KDV_CACHE[key] = KdvField(theta, x, t, kdv_solve(theta, u0, x, t))
        return _KdvTruth(_KDV_CACHE[key])
    raise ArgumentError(f"no reference solver for {cfg.name!r}")


class _OdeTruth:
    def __init__(self, fn):
        self.fn = fn

    def __call__(self, X):
        return self.fn(np.asarray(X, dtype=float).reshape(-1))[0]

    def derivatives(self, X):
        u, du, ddu = self.fn(np.asarray(X, dtype=float).reshape(-1))
        return {(0,): u, (1,): du, (2,): ddu}


class _KdvTruth:
    def __init__(self, fieldobj):
        self.field = fieldobj

    def __call__(self, X):
        return self.field(X)

    def derivatives(self, X):
        d = self.field.derivatives(X, (0, 1, 3))
        return {(0, 0): d[0], (1, 0): d[1], (3, 0): d[3], (0, 1): self.field.time_derivative(X)}

    def snapshot_points(self, xlim=None, tlim=None):
        return self.field.snapshot_points(xlim, tlim)


def make_dataset(field_fn, X, noise_var, seed, domain=None):
    """``y = u(X) + N(0, noise_var)`` noise, deterministic per seed."""
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    u = np.asarray(field_fn(X), dtype=float)
    rng = np.random.default_rng(seed)
    y = u + np.sqrt(noise_var) * rng.standard_normal(len(u)) if noise_var > 0 else u.copy()
    return Dataset(X, y, domain)


def simulate(cfg, seed=None):
    """Noisy dataset of a built-in problem (noise and random plan seeded by ``seed``)."""
    seed = cfg.seed if seed is None else seed
    X = observation_points(cfg, seed)
    return make_dataset(reference(cfg), X, cfg.noise_var, seed, np.asarray(cfg.domain))


def lattice(domain, counts):
    """Evenly spaced tensor grid over a box (``counts`` points per dimension)."""
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(domain, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def collocation_grid(cfg):
    return lattice(cfg.domain, cfg.colloc_n)
