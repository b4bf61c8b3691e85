"""Potentials, posteriors and a random-walk Metropolis-Hastings sampler over theta."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, GprcError, GridError, MissingFieldError
from .gp import ChiConfig, NoiseConfig, OptimizerConfig
from .linearization import PicardConfig, initial_guess, picard_solve
from .operators import eval_residual, zero_index

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Prior:
    """Uniform prior on a box."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
            raise ArgumentError(f"prior box needs lo < hi, got {lo}, {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, theta):
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lo) and np.all(theta <= self.hi))

    @property
    def center(self):
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))


@dataclass(frozen=True)
class MhConfig:
    n_samples: int
    proposal_sd: tuple
    alpha: float = 100.0
    seed: int = 0
    init: tuple = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ArgumentError("n_samples must be >= 1")
        if np.any(np.asarray(self.proposal_sd, dtype=float) <= 0):
            raise ArgumentError("proposal standard deviations must be positive")
        if self.alpha <= 0:
            raise ArgumentError("alpha must be positive")


@dataclass
class Chain:
    """MH output. ``potentials`` is ``-log_post / alpha`` for each sample."""

    samples: np.ndarray
    log_post: np.ndarray
    accepted_steps: np.ndarray
    seed: int
    alpha: float = 1.0
    truncated: bool = False
    error: str = None

    @property
    def accepted(self):
        return int(self.accepted_steps.sum())

    @property
    def potentials(self):
        return -self.log_post / self.alpha

    @property
    def acceptance_rate(self):
        return self.accepted / max(len(self.samples) - 1, 1)

    def __len__(self):
        return len(self.samples)


# -- potentials ---------------------------------------------------------------


def _rows_match(a, b):
    return a.shape == b.shape and np.allclose(a, b, rtol=0, atol=1e-12)


def _residual_at(theta, est, eq, rows, colloc):
    values = {}
    for k in eq.functionals:
        if k not in est.mean:
            raise MissingFieldError(k, "field estimate")
        values[k] = np.asarray(est.mean[k])[rows]
    return eval_residual(eq, values, colloc, theta)


def potential_terms(theta, data, est, eq, colloc):
    """Data misfit ``0.5 |y - u(X)|^2`` and equation misfit ``0.5 mean F^2``.

    ``est`` must be evaluated on ``[data.X; colloc]`` in that order.
    """
    colloc = np.asarray(colloc, dtype=float).reshape(-1, data.dim)
    n = data.n
    if len(est.grid) != n + len(colloc) or not _rows_match(est.grid[:n], data.X) \
            or not _rows_match(est.grid[n:], colloc):
        raise GridError("estimate grid must be the data locations followed by the collocation points")
    u0 = zero_index(data.dim)
    if u0 not in est.mean:
        raise MissingFieldError(u0, "field estimate")
    misfit = data.y - np.asarray(est.mean[u0])[:n]
    r = _residual_at(theta, est, eq, slice(n, None), colloc)
    return 0.5 * float(misfit @ misfit), 0.5 * float(np.mean(r**2))


def potential(theta, data, est, eq, colloc):
    """Combined data + equation potential (equal weights)."""
    d, e = potential_terms(theta, data, est, eq, colloc)
    return d + e


def two_stage_potential(theta, est0, eq, colloc):
    """Mean squared residual with a fixed, theta-independent field estimate."""
    colloc = np.asarray(colloc, dtype=float).reshape(len(est0.grid), -1)
    if not _rows_match(est0.grid, colloc):
        raise GridError("two-stage estimate must live on the collocation grid")
    r = _residual_at(theta, est0, eq, slice(None), colloc)
    return float(np.mean(r**2))


# -- posteriors -----------------------------------------------------------------


class TwoStagePosterior:
    """``-alpha * eta(theta)`` with the reduced potential of a fixed GPR fit."""

    def __init__(self, data, eq, prior, alpha=100.0, colloc=None, noise=None, opt=None, est0=None):
        from .linearization import default_eval_grid

        self.data, self.eq, self.prior, self.alpha = data, eq, prior, float(alpha)
        self.colloc = default_eval_grid(data.domain) if colloc is None else np.asarray(colloc, float)
        self.colloc = self.colloc.reshape(-1, data.dim)
        self.est0 = est0 if est0 is not None else initial_guess(data, eq, opt, self.colloc, noise=noise)

    def potential(self, theta):
        return two_stage_potential(theta, self.est0, self.eq, self.colloc)

    def __call__(self, theta):
        return log_posterior(theta, self)


class GprcPosterior:
    """``-alpha * eta(theta)`` with a GPRC field re-estimated at every theta.

    Hyperparameters are warm-started from the previous evaluation; with
    ``refit_every=k`` they are retrained only on every k-th evaluation.
    """

    def __init__(self, data, eq, prior, alpha=100.0, colloc=None, noise=None, chi=None,
                 picard=None, opt=None, refit_every=1, guess=None):
        from .linearization import default_eval_grid

        self.data, self.eq, self.prior, self.alpha = data, eq, prior, float(alpha)
        self.colloc = default_eval_grid(data.domain) if colloc is None else np.asarray(colloc, float)
        self.colloc = self.colloc.reshape(-1, data.dim)
        self.noise = NoiseConfig() if noise is None else noise
        self.chi = ChiConfig() if chi is None else chi
        picard = PicardConfig() if picard is None else picard
        self.picard = PicardConfig(picard.max_iters, picard.eps_rmse, self.colloc)
        self.opt = OptimizerConfig() if opt is None else opt
        self.refit_every = max(1, int(refit_every))
        self.guess = guess if guess is not None else initial_guess(
            data, eq, self.opt, self.colloc, noise=self.noise)
        self.model = None
        self.calls = 0
        self.failures = 0

    def estimate(self, theta):
        refit = self.calls % self.refit_every == 0
        est = picard_solve(
            self.data, self.eq, theta, self.picard, self.chi, self.opt, self.noise,
            guess=self.guess, start=self.model, refit=refit, points=self.data.X,
        )
        self.calls += 1
        self.model = est.model
        return est

    def potential(self, theta):
        est = self.estimate(theta)
        return potential(theta, self.data, est, self.eq, self.colloc)

    def __call__(self, theta):
        return log_posterior(theta, self)


def log_posterior(theta, context):
    """``-alpha * eta(theta)`` inside the prior box, ``-inf`` outside.

    Numerical failures of the GP pipeline reject the proposal.
    """
    theta = np.asarray(theta, dtype=float)
    if not context.prior.contains(theta):
        return -math.inf
    try:
        eta = context.potential(theta)
    except (GprcError, np.linalg.LinAlgError, FloatingPointError) as exc:
        if hasattr(context, "failures"):
            context.failures += 1
        log.warning("potential failed at theta=%s: %s", theta, exc)
        return -math.inf
    if not np.isfinite(eta):
        return -math.inf
    return -context.alpha * eta


# -- sampling ---------------------------------------------------------------------


def mh_sample(target, cfg, progress=None):
    """Random-walk Metropolis-Hastings with Gaussian proposals.

    ``target(theta)`` returns the log posterior up to a constant. The chain
    starts at ``cfg.init`` (its first sample) and has exactly
    ``cfg.n_samples`` rows; rejected proposals repeat the current state. An
    unexpected exception in ``target`` stops sampling and returns the partial
    chain flagged ``truncated``.
    """
    theta = np.asarray(cfg.init, dtype=float).reshape(-1)
    sd = np.broadcast_to(np.asarray(cfg.proposal_sd, dtype=float), theta.shape)
    lp = target(theta)
    if not np.isfinite(lp):
        raise ArgumentError(f"initial state {theta} is outside the posterior support")
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_samples
    samples = np.empty((n, len(theta)))
    log_post = np.empty(n)
    acc = np.zeros(n, dtype=bool)
    samples[0], log_post[0] = theta, lp
    for i in range(1, n):
        prop = theta + sd * rng.standard_normal(len(theta))
        u = rng.random()
        try:
            lp_new = target(prop)
        except Exception as exc:  # noqa: BLE001 - keep what we have
            log.error("sampling stopped at step %d: %s", i, exc)
            return Chain(samples[:i], log_post[:i], acc[:i], cfg.seed, cfg.alpha, True, str(exc))
        if np.isfinite(lp_new) and (lp_new >= lp or u < math.exp(lp_new - lp)):
            theta, lp = prop, lp_new
            acc[i] = True
        samples[i], log_post[i] = theta, lp
        if progress is not None:
            progress(i, theta, lp)
    return Chain(samples, log_post, acc, cfg.seed, cfg.alpha)


def chain_stats(chain, burn_in=None, bins=30, ranges=None):
    """Posterior mean/std/histogram per dimension after discarding ``burn_in``.

    ``burn_in=None`` drops the first 20 % of the chain. ``ranges`` is a list
    of ``(lo, hi)`` per dimension for the fixed histogram binning (defaults
    to the sample range).
    """
    n = len(chain.samples)
    burn_in = int(0.2 * n) if burn_in is None else int(burn_in)
    if not 0 <= burn_in < n:
        raise ArgumentError(f"burn_in must be in [0, {n})")
    kept = chain.samples[burn_in:]
    hist = []
    for d in range(kept.shape[1]):
        rng_d = None if ranges is None else tuple(ranges[d])
        if rng_d is None:
            lo, hi = float(kept[:, d].min()), float(kept[:, d].max())
            rng_d = (lo, hi) if hi > lo else (lo - 0.5, hi + 0.5)
        counts, edges = np.histogram(kept[:, d], bins=bins, range=rng_d)
        hist.append({"edges": edges.tolist(), "counts": counts.tolist()})
    return {
        "mean": kept.mean(axis=0).tolist(),
        "std": kept.std(axis=0).tolist(),
        "n_used": int(len(kept)),
        "burn_in": burn_in,
        "acceptance_rate": chain.acceptance_rate,
        "histograms": hist,
    }


# -- experiment wiring --------------------------------------------------------------


def build_posterior(eq, cfg, data, method="gprc", refit_every=1, opt=None, colloc=None):
    """Posterior of a configured problem (see :func:`gprc.problems.builtin`).

    ``method`` is ``"gprc"`` or ``"two-stage"``. The observation noise
    variance starts at ``cfg.noise_var`` and is trained only when
    ``cfg.train_noise`` is set.
    """
    from .problems import collocation_grid

    colloc = collocation_grid(cfg) if colloc is None else colloc
    prior = Prior(cfg.prior_lo, cfg.prior_hi)
    noise = NoiseConfig(cfg.noise_var, cfg.sigma_r2, cfg.train_noise)
    if method == "two-stage":
        return TwoStagePosterior(data, eq, prior, cfg.alpha, colloc, noise, opt)
    if method != "gprc":
        raise ArgumentError(f"unknown method {method!r}; choose gprc or two-stage")
    return GprcPosterior(data, eq, prior, cfg.alpha, colloc, noise, cfg.chi,
                         PicardConfig(cfg.max_picard), opt, refit_every)


def run_chain(target, cfg, seed, progress=None):
    """MH chain of ``cfg.n_samples`` from ``cfg.init`` (prior centre if unset)."""
    init = target.prior.center if cfg.init is None else cfg.init
    mh = MhConfig(cfg.n_samples, cfg.proposal_sd, cfg.alpha, seed, tuple(np.ravel(init)))
    return mh_sample(target, mh, progress)
